//! Horn-Schunck optical flow and the flow-direction angle loss.
//!
//! For a frame pair `(a, b)` the spatial derivatives are taken on the mean
//! frame `m = (a + b) / 2` with replicated borders and `Y_t = b - a`. The
//! solver minimizes
//!
//! ```text
//! E(u, v) = Σ_p (Y_x u + Y_y v + Y_t)²
//!         + λ²/2 · Σ_p Σ_j w_j [(u_p - u_{p+o_j})² + (v_p - v_{p+o_j})²]
//! ```
//!
//! where `w_j` is the 3×3 averaging kernel (1/6 on edges, 1/12 on corners)
//! and out-of-range neighbours are clamped to the border. Each Jacobi sweep
//! solves the per-pixel 2×2 system with the neighbour average held fixed,
//! which never increases `E`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{CoreError, FieldFrame, FlowField, Result, SampleSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    #[default]
    Central,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSolverParams {
    pub lambda: f64,
    pub n_iterations: usize,
    pub derivative_scheme: DerivativeScheme,
}

impl Default for FlowSolverParams {
    fn default() -> Self {
        Self { lambda: 1.0, n_iterations: 100, derivative_scheme: DerivativeScheme::Central }
    }
}

impl FlowSolverParams {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(CoreError::Invalid(format!("lambda must be finite and positive, got {}", self.lambda)));
        }
        if self.n_iterations == 0 {
            return Err(CoreError::Invalid("n_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Horn-Schunck smoothing spreads a faint flow far beyond the moving crack
/// front; below this magnitude (pixels per step) a direction is mostly noise.
pub const DEFAULT_MAGNITUDE_FLOOR: f64 = 5e-2;

/// The eight neighbour offsets and their weights in the averaging kernel.
const KERNEL: [(isize, isize, f64); 8] = [
    (-1, 0, 1.0 / 6.0),
    (1, 0, 1.0 / 6.0),
    (0, -1, 1.0 / 6.0),
    (0, 1, 1.0 / 6.0),
    (-1, -1, 1.0 / 12.0),
    (-1, 1, 1.0 / 12.0),
    (1, -1, 1.0 / 12.0),
    (1, 1, 1.0 / 12.0),
];

/// A sparse linear map on flattened `H×W` planes, kept as rows of
/// `(column, weight)` so that its transpose is a scatter.
struct Stencil<const K: usize> {
    rows: Vec<[(usize, f64); K]>,
}

impl<const K: usize> Stencil<K> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, w)| w * x[j]).sum();
        }
    }

    fn apply_t_add(&self, g: &[f64], out: &mut [f64]) {
        for (gi, row) in g.iter().zip(&self.rows) {
            for &(j, w) in row {
                out[j] += w * gi;
            }
        }
    }
}

fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn averaging(h: usize, w: usize) -> Stencil<8> {
    let mut rows = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut row = [(0, 0.0); 8];
            for (k, &(dy, dx, wt)) in KERNEL.iter().enumerate() {
                row[k] = (clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w), wt);
            }
            rows.push(row);
        }
    }
    Stencil { rows }
}

/// Same map as [`averaging`] without the index tables. The clamped weight
/// matrix is symmetric, so this is also its own transpose.
fn average(x: &[f64], out: &mut [f64], h: usize, w: usize) {
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let (rm, r0, rp) = (&x[ym * w..ym * w + w], &x[y * w..y * w + w], &x[yp * w..yp * w + w]);
        let o = &mut out[y * w..y * w + w];
        let at = |i: usize, im: usize, ip: usize| (rm[i] + rp[i] + r0[im] + r0[ip]) / 6.0 + (rm[im] + rm[ip] + rp[im] + rp[ip]) / 12.0;
        o[0] = at(0, 0, 1.min(w - 1));
        for i in 1..w.saturating_sub(1) {
            o[i] = at(i, i - 1, i + 1);
        }
        if w > 1 {
            o[w - 1] = at(w - 1, w - 2, w - 1);
        }
    }
}

fn derivative(h: usize, w: usize, scheme: DerivativeScheme, along_x: bool) -> Stencil<2> {
    let mut rows = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let at = |dy: isize, dx: isize| clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w);
            let (dy, dx) = if along_x { (0, 1) } else { (1, 0) };
            rows.push(match scheme {
                DerivativeScheme::Central => [(at(dy, dx), 0.5), (at(-dy, -dx), -0.5)],
                DerivativeScheme::Forward => [(at(dy, dx), 1.0), (at(0, 0), -1.0)],
            });
        }
    }
    Stencil { rows }
}

struct Problem {
    h: usize,
    w: usize,
    dx: Stencil<2>,
    dy: Stencil<2>,
    yx: Vec<f64>,
    yy: Vec<f64>,
    yt: Vec<f64>,
    lambda2: f64,
}

impl Problem {
    fn new(a: ArrayView2<f64>, b: ArrayView2<f64>, params: &FlowSolverParams) -> Result<Self> {
        params.validate()?;
        if a.dim() != b.dim() {
            return Err(CoreError::Shape(format!("frame pair dims differ: {:?} vs {:?}", a.dim(), b.dim())));
        }
        let (h, w) = a.dim();
        if h == 0 || w == 0 {
            return Err(CoreError::Shape("empty frame".into()));
        }
        let mean: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| 0.5 * (x + y)).collect();
        let yt: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| y - x).collect();
        let dx = derivative(h, w, params.derivative_scheme, true);
        let dy = derivative(h, w, params.derivative_scheme, false);
        let mut yx = vec![0.0; h * w];
        let mut yy = vec![0.0; h * w];
        dx.apply(&mean, &mut yx);
        dy.apply(&mean, &mut yy);
        Ok(Self { h, w, dx, dy, yx, yy, yt, lambda2: params.lambda * params.lambda })
    }

    /// One Jacobi sweep from `(u, v)`; writes the averages used into `(ub, vb)`.
    fn sweep(&self, u: &mut [f64], v: &mut [f64], ub: &mut [f64], vb: &mut [f64]) {
        average(u, ub, self.h, self.w);
        average(v, vb, self.h, self.w);
        for p in 0..u.len() {
            let (gx, gy) = (self.yx[p], self.yy[p]);
            let s = (gx * ub[p] + gy * vb[p] + self.yt[p]) / (self.lambda2 + gx * gx + gy * gy);
            u[p] = ub[p] - gx * s;
            v[p] = vb[p] - gy * s;
        }
    }

    fn solve(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let len = self.h * self.w;
        let (mut u, mut v) = (vec![0.0; len], vec![0.0; len]);
        let (mut ub, mut vb) = (vec![0.0; len], vec![0.0; len]);
        for _ in 0..n {
            self.sweep(&mut u, &mut v, &mut ub, &mut vb);
        }
        (u, v)
    }

    fn objective(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut data = 0.0;
        let mut smooth = 0.0;
        let avg = averaging(self.h, self.w);
        for p in 0..u.len() {
            data += (self.yx[p] * u[p] + self.yy[p] * v[p] + self.yt[p]).powi(2);
            for &(q, wt) in &avg.rows[p] {
                smooth += wt * ((u[p] - u[q]).powi(2) + (v[p] - v[q]).powi(2));
            }
        }
        data + 0.5 * self.lambda2 * smooth
    }

    fn to_field(&self, u: Vec<f64>, v: Vec<f64>) -> FlowField {
        let u = Array2::from_shape_vec((self.h, self.w), u).expect("plane length");
        let v = Array2::from_shape_vec((self.h, self.w), v).expect("plane length");
        FlowField { u, v }
    }
}

/// Flow of `b` relative to `a` on single-channel planes.
pub fn estimate_flow_planes(a: ArrayView2<f64>, b: ArrayView2<f64>, params: &FlowSolverParams) -> Result<FlowField> {
    let pr = Problem::new(a, b, params)?;
    let (u, v) = pr.solve(params.n_iterations);
    Ok(pr.to_field(u, v))
}

pub fn estimate_flow(a: &FieldFrame, b: &FieldFrame, params: &FlowSolverParams) -> Result<FlowField> {
    estimate_flow_planes(a.plane()?, b.plane()?, params)
}

/// The solver's objective `E(u, v)` for the pair `(a, b)`. `n_iterations`
/// is ignored.
pub fn objective(a: ArrayView2<f64>, b: ArrayView2<f64>, flow: &FlowField, params: &FlowSolverParams) -> Result<f64> {
    let pr = Problem::new(a, b, &FlowSolverParams { n_iterations: 1, ..*params })?;
    if flow.dims() != (pr.h, pr.w) {
        return Err(CoreError::Shape(format!("flow dims {:?} vs frame dims {:?}", flow.dims(), (pr.h, pr.w))));
    }
    let u: Vec<f64> = flow.u.iter().copied().collect();
    let v: Vec<f64> = flow.v.iter().copied().collect();
    Ok(pr.objective(&u, &v))
}

fn cosine(u1: f64, v1: f64, u2: f64, v2: f64) -> f64 {
    // a single sqrt of the product makes identical vectors give exactly 1
    let n = ((u1 * u1 + v1 * v1) * (u2 * u2 + v2 * v2)).sqrt();
    ((u1 * u2 + v1 * v2) / n).clamp(-1.0, 1.0)
}

fn angle_loss_slices(pu: &[f64], pv: &[f64], ou: &[f64], ov: &[f64], floor: f64, mask: Option<&[bool]>) -> f64 {
    let mut total = 0.0;
    for p in 0..pu.len() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        if pu[p].hypot(pv[p]) < floor || ou[p].hypot(ov[p]) < floor {
            continue;
        }
        total += cosine(pu[p], pv[p], ou[p], ov[p]).acos().powi(2);
    }
    total
}

/// `Σ arccos(r)²` over pixels where both vectors reach `magnitude_floor`.
pub fn flow_angle_loss(flow_pred: &FlowField, flow_obs: &FlowField, magnitude_floor: f64) -> Result<f64> {
    if flow_pred.dims() != flow_obs.dims() {
        return Err(CoreError::Shape(format!("flow dims differ: {:?} vs {:?}", flow_pred.dims(), flow_obs.dims())));
    }
    if !(magnitude_floor > 0.0) {
        return Err(CoreError::Invalid(format!("magnitude_floor must be positive, got {magnitude_floor}")));
    }
    let s = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
    Ok(angle_loss_slices(&s(&flow_pred.u), &s(&flow_pred.v), &s(&flow_obs.u), &s(&flow_obs.v), magnitude_floor, None))
}

/// Mean over consecutive pairs of the angle loss between predicted and
/// observed flows.
pub fn optical_flow_regularizer(pred_seq: &SampleSequence, obs_seq: &SampleSequence, params: &FlowSolverParams, magnitude_floor: f64) -> Result<f64> {
    let (pred, obs) = (pred_seq.planes()?, obs_seq.planes()?);
    let obs_flows = observed_flows(&obs, params)?;
    regularizer_with_grad(&pred, &obs_flows, params, magnitude_floor, None).map(|(v, _)| v)
}

/// Flows of the consecutive pairs of `planes`; the constant branch of the
/// regularizer.
pub fn observed_flows(planes: &[Array2<f64>], params: &FlowSolverParams) -> Result<Vec<FlowField>> {
    if planes.len() < 2 {
        return Err(CoreError::Invalid(format!("optical-flow regularizer needs at least 2 frames, got {}", planes.len())));
    }
    planes.windows(2).map(|p| estimate_flow_planes(p[0].view(), p[1].view(), params)).collect()
}

/// `d arccos(r)² / dr`, finite at `r = 1` and kept finite near `r = -1`.
fn dacos2(r: f64) -> f64 {
    if r >= 1.0 - 1e-12 {
        return -2.0;
    }
    -2.0 * r.acos() / (1.0 - r * r).max(1e-12).sqrt()
}

/// The regularizer on raw planes together with its gradient with respect to
/// every predicted plane. The observed flows are treated as constants and so
/// is the set of pixels passing the magnitude floor. `mask`, if given,
/// restricts the pixel sums.
pub fn regularizer_with_grad(
    pred: &[Array2<f64>],
    obs_flows: &[FlowField],
    params: &FlowSolverParams,
    magnitude_floor: f64,
    mask: Option<&Array2<bool>>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    if pred.len() < 2 {
        return Err(CoreError::Invalid(format!("optical-flow regularizer needs at least 2 frames, got {}", pred.len())));
    }
    if obs_flows.len() != pred.len() - 1 {
        return Err(CoreError::Shape(format!("{} predicted frames need {} observed flows, got {}", pred.len(), pred.len() - 1, obs_flows.len())));
    }
    if !(magnitude_floor > 0.0) {
        return Err(CoreError::Invalid(format!("magnitude_floor must be positive, got {magnitude_floor}")));
    }
    let dims = pred[0].dim();
    if pred.iter().any(|p| p.dim() != dims) || obs_flows.iter().any(|f| f.dims() != dims) {
        return Err(CoreError::Shape("frames or flows of differing dims".into()));
    }
    if mask.is_some_and(|m| m.dim() != dims) {
        return Err(CoreError::Shape("mask dims differ from frames".into()));
    }
    let mask_flat: Option<Vec<bool>> = mask.map(|m| m.iter().copied().collect());
    let pairs = (pred.len() - 1) as f64;
    let mut grads: Vec<Array2<f64>> = pred.iter().map(|p| Array2::zeros(p.dim())).collect();
    let mut total = 0.0;
    for k in 0..pred.len() - 1 {
        let (value, ga, gb) = pair_loss_with_grad(pred[k].view(), pred[k + 1].view(), &obs_flows[k], params, magnitude_floor, mask_flat.as_deref())?;
        total += value;
        grads[k].iter_mut().zip(&ga).for_each(|(g, d)| *g += d / pairs);
        grads[k + 1].iter_mut().zip(&gb).for_each(|(g, d)| *g += d / pairs);
    }
    Ok((total / pairs, grads))
}

fn pair_loss_with_grad(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    obs: &FlowField,
    params: &FlowSolverParams,
    floor: f64,
    mask: Option<&[bool]>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let pr = Problem::new(a, b, params)?;
    let len = pr.h * pr.w;
    let n = params.n_iterations;
    // averages of the iterates u_0..u_{n-1}, all the adjoint needs
    let (mut u, mut v) = (vec![0.0; len], vec![0.0; len]);
    let mut ubs = vec![vec![0.0; len]; n];
    let mut vbs = vec![vec![0.0; len]; n];
    for k in 0..n {
        pr.sweep(&mut u, &mut v, &mut ubs[k], &mut vbs[k]);
    }
    let (pu, pv) = (&u, &v);
    let ou: Vec<f64> = obs.u.iter().copied().collect();
    let ov: Vec<f64> = obs.v.iter().copied().collect();
    let value = angle_loss_slices(pu, pv, &ou, &ov, floor, mask);

    let mut gu = vec![0.0; len];
    let mut gv = vec![0.0; len];
    for p in 0..len {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        let (m1, m2) = (pu[p].hypot(pv[p]), ou[p].hypot(ov[p]));
        if m1 < floor || m2 < floor {
            continue;
        }
        let r = cosine(pu[p], pv[p], ou[p], ov[p]);
        let g = dacos2(r);
        gu[p] = g * (ou[p] / (m1 * m2) - r * pu[p] / (m1 * m1));
        gv[p] = g * (ov[p] / (m1 * m2) - r * pv[p] / (m1 * m1));
    }

    let mut g_yx = vec![0.0; len];
    let mut g_yy = vec![0.0; len];
    let mut g_yt = vec![0.0; len];
    let (mut gub, mut gvb) = (vec![0.0; len], vec![0.0; len]);
    for k in (0..n).rev() {
        let (ub, vb) = (&ubs[k], &vbs[k]);
        for p in 0..len {
            let (yx, yy) = (pr.yx[p], pr.yy[p]);
            let dn = pr.lambda2 + yx * yx + yy * yy;
            let pp = yx * ub[p] + yy * vb[p] + pr.yt[p];
            let s = pp / dn;
            let gsum = gu[p] * yx + gv[p] * yy;
            gub[p] = gu[p] - gsum * yx / dn;
            gvb[p] = gv[p] - gsum * yy / dn;
            g_yt[p] -= gsum / dn;
            g_yx[p] += -gu[p] * s - gsum * (ub[p] / dn - 2.0 * yx * pp / (dn * dn));
            g_yy[p] += -gv[p] * s - gsum * (vb[p] / dn - 2.0 * yy * pp / (dn * dn));
        }
        average(&gub, &mut gu, pr.h, pr.w);
        average(&gvb, &mut gv, pr.h, pr.w);
    }

    let mut g_mean = vec![0.0; len];
    pr.dx.apply_t_add(&g_yx, &mut g_mean);
    pr.dy.apply_t_add(&g_yy, &mut g_mean);
    let ga: Vec<f64> = (0..len).map(|p| 0.5 * g_mean[p] - g_yt[p]).collect();
    let gb: Vec<f64> = (0..len).map(|p| 0.5 * g_mean[p] + g_yt[p]).collect();
    Ok((value, ga, gb))
}
