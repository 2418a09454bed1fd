//! Training objective: pixel MSE, perceptual feature loss and the
//! optical-flow direction regularizer, optionally restricted to a sub-region.

use hossnet_autograd::{Graph, Tensor, Var};
use hossnet_core::flow::{self, FlowSolverParams, DEFAULT_MAGNITUDE_FLOOR};
use hossnet_core::{MaskKind, RegionMask, SampleSequence};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::extractor::FeatureExtractor;
use crate::tensor_io::{from_planes, mask_tensor, planes};
use crate::{ModelError, Result};

/// Margin added around the changed pixels when building the training sub-region.
pub const SUBREGION_MARGIN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha_perc: f64,
    pub alpha_op: f64,
}

/// The optical term sums squared angles over pixels, about 1e3 on a fresh
/// 32×32 model, so its weight is small to keep it below the pixel term.
impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha_perc: 0.1, alpha_op: 1e-4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_perc", self.alpha_perc), ("alpha_op", self.alpha_op)] {
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSettings {
    pub weights: LossWeights,
    pub flow: FlowSolverParams,
    pub magnitude_floor: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self { weights: LossWeights::default(), flow: FlowSolverParams::default(), magnitude_floor: DEFAULT_MAGNITUDE_FLOOR }
    }
}

/// Terms whose weight is zero are not evaluated and reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct LossReport {
    pub mse: f64,
    pub perceptual: f64,
    pub optical: f64,
    pub total: f64,
}

fn check_same(g: &Graph, pred: Var, truth: &Tensor) -> Result<()> {
    if g.value(pred).shape() != truth.shape() {
        return Err(ModelError::Input(format!("prediction {:?} vs truth {:?}", g.value(pred).shape(), truth.shape())));
    }
    Ok(())
}

fn check_weights(w: &Tensor, like: &Tensor) -> Result<f64> {
    if w.shape() != like.shape() {
        return Err(ModelError::Input(format!("mask {:?} vs frames {:?}", w.shape(), like.shape())));
    }
    let total = w.sum();
    if total <= 0.0 {
        return Err(ModelError::Input("mask selects no pixels".into()));
    }
    Ok(total)
}

/// Mean squared error, averaged over the pixels where `mask` is 1 when given.
pub fn mse_loss(g: &mut Graph, pred: Var, truth: &Tensor, mask: Option<&Tensor>) -> Result<Var> {
    check_same(g, pred, truth)?;
    let t = g.constant(truth.clone());
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    match mask {
        None => Ok(g.mean(sq)),
        Some(m) => {
            let n = check_weights(m, truth)?;
            let mv = g.constant(m.clone());
            let w = g.mul(sq, mv)?;
            let s = g.sum(w);
            Ok(g.scale(s, 1.0 / n))
        }
    }
}

/// Mean squared difference of extractor features; with a mask both inputs
/// are multiplied by it first.
pub fn perceptual_loss(g: &mut Graph, pred: Var, truth: &Tensor, extractor: &dyn FeatureExtractor, mask: Option<&Tensor>) -> Result<Var> {
    check_same(g, pred, truth)?;
    let (p, t) = match mask {
        None => (pred, g.constant(truth.clone())),
        Some(m) => {
            check_weights(m, truth)?;
            let mv = g.constant(m.clone());
            (g.mul(pred, mv)?, g.constant(truth * m))
        }
    };
    let fp = extractor.features(g, p)?;
    let ft = extractor.features(g, t)?;
    let d = g.sub(fp, ft)?;
    let sq = g.square(d);
    Ok(g.mean(sq))
}

/// Optical-flow angle regularizer averaged over windows. The observed flow
/// comes from `truth` and is constant.
pub fn optical_loss(
    g: &mut Graph,
    pred: Var,
    truth: &Tensor,
    steps: usize,
    settings: &LossSettings,
    masks: Option<&[RegionMask]>,
) -> Result<Var> {
    check_same(g, pred, truth)?;
    if steps < 2 {
        return Err(ModelError::Input(format!("the optical-flow term needs windows of at least 2 frames, got {steps}")));
    }
    let pv = planes(g.value(pred));
    let tv = planes(truth);
    let windows = pv.len() / steps;
    if masks.is_some_and(|m| m.len() != windows) {
        return Err(ModelError::Input(format!("{} masks for {windows} windows", masks.map_or(0, |m| m.len()))));
    }
    let mut value = 0.0;
    let mut grad_planes: Vec<Array2<f64>> = Vec::with_capacity(pv.len());
    for b in 0..windows {
        let r = b * steps..(b + 1) * steps;
        let obs = flow::observed_flows(&tv[r.clone()], &settings.flow)?;
        let mask = masks.map(|m| &m[b].mask);
        let (v, gr) = flow::regularizer_with_grad(&pv[r], &obs, &settings.flow, settings.magnitude_floor, mask)?;
        value += v / windows as f64;
        grad_planes.extend(gr.into_iter().map(|p| p / windows as f64));
    }
    let grad = from_planes(&grad_planes);
    Ok(g.external_scalar(pred, value, grad)?)
}

/// `mse + α_perc · perceptual + α_op · optical` over `[B*steps, 1, H, W]`
/// predictions, each term restricted to the per-window `masks` when given.
pub fn total_loss(
    g: &mut Graph,
    pred: Var,
    truth: &Tensor,
    steps: usize,
    masks: Option<&[RegionMask]>,
    settings: &LossSettings,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<(Var, LossReport)> {
    settings.weights.validate()?;
    check_same(g, pred, truth)?;
    if steps == 0 || truth.shape()[0] % steps != 0 {
        return Err(ModelError::Input(format!("{} frames do not form windows of {steps}", truth.shape()[0])));
    }
    if let Some(ms) = masks {
        if ms.len() * steps != truth.shape()[0] {
            return Err(ModelError::Input(format!("{} masks for {} frames of windows of {steps}", ms.len(), truth.shape()[0])));
        }
        if ms.iter().any(|m| m.is_empty()) {
            return Err(ModelError::Input("empty loss mask".into()));
        }
    }
    let mt = masks.map(|m| mask_tensor(m, steps));
    let w = settings.weights;
    let mse = mse_loss(g, pred, truth, mt.as_ref())?;
    let mut report = LossReport { mse: g.scalar(mse), ..Default::default() };
    let mut total = mse;
    if w.alpha_perc > 0.0 {
        let ext = extractor.ok_or_else(|| {
            ModelError::Config("alpha_perc > 0 needs a feature extractor; set alpha_perc = 0 to disable the perceptual term".into())
        })?;
        let p = perceptual_loss(g, pred, truth, ext, mt.as_ref())?;
        report.perceptual = g.scalar(p);
        let sp = g.scale(p, w.alpha_perc);
        total = g.add(total, sp)?;
    }
    if w.alpha_op > 0.0 {
        let o = optical_loss(g, pred, truth, steps, settings, masks)?;
        report.optical = g.scalar(o);
        let so = g.scale(o, w.alpha_op);
        total = g.add(total, so)?;
    }
    report.total = g.scalar(total);
    Ok((total, report))
}

/// Loss report for whole single-channel sequences treated as one window.
pub fn total_loss_sequences(
    pred: &SampleSequence,
    truth: &SampleSequence,
    settings: &LossSettings,
    mask: &RegionMask,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<LossReport> {
    if pred.len() != truth.len() {
        return Err(ModelError::Input(format!("sequence lengths differ: {} vs {}", pred.len(), truth.len())));
    }
    let (pp, tp) = (pred.planes()?, truth.planes()?);
    let mut g = Graph::new();
    let pv = g.constant(from_planes(&pp));
    let (_, report) = total_loss(&mut g, pv, &from_planes(&tp), pp.len(), Some(std::slice::from_ref(mask)), settings, extractor)?;
    Ok(report)
}

/// Bounding box, widened by `margin`, of the pixels whose value changes by
/// more than `threshold` across the window; the full frame if nothing changes.
pub fn subregion_mask(window: &[Array2<f64>], margin: usize, threshold: f64) -> RegionMask {
    let (h, w) = window[0].dim();
    let changed = Array2::from_shape_fn((h, w), |ix| {
        let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), p| (l.min(p[ix]), u.max(p[ix])));
        hi - lo > threshold
    });
    RegionMask::new(changed, MaskKind::Dynamic)
        .bounding_box(margin)
        .unwrap_or_else(|| RegionMask::full(h, w, MaskKind::SubRegion))
}

/// Sub-region masks for every window of an NCHW target tensor.
pub fn subregion_masks(truth: &Tensor, steps: usize) -> Vec<RegionMask> {
    let p = planes(truth);
    p.chunks(steps).map(|win| subregion_mask(win, SUBREGION_MARGIN, hossnet_core::metrics::DEFAULT_CHANGE_THRESHOLD)).collect()
}
