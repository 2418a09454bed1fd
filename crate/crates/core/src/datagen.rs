//! Procedural crack-growth sequences.
//!
//! Pre-existing cracks are short line segments placed on a jittered grid.
//! Each segment contributes two tips that, after a random onset, advance by a
//! biased random walk that turns toward the horizontal (the direction normal
//! to a vertical tensile load), occasionally branching. Damage is deposited
//! with a unit-σ Gaussian footprint and composited with `max`, so the field
//! never decreases in time.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{ChannelKind, CoreError, FieldFrame, Result, SampleSequence};

/// Footprint width of deposited damage, in pixels.
pub const FOOTPRINT_SIGMA: f64 = 1.0;
/// Smoothing applied to damage before taking stress-surrogate gradients.
pub const STRESS_SMOOTHING_SIGMA: f64 = 1.0;

const CELL: usize = 4;
const MARGIN: usize = 2;
const LOOKAHEAD: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrackSpec {
    pub n_initial_cracks: usize,
    pub seed: u64,
    /// Tip advance in pixels per step.
    pub growth_rate: f64,
    /// Per-tip, per-step probability of spawning a branch.
    pub branching_prob: f64,
    pub height: usize,
    pub width: usize,
    pub n_steps: usize,
}

impl Default for CrackSpec {
    fn default() -> Self {
        Self { n_initial_cracks: 20, seed: 0, growth_rate: 0.2, branching_prob: 0.02, height: 32, width: 32, n_steps: 60 }
    }
}

impl CrackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_initial_cracks < 1 {
            return Err(CoreError::Invalid("n_initial_cracks must be at least 1".into()));
        }
        if self.n_steps < 2 {
            return Err(CoreError::Invalid("n_steps must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.branching_prob) {
            return Err(CoreError::Invalid(format!("branching_prob {} outside [0, 1]", self.branching_prob)));
        }
        if !self.growth_rate.is_finite() || self.growth_rate < 0.0 {
            return Err(CoreError::Invalid(format!("growth_rate {} must be finite and non-negative", self.growth_rate)));
        }
        let capacity = self.capacity();
        if self.n_initial_cracks > capacity {
            return Err(CoreError::GridTooSmall { h: self.height, w: self.width, cracks: self.n_initial_cracks, capacity });
        }
        Ok(())
    }

    /// Number of placement cells available for initial cracks.
    pub fn capacity(&self) -> usize {
        let rows = self.height.saturating_sub(2 * MARGIN) / CELL;
        let cols = self.width.saturating_sub(2 * MARGIN) / CELL;
        rows * cols
    }
}

#[derive(Clone, Debug)]
struct Tip {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    onset: usize,
    alive: bool,
}

fn deposit(field: &mut Array2<f64>, x: f64, y: f64) {
    let (h, w) = field.dim();
    let reach = (3.0 * FOOTPRINT_SIGMA).ceil() as isize;
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    for yy in cy - reach..=cy + reach {
        for xx in cx - reach..=cx + reach {
            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                continue;
            }
            let d2 = (xx as f64 - x).powi(2) + (yy as f64 - y).powi(2);
            let v = (-d2 / (2.0 * FOOTPRINT_SIGMA * FOOTPRINT_SIGMA)).exp();
            let cell = &mut field[[yy as usize, xx as usize]];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

/// Deposit along the segment from `(x0, y0)` to `(x1, y1)` at half-pixel spacing.
fn deposit_segment(field: &mut Array2<f64>, x0: f64, y0: f64, x1: f64, y1: f64) {
    let len = (x1 - x0).hypot(y1 - y0);
    let n = (len / 0.5).ceil().max(1.0) as usize;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        deposit(field, x0 + s * (x1 - x0), y0 + s * (y1 - y0));
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI) % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the stream independent of distribution crate internals.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn material_metadata(spec: &CrackSpec) -> BTreeMap<String, serde_json::Value> {
    let mut m = BTreeMap::new();
    m.insert("density_kg_m3".into(), serde_json::json!(2500.0));
    m.insert("youngs_modulus_pa".into(), serde_json::json!(22.6e9));
    m.insert("poisson_ratio".into(), serde_json::json!(0.242));
    m.insert("generator".into(), serde_json::json!("procedural_crack_walk"));
    m.insert("crack_spec".into(), serde_json::to_value(spec).expect("serializable spec"));
    m
}

/// Generate one damage sequence. Pure function of `spec`.
pub fn generate_sample(spec: &CrackSpec) -> Result<SampleSequence> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let cols = (w - 2 * MARGIN) / CELL;
    let mut cells: Vec<usize> = (0..spec.capacity()).collect();
    cells.shuffle(&mut rng);

    let mut field = Array2::<f64>::zeros((h, w));
    let mut tips = Vec::new();
    for &cell in cells.iter().take(spec.n_initial_cracks) {
        let (r, c) = (cell / cols, cell % cols);
        let cx = (MARGIN + c * CELL) as f64 + rng.random_range(0.5..CELL as f64 - 0.5);
        let cy = (MARGIN + r * CELL) as f64 + rng.random_range(0.5..CELL as f64 - 0.5);
        let theta = rng.random_range(-PI..PI);
        let half = rng.random_range(1.0..2.0);
        let (dx, dy) = (half * theta.cos(), half * theta.sin());
        deposit_segment(&mut field, cx - dx, cy - dy, cx + dx, cy + dy);
        for (sign, heading) in [(1.0, theta), (-1.0, wrap_angle(theta + PI))] {
            tips.push(Tip {
                x: cx + sign * dx,
                y: cy + sign * dy,
                heading,
                speed: rng.random_range(0.5..1.5),
                onset: rng.random_range(0..spec.n_steps.div_ceil(2).max(1)),
                alive: true,
            });
        }
    }
    let max_tips = 4 * tips.len();

    let mut planes = Vec::with_capacity(spec.n_steps);
    planes.push(field.clone());
    for t in 1..spec.n_steps {
        let mut spawned = Vec::new();
        for tip in tips.iter_mut() {
            if !tip.alive || t < tip.onset || spec.growth_rate == 0.0 {
                continue;
            }
            let target = if tip.heading.abs() <= PI / 2.0 { 0.0 } else { PI.copysign(tip.heading) };
            tip.heading = wrap_angle(tip.heading + 0.15 * (target - tip.heading) + 0.15 * standard_normal(&mut rng));
            let step = spec.growth_rate * tip.speed;
            let (nx, ny) = (tip.x + step * tip.heading.cos(), tip.y + step * tip.heading.sin());
            if nx < 0.0 || ny < 0.0 || nx > (w - 1) as f64 || ny > (h - 1) as f64 {
                tip.alive = false;
                continue;
            }
            // coalesce into damage left by another crack just ahead
            let (ax, ay) = (tip.x + LOOKAHEAD * tip.heading.cos(), tip.y + LOOKAHEAD * tip.heading.sin());
            if ax >= 0.0 && ay >= 0.0 && ax <= (w - 1) as f64 && ay <= (h - 1) as f64 && field[[ay.round() as usize, ax.round() as usize]] > 0.5 {
                deposit_segment(&mut field, tip.x, tip.y, ax, ay);
                tip.alive = false;
                continue;
            }
            deposit_segment(&mut field, tip.x, tip.y, nx, ny);
            tip.x = nx;
            tip.y = ny;
            if rng.random::<f64>() < spec.branching_prob {
                let turn = if rng.random::<bool>() { 0.6 } else { -0.6 };
                spawned.push(Tip { heading: wrap_angle(tip.heading + turn), onset: t + 1, ..tip.clone() });
            }
        }
        for s in spawned {
            if tips.len() < max_tips {
                tips.push(s);
            }
        }
        planes.push(field.clone());
    }

    let mut seq = SampleSequence::from_damage_planes(format!("crack_seed{}", spec.seed), planes)?;
    seq.metadata = material_metadata(spec);
    Ok(seq)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(field: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = field.dim();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            tmp[[y, x]] = k.iter().enumerate().map(|(i, kv)| kv * field[[y, clamp(x as isize + i as isize - r, w)]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            out[[y, x]] = k.iter().enumerate().map(|(i, kv)| kv * tmp[[clamp(y as isize + i as isize - r, h), x]]).sum();
        }
    }
    out
}

/// Central differences with replicated borders: returns `(∂/∂x, ∂/∂y)`.
pub fn central_gradients(field: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = field.dim();
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[[y, x]] = 0.5 * (field[[y, xr]] - field[[y, xl]]);
            gy[[y, x]] = 0.5 * (field[[yd, x]] - field[[yu, x]]);
        }
    }
    (gx, gy)
}

/// Raw (un-rescaled) stress surrogate channels `(Cx, Cy, Cxy)` of one damage plane.
pub fn stress_surrogate(damage: &Array2<f64>) -> [Array2<f64>; 3] {
    let smooth = gaussian_blur(damage, STRESS_SMOOTHING_SIGMA);
    let (gx, gy) = central_gradients(&smooth);
    let gxy = &gx * &gy;
    [gx, gy, gxy]
}

/// Three pseudo-stress channels from a damage sequence: smoothed x and y
/// gradients and their product, each rescaled to `[0, 1]` over the whole
/// sequence (a constant channel maps to zeros).
pub fn derive_stress_channels(damage_seq: &SampleSequence) -> Result<SampleSequence> {
    if damage_seq.kind() != ChannelKind::FractureDamage {
        return Err(CoreError::Invalid(format!("expected a fracture_damage sequence, got {}", damage_seq.kind())));
    }
    let raw: Vec<[Array2<f64>; 3]> = damage_seq.planes()?.iter().map(stress_surrogate).collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for chans in &raw {
        for c in 0..3 {
            for &v in &chans[c] {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
    }
    let (h, w) = damage_seq.dims();
    let frames = raw
        .into_iter()
        .enumerate()
        .map(|(t, chans)| {
            let mut values = Array3::<f64>::zeros((h, w, 3));
            for c in 0..3 {
                let span = hi[c] - lo[c];
                for ((y, x), &v) in chans[c].indexed_iter() {
                    values[[y, x, c]] = if span > 0.0 { (v - lo[c]) / span } else { 0.0 };
                }
            }
            FieldFrame::new(values, ChannelKind::CauchyStress, t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seq = damage_seq.with_frames(frames)?;
    seq.metadata.insert("derived_from".into(), serde_json::json!("fracture_damage"));
    Ok(seq)
}

/// `n_samples` sequences with seeds `base.seed, base.seed + 1, …`, named
/// `crack_000, crack_001, …`.
pub fn build_benchmark_set(n_samples: usize, base: &CrackSpec) -> Result<Vec<SampleSequence>> {
    if n_samples < 1 {
        return Err(CoreError::Invalid("n_samples must be at least 1".into()));
    }
    (0..n_samples)
        .map(|i| {
            let spec = CrackSpec { seed: base.seed.wrapping_add(i as u64), ..base.clone() };
            let mut seq = generate_sample(&spec)?;
            seq.sample_id = format!("crack_{i:03}");
            Ok(seq)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> CrackSpec {
        CrackSpec { n_initial_cracks: 6, seed, growth_rate: 0.4, branching_prob: 0.05, n_steps: 20, ..Default::default() }
    }

    #[test]
    fn damage_never_decreases() {
        let s = generate_sample(&small(3)).unwrap();
        let planes = s.planes().unwrap();
        for t in 1..planes.len() {
            let dmin = (&planes[t] - &planes[t - 1]).fold(f64::INFINITY, |a, &b| a.min(b));
            assert!(dmin >= 0.0, "step {t} decreased by {dmin}");
        }
        assert!(planes.iter().all(|p| p.iter().all(|v| (0.0..=1.0).contains(v))));
        assert!(planes.last().unwrap().sum() > planes[0].sum());
    }

    #[test]
    fn zero_growth_freezes_the_field() {
        let s = generate_sample(&CrackSpec { growth_rate: 0.0, ..small(1) }).unwrap();
        let p = s.planes().unwrap();
        assert!(p.iter().all(|f| f == &p[0]));
        assert!(p[0].sum() > 0.0);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_sample(&small(11)).unwrap();
        let b = generate_sample(&small(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_too_small() {
        let spec = CrackSpec { height: 8, width: 8, n_initial_cracks: 2, ..small(0) };
        assert!(matches!(generate_sample(&spec), Err(CoreError::GridTooSmall { capacity: 1, .. })));
        assert!(generate_sample(&CrackSpec { n_steps: 1, ..small(0) }).is_err());
        assert!(generate_sample(&CrackSpec { n_initial_cracks: 0, ..small(0) }).is_err());
    }

    #[test]
    fn zero_damage_gives_zero_stress() {
        let planes = vec![Array2::zeros((8, 8)); 3];
        let s = SampleSequence::from_damage_planes("z", planes).unwrap();
        let c = derive_stress_channels(&s).unwrap();
        assert_eq!(c.kind(), ChannelKind::CauchyStress);
        assert!(c.frames().iter().all(|f| f.values().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn benchmark_set_shape() {
        let set = build_benchmark_set(1, &small(0)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].sample_id, "crack_000");
        assert!(build_benchmark_set(0, &small(0)).is_err());
    }

    #[test]
    fn vertical_line_stress_matches_direct_oracle() {
        let (h, w, col) = (12usize, 15usize, 7usize);
        let damage = Array2::from_shape_fn((h, w), |(_, x)| if x == col { 1.0 } else { 0.0 });
        // direct 2-D Gaussian with clamped reads, then one-sided/central differences by hand
        let r = 3isize;
        let g = |d: isize| (-(d * d) as f64 / 2.0).exp();
        let norm: f64 = (-r..=r).map(g).sum();
        let smooth = Array2::from_shape_fn((h, w), |(y, x)| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    acc += g(dy) * g(dx) * damage[[yy, xx]];
                }
            }
            acc / (norm * norm)
        });
        let fd = Array2::from_shape_fn((h, w), |(y, x)| {
            let xr = (x + 1).min(w - 1);
            let xl = x.saturating_sub(1);
            (smooth[[y, xr]] - smooth[[y, xl]]) / 2.0
        });
        let [gx, gy, _] = stress_surrogate(&damage);
        assert!((&gx - &fd).iter().all(|d| d.abs() < 1e-12));
        assert!(gy.iter().all(|v| v.abs() < 1e-12));
        let row = gx.row(h / 2);
        let argmax = (0..w).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let argmin = (0..w).min_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!((argmax, argmin), (col - 1, col + 1));
    }

    #[test]
    fn seeds_differ_and_derivation_is_per_sample() {
        let set = build_benchmark_set(3, &small(5)).unwrap();
        assert_ne!(set[0].planes().unwrap(), set[1].planes().unwrap());
        let forward: Vec<_> = set.iter().map(|s| derive_stress_channels(s).unwrap()).collect();
        let backward: Vec<_> = set.iter().rev().map(|s| derive_stress_channels(s).unwrap()).collect();
        assert_eq!(forward[0], backward[2]);
        assert_eq!(forward[0], derive_stress_channels(&set[0]).unwrap());
        assert!(forward[0].frames().iter().all(|f| f.values().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn generated_damage_is_monotone(seed in 0u64..1000, n in 1usize..12, rate in 0.0f64..1.5, branch in 0.0f64..0.3) {
            let spec = CrackSpec { n_initial_cracks: n, seed, growth_rate: rate, branching_prob: branch, n_steps: 12, ..Default::default() };
            let planes = generate_sample(&spec).unwrap().planes().unwrap();
            for t in 1..planes.len() {
                proptest::prop_assert!(planes[t].iter().zip(planes[t - 1].iter()).all(|(a, b)| a >= b));
            }
        }
    }
}
