//! Field snapshots, sequences, flow fields and region masks.
//!
//! Grid convention: origin at the top-left pixel, `x` grows to the right
//! (column index), `y` grows downward (row index). Arrays are indexed
//! `[row, col]` = `[y, x]`.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// One channel of fracture damage in `[0, 1]`.
    FractureDamage,
    /// Three Cauchy stress channels `Cx, Cy, Cxy`.
    CauchyStress,
}

impl ChannelKind {
    pub fn channels(self) -> usize {
        match self {
            ChannelKind::FractureDamage => 1,
            ChannelKind::CauchyStress => 3,
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::FractureDamage => f.write_str("fracture_damage"),
            ChannelKind::CauchyStress => f.write_str("cauchy_stress"),
        }
    }
}

/// One `H×W×C` snapshot of a field at time step `time_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldFrame {
    values: Array3<f64>,
    kind: ChannelKind,
    time_index: usize,
}

impl FieldFrame {
    pub fn new(values: Array3<f64>, kind: ChannelKind, time_index: usize) -> Result<Self> {
        let c = values.shape()[2];
        if c != kind.channels() {
            return Err(CoreError::Shape(format!("{kind} frame needs {} channels, got {c}", kind.channels())));
        }
        Ok(Self { values: values.as_standard_layout().into_owned(), kind, time_index })
    }

    /// Single-channel damage frame from an `H×W` plane.
    pub fn damage(plane: Array2<f64>, time_index: usize) -> Self {
        let (h, w) = plane.dim();
        let values = plane.into_shape_with_order((h, w, 1)).expect("same element count");
        Self { values, kind: ChannelKind::FractureDamage, time_index }
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn with_time_index(mut self, t: usize) -> Self {
        self.time_index = t;
        self
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(2), c)
    }

    /// The single plane of a one-channel frame.
    pub fn plane(&self) -> Result<ArrayView2<'_, f64>> {
        if self.channels() != 1 {
            return Err(CoreError::Shape(format!("expected a single-channel frame, got {} channels", self.channels())));
        }
        Ok(self.channel(0))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Ordered frames `0..T` of one crack sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSequence {
    pub sample_id: String,
    frames: Vec<FieldFrame>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl SampleSequence {
    pub fn new(sample_id: impl Into<String>, frames: Vec<FieldFrame>, metadata: BTreeMap<String, serde_json::Value>) -> Result<Self> {
        let sample_id = sample_id.into();
        let Some(first) = frames.first() else {
            return Err(CoreError::Invalid(format!("sequence {sample_id} has no frames")));
        };
        let (dims, kind) = (first.dims(), first.kind());
        for (t, f) in frames.iter().enumerate() {
            if f.time_index() != t {
                return Err(CoreError::Invalid(format!(
                    "sequence {sample_id}: frame {t} carries time index {}",
                    f.time_index()
                )));
            }
            if f.dims() != dims || f.kind() != kind {
                return Err(CoreError::Shape(format!(
                    "sequence {sample_id}: frame {t} is {:?}/{} but frame 0 is {dims:?}/{kind}",
                    f.dims(),
                    f.kind()
                )));
            }
        }
        Ok(Self { sample_id, frames, metadata })
    }

    /// Build from planes of a damage field, numbering frames from zero.
    pub fn from_damage_planes(sample_id: impl Into<String>, planes: Vec<Array2<f64>>) -> Result<Self> {
        let frames = planes.into_iter().enumerate().map(|(t, p)| FieldFrame::damage(p, t)).collect();
        Self::new(sample_id, frames, BTreeMap::new())
    }

    pub fn frames(&self) -> &[FieldFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &FieldFrame {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn kind(&self) -> ChannelKind {
        self.frames[0].kind()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    /// Copies of the planes of a single-channel sequence.
    pub fn planes(&self) -> Result<Vec<Array2<f64>>> {
        self.frames.iter().map(|f| f.plane().map(|p| p.to_owned())).collect()
    }

    /// Sequence with the same id and metadata but new frames.
    pub fn with_frames(&self, frames: Vec<FieldFrame>) -> Result<Self> {
        Self::new(self.sample_id.clone(), frames, self.metadata.clone())
    }
}

/// Per-pixel motion `(u, v)` in pixels per step; `u` along `x`, `v` along `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

impl FlowField {
    pub fn new(u: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(CoreError::Shape(format!("flow components {:?} vs {:?}", u.dim(), v.dim())));
        }
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(CoreError::Invalid("flow field contains non-finite values".into()));
        }
        Ok(Self { u, v })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self { u: Array2::zeros((h, w)), v: Array2::zeros((h, w)) }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dim()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        let mut m = self.u.clone();
        ndarray::Zip::from(&mut m).and(&self.v).for_each(|m, &v| *m = m.hypot(v));
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Dynamic,
    Fixed,
    SubRegion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    pub mask: Array2<bool>,
    pub kind: MaskKind,
}

impl RegionMask {
    pub fn new(mask: Array2<bool>, kind: MaskKind) -> Self {
        Self { mask, kind }
    }

    pub fn full(h: usize, w: usize, kind: MaskKind) -> Self {
        Self { mask: Array2::from_elem((h, w), true), kind }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// The exact complement, with `Dynamic` and `Fixed` swapped.
    pub fn complement(&self) -> Self {
        let kind = match self.kind {
            MaskKind::Dynamic => MaskKind::Fixed,
            MaskKind::Fixed => MaskKind::Dynamic,
            MaskKind::SubRegion => MaskKind::SubRegion,
        };
        Self { mask: self.mask.mapv(|m| !m), kind }
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        let (h, w) = self.dims();
        let r = radius as isize;
        let mut out = Array2::from_elem((h, w), false);
        for ((y, x), &m) in self.mask.indexed_iter() {
            if !m {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                        out[[yy as usize, xx as usize]] = true;
                    }
                }
            }
        }
        Self { mask: out, kind: self.kind }
    }

    /// Axis-aligned bounding box of the set pixels grown by `margin`, or
    /// `None` when the mask is empty.
    pub fn bounding_box(&self, margin: usize) -> Option<Self> {
        let (h, w) = self.dims();
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for ((y, x), &m) in self.mask.indexed_iter() {
            if m {
                bounds = Some(match bounds {
                    None => (y, y, x, x),
                    Some((y0, y1, x0, x1)) => (y0.min(y), y1.max(y), x0.min(x), x1.max(x)),
                });
            }
        }
        let (y0, y1, x0, x1) = bounds?;
        let (y0, x0) = (y0.saturating_sub(margin), x0.saturating_sub(margin));
        let (y1, x1) = ((y1 + margin).min(h - 1), (x1 + margin).min(w - 1));
        let mask = Array2::from_shape_fn((h, w), |(y, x)| y >= y0 && y <= y1 && x >= x0 && x <= x1);
        Some(Self { mask, kind: MaskKind::SubRegion })
    }
}

/// Per-channel min-max statistics fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub kind: ChannelKind,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl NormStats {
    /// Fit on every frame yielded by `frames`.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a FieldFrame>) -> Result<Self> {
        let mut kind = None;
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for f in frames {
            match kind {
                None => {
                    kind = Some(f.kind());
                    min = vec![f64::INFINITY; f.channels()];
                    max = vec![f64::NEG_INFINITY; f.channels()];
                }
                Some(k) if k != f.kind() => {
                    return Err(CoreError::Invalid(format!("cannot fit statistics over mixed {k} and {} frames", f.kind())))
                }
                _ => {}
            }
            if !f.is_finite() {
                return Err(CoreError::Invalid(format!("frame {} contains non-finite values", f.time_index())));
            }
            for c in 0..f.channels() {
                for &v in f.channel(c) {
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                }
            }
        }
        let kind = kind.ok_or_else(|| CoreError::Invalid("no frames to fit normalization on".into()))?;
        let warnings = (0..min.len())
            .filter(|&c| max[c] == min[c])
            .map(|c| format!("channel {c} of {kind} is constant ({}); mapped to zeros", min[c]))
            .collect::<Vec<_>>();
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Self { kind, min, max, warnings })
    }

    pub fn is_degenerate(&self, c: usize) -> bool {
        self.max[c] == self.min[c]
    }

    fn forward(&self, c: usize, v: f64) -> f64 {
        if self.is_degenerate(c) {
            0.0
        } else {
            ((v - self.min[c]) / (self.max[c] - self.min[c])).clamp(0.0, 1.0)
        }
    }

    /// Map a frame into `[0, 1]`. Values outside the fitted range clamp.
    pub fn apply_frame(&self, frame: &FieldFrame) -> Result<FieldFrame> {
        self.check(frame)?;
        let mut values = frame.values().clone();
        for (c, mut plane) in values.axis_iter_mut(Axis(2)).enumerate() {
            plane.mapv_inplace(|v| self.forward(c, v));
        }
        FieldFrame::new(values, frame.kind(), frame.time_index())
    }

    pub fn apply(&self, seq: &SampleSequence) -> Result<SampleSequence> {
        let frames = seq.frames().iter().map(|f| self.apply_frame(f)).collect::<Result<Vec<_>>>()?;
        seq.with_frames(frames)
    }

    /// Inverse map. Degenerate channels map back to their constant value.
    pub fn denormalize_frame(&self, frame: &FieldFrame) -> Result<FieldFrame> {
        self.check(frame)?;
        let mut values = frame.values().clone();
        for (c, mut plane) in values.axis_iter_mut(Axis(2)).enumerate() {
            let (lo, hi) = (self.min[c], self.max[c]);
            plane.mapv_inplace(|v| lo + v * (hi - lo));
        }
        FieldFrame::new(values, frame.kind(), frame.time_index())
    }

    pub fn denormalize(&self, seq: &SampleSequence) -> Result<SampleSequence> {
        let frames = seq.frames().iter().map(|f| self.denormalize_frame(f)).collect::<Result<Vec<_>>>()?;
        seq.with_frames(frames)
    }

    fn check(&self, frame: &FieldFrame) -> Result<()> {
        if frame.kind() != self.kind {
            return Err(CoreError::Invalid(format!("statistics fitted on {} applied to {}", self.kind, frame.kind())));
        }
        Ok(())
    }
}

/// Fit per-channel min-max statistics on `sequences` (the training split)
/// and return the normalized sequences together with the statistics.
pub fn normalize_dataset(sequences: &[SampleSequence]) -> Result<(Vec<SampleSequence>, NormStats)> {
    if sequences.is_empty() {
        return Err(CoreError::Invalid("normalize_dataset needs at least one sequence".into()));
    }
    let stats = NormStats::fit(sequences.iter().flat_map(|s| s.frames()))?;
    let out = sequences.iter().map(|s| stats.apply(s)).collect::<Result<Vec<_>>>()?;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn seq_of(values: &[f64]) -> SampleSequence {
        let frames = values
            .iter()
            .enumerate()
            .map(|(t, v)| FieldFrame::damage(Array2::from_elem((1, 1), *v), t))
            .collect();
        SampleSequence::new("s", frames, BTreeMap::new()).unwrap()
    }

    fn flat(seq: &SampleSequence) -> Vec<f64> {
        seq.frames().iter().map(|f| f.values()[[0, 0, 0]]).collect()
    }

    #[test]
    fn affine_endpoints() {
        let (out, stats) = normalize_dataset(&[seq_of(&[2.0, 4.0, 6.0])]).unwrap();
        assert_eq!(flat(&out[0]), vec![0.0, 0.5, 1.0]);
        assert_eq!((stats.min[0], stats.max[0]), (2.0, 6.0));
        assert!(stats.warnings.is_empty());
    }

    #[test]
    fn already_normalized_is_unchanged() {
        let (out, _) = normalize_dataset(&[seq_of(&[0.0, 1.0])]).unwrap();
        assert_eq!(flat(&out[0]), vec![0.0, 1.0]);
    }

    #[test]
    fn constant_channel_maps_to_zero_with_warning() {
        let (out, stats) = normalize_dataset(&[seq_of(&[5.0, 5.0, 5.0])]).unwrap();
        assert_eq!(flat(&out[0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(stats.warnings.len(), 1);
        let back = stats.denormalize(&out[0]).unwrap();
        assert_eq!(flat(&back), vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn test_split_uses_training_statistics() {
        let (_, stats) = normalize_dataset(&[seq_of(&[2.0, 6.0])]).unwrap();
        let test = stats.apply(&seq_of(&[4.0, 8.0, 0.0])).unwrap();
        assert_eq!(flat(&test), vec![0.5, 1.0, 0.0]);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(normalize_dataset(&[]).is_err());
        assert!(normalize_dataset(&[seq_of(&[1.0, f64::NAN])]).is_err());
    }

    #[test]
    fn sequence_invariants() {
        let f0 = FieldFrame::damage(Array2::zeros((2, 2)), 0);
        let f2 = FieldFrame::damage(Array2::zeros((2, 2)), 2);
        assert!(SampleSequence::new("gap", vec![f0.clone(), f2], BTreeMap::new()).is_err());
        let other = FieldFrame::damage(Array2::zeros((3, 2)), 1);
        assert!(SampleSequence::new("dims", vec![f0, other], BTreeMap::new()).is_err());
        assert!(FieldFrame::new(Array3::zeros((2, 2, 2)), ChannelKind::CauchyStress, 0).is_err());
    }

    #[test]
    fn mask_complement_and_box() {
        let m = RegionMask::new(array![[false, true, false], [false, false, false], [false, false, false]], MaskKind::Dynamic);
        let c = m.complement();
        assert_eq!(c.kind, MaskKind::Fixed);
        assert_eq!(m.count() + c.count(), 9);
        assert!(m.mask.iter().zip(c.mask.iter()).all(|(a, b)| a != b));
        assert_eq!(m.dilate(1).count(), 6);
        let bb = m.bounding_box(1).unwrap();
        assert_eq!(bb.count(), 6);
        assert!(RegionMask::new(Array2::from_elem((2, 2), false), MaskKind::Dynamic).bounding_box(3).is_none());
    }

    #[test]
    fn flow_rejects_nan() {
        assert!(FlowField::new(array![[f64::NAN]], array![[0.0]]).is_err());
        assert!(FlowField::new(array![[0.0]], array![[0.0, 1.0]]).is_err());
    }
}
