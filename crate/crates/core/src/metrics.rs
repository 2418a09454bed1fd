//! Reconstruction metrics: RMSE, windowed SSIM and the weighted fracture
//! error, plus per-lead aggregation.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{CoreError, MaskKind, RegionMask, Result, SampleSequence};

pub const DEFAULT_SSIM_WINDOW: usize = 7;
pub const DEFAULT_K1: f64 = 0.01;
pub const DEFAULT_K2: f64 = 0.03;
pub const DEFAULT_CHANGE_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_DILATION: usize = 2;
/// Weight of the dynamic-region RMSE in WFE.
pub const WFE_DYNAMIC_WEIGHT: f64 = 10.0;

fn same_dims(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(CoreError::Shape(format!("frame dims differ: {:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(CoreError::Shape("empty frame".into()));
    }
    Ok(())
}

pub fn rmse(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    same_dims(&pred, &truth)?;
    let sse: f64 = pred.iter().zip(truth.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// RMSE over the pixels selected by `mask`; 0 when the mask is empty.
pub fn masked_rmse(pred: ArrayView2<f64>, truth: ArrayView2<f64>, mask: &Array2<bool>) -> Result<f64> {
    same_dims(&pred, &truth)?;
    if mask.dim() != pred.dim() {
        return Err(CoreError::Shape(format!("mask dims {:?} vs frame dims {:?}", mask.dim(), pred.dim())));
    }
    let (mut sse, mut n) = (0.0, 0usize);
    for ((a, b), &m) in pred.iter().zip(truth.iter()).zip(mask.iter()) {
        if m {
            sse += (a - b) * (a - b);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { (sse / n as f64).sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: DEFAULT_SSIM_WINDOW, k1: DEFAULT_K1, k2: DEFAULT_K2, data_range: 1.0 }
    }
}

/// Mean SSIM over all fully contained `window × window` uniform windows,
/// with population statistics.
pub fn ssim(pred: ArrayView2<f64>, truth: ArrayView2<f64>, params: &SsimParams) -> Result<f64> {
    same_dims(&pred, &truth)?;
    let SsimParams { window, k1, k2, data_range } = *params;
    if window == 0 || window % 2 == 0 {
        return Err(CoreError::Invalid(format!("ssim window must be odd, got {window}")));
    }
    if !(data_range > 0.0) {
        return Err(CoreError::Invalid(format!("data_range must be positive, got {data_range}")));
    }
    let (h, w) = pred.dim();
    if h < window || w < window {
        return Err(CoreError::Shape(format!("frame {h}×{w} smaller than ssim window {window}")));
    }
    let c1 = (k1 * data_range).powi(2);
    let c2 = (k2 * data_range).powi(2);
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - window {
        for x in 0..=w - window {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for yy in y..y + window {
                for xx in x..x + window {
                    let (a, b) = (pred[[yy, xx]], truth[[yy, xx]]);
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = saa / n - ma * ma;
            let vb = sbb / n - mb * mb;
            let cov = sab / n - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Pixels whose truth value ranges by more than `threshold` over the
/// inclusive step window `[t0, t1]`, dilated by `dilation` pixels.
pub fn detect_dynamic_region(truth_seq: &SampleSequence, window: (usize, usize), threshold: f64, dilation: usize) -> Result<RegionMask> {
    let (t0, t1) = window;
    if t0 >= t1 || t1 >= truth_seq.len() {
        return Err(CoreError::Invalid(format!("window ({t0}, {t1}) invalid for a sequence of {} steps", truth_seq.len())));
    }
    let planes = truth_seq.planes()?;
    let (h, w) = truth_seq.dims();
    let mut lo = planes[t0].clone();
    let mut hi = planes[t0].clone();
    for p in &planes[t0 + 1..=t1] {
        lo.zip_mut_with(p, |l, &v| *l = l.min(v));
        hi.zip_mut_with(p, |u, &v| *u = u.max(v));
    }
    let changed = Array2::from_shape_fn((h, w), |ix| hi[ix] - lo[ix] > threshold);
    Ok(RegionMask::new(changed, MaskKind::Dynamic).dilate(dilation))
}

/// `10 · RMSE(dynamic) + RMSE(complement)`.
pub fn wfe(pred: ArrayView2<f64>, truth: ArrayView2<f64>, dynamic: &RegionMask) -> Result<f64> {
    let fixed = dynamic.complement();
    Ok(WFE_DYNAMIC_WEIGHT * masked_rmse(pred, truth, &dynamic.mask)? + masked_rmse(pred, truth, &fixed.mask)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub lead_time: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub wfe: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Ssim,
    Wfe,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Rmse, Metric::Ssim, Metric::Wfe];

    pub fn of(self, r: &EvalRecord) -> f64 {
        match self {
            Metric::Rmse => r.rmse,
            Metric::Ssim => r.ssim,
            Metric::Wfe => r.wfe,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Ssim => "ssim",
            Metric::Wfe => "wfe",
        }
    }
}

/// Per-frame metrics of `pred` against `truth`, with lead times starting at 1.
pub fn evaluate_sequence(pred: &SampleSequence, truth: &SampleSequence, dynamic: &RegionMask, ssim_params: &SsimParams) -> Result<Vec<EvalRecord>> {
    if pred.len() != truth.len() {
        return Err(CoreError::Shape(format!("prediction has {} steps, truth {}", pred.len(), truth.len())));
    }
    let (pp, tp) = (pred.planes()?, truth.planes()?);
    pp.iter()
        .zip(&tp)
        .enumerate()
        .map(|(i, (p, t))| {
            Ok(EvalRecord {
                sample_id: truth.sample_id.clone(),
                lead_time: i + 1,
                rmse: rmse(p.view(), t.view())?,
                ssim: ssim(p.view(), t.view(), ssim_params)?,
                wfe: wfe(p.view(), t.view(), dynamic)?,
            })
        })
        .collect()
}

pub fn write_records_csv<W: Write>(out: W, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CoreError::Invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(input: R) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(CoreError::from)).collect()
}

/// Mean of `metric` per lead time, keeping leads `1, 1 + interval, …` up to
/// `max_lead` inclusive.
pub fn temporal_curve(records: &[EvalRecord], metric: Metric, interval: usize, max_lead: usize) -> Result<Vec<(usize, f64)>> {
    if records.is_empty() {
        return Err(CoreError::Invalid("temporal_curve needs at least one record".into()));
    }
    if interval == 0 {
        return Err(CoreError::Invalid("interval must be at least 1".into()));
    }
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        if r.lead_time >= 1 && r.lead_time <= max_lead && (r.lead_time - 1) % interval == 0 {
            let e = acc.entry(r.lead_time).or_default();
            e.0 += metric.of(r);
            e.1 += 1;
        }
    }
    Ok(acc.into_iter().map(|(lead, (s, n))| (lead, s / n as f64)).collect())
}

/// Mean of `metric` over all records with `lead_time ≤ max_lead`.
pub fn mean_over_leads(records: &[EvalRecord], metric: Metric, max_lead: usize) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter(|r| r.lead_time <= max_lead).map(|r| metric.of(r)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        let a = array![[0.0, 1.0]];
        let b = array![[1.0, 1.0]];
        assert!((rmse(a.view(), b.view()).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(a.view(), a.view()).unwrap(), 0.0);
        let c = a.mapv(|v| v + 0.1);
        assert!((rmse(a.view(), c.view()).unwrap() - 0.1).abs() < 1e-12);
        assert!(rmse(a.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn ssim_of_constant_frames() {
        let zeros = Array2::<f64>::zeros((9, 9));
        let ones = Array2::<f64>::ones((9, 9));
        let p = SsimParams::default();
        let c1: f64 = 1e-4;
        // zero variance on both sides: (C1)(C2) / ((1 + C1)(C2))
        let expect = c1 / (1.0 + c1);
        let got = ssim(zeros.view(), ones.view(), &p).unwrap();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        assert_eq!(ssim(ones.view(), ones.view(), &p).unwrap(), 1.0);
    }

    #[test]
    fn ssim_against_direct_formula() {
        // one window covering the whole frame
        let a = Array2::from_shape_fn((7, 7), |(y, x)| ((y * 7 + x) as f64 * 0.37).sin().abs());
        let b = Array2::from_shape_fn((7, 7), |(y, x)| ((y * 5 + x * 3) as f64 * 0.21).cos().abs());
        let n = 49.0;
        let ma = a.sum() / n;
        let mb = b.sum() / n;
        let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
        let cov = a.iter().zip(b.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let (c1, c2) = (1e-4, 9e-4);
        let expect = (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        let got = ssim(a.view(), b.view(), &SsimParams::default()).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!(ssim(a.view(), b.view(), &SsimParams { window: 4, ..Default::default() }).is_err());
    }

    fn growing_crack() -> SampleSequence {
        let planes = (0..4)
            .map(|t| Array2::from_shape_fn((10, 10), |(y, x)| if y == 5 && x <= 2 + t { 1.0 } else { 0.0 }))
            .collect();
        SampleSequence::from_damage_planes("c", planes).unwrap()
    }

    #[test]
    fn dynamic_region_is_dilated_change_set() {
        let s = growing_crack();
        let m = detect_dynamic_region(&s, (0, 3), DEFAULT_CHANGE_THRESHOLD, 2).unwrap();
        // brute force: changed pixels are (5, 3..=5); Chebyshev distance ≤ 2
        let expect = Array2::from_shape_fn((10, 10), |(y, x)| {
            (3..=5).any(|cx: usize| y.abs_diff(5) <= 2 && x.abs_diff(cx) <= 2)
        });
        assert_eq!(m.mask, expect);
        assert_eq!(m.kind, MaskKind::Dynamic);
        assert!(detect_dynamic_region(&s, (0, 3), 2.0, 2).unwrap().is_empty());
        let still = SampleSequence::from_damage_planes("s", vec![Array2::zeros((4, 4)); 3]).unwrap();
        assert!(detect_dynamic_region(&still, (0, 2), 1e-4, 2).unwrap().is_empty());
        assert!(detect_dynamic_region(&s, (2, 2), 1e-4, 2).is_err());
    }

    #[test]
    fn wfe_by_hand() {
        let truth = Array2::<f64>::zeros((2, 2));
        let pred = array![[0.02, 0.02], [0.01, 0.01]];
        let dynamic = RegionMask::new(array![[true, true], [false, false]], MaskKind::Dynamic);
        let v = wfe(pred.view(), truth.view(), &dynamic).unwrap();
        assert!((v - 0.21).abs() < 1e-12);
        let empty = RegionMask::new(Array2::from_elem((2, 2), false), MaskKind::Dynamic);
        let v = wfe(pred.view(), truth.view(), &empty).unwrap();
        assert!((v - rmse(pred.view(), truth.view()).unwrap()).abs() < 1e-15);
        assert_eq!(wfe(truth.view(), truth.view(), &dynamic).unwrap(), 0.0);
    }

    fn rec(lead: usize, rmse: f64) -> EvalRecord {
        EvalRecord { sample_id: "s".into(), lead_time: lead, rmse, ssim: 1.0 - rmse, wfe: 2.0 * rmse }
    }

    #[test]
    fn temporal_curves() {
        assert_eq!(temporal_curve(&[rec(1, 0.5)], Metric::Rmse, 2, 60).unwrap(), vec![(1, 0.5)]);
        let rs = vec![rec(1, 0.2), rec(1, 0.4), rec(2, 9.0), rec(3, 0.1), rec(5, 0.3), rec(5, 0.5), rec(61, 1.0)];
        let c = temporal_curve(&rs, Metric::Rmse, 2, 60).unwrap();
        assert_eq!(c.len(), 3);
        assert!((c[0].1 - 0.3).abs() < 1e-15);
        assert_eq!((c[1].0, c[1].1), (3, 0.1));
        assert!((c[2].1 - 0.4).abs() < 1e-15);
        let w = temporal_curve(&rs, Metric::Wfe, 1, 2).unwrap();
        assert_eq!(w.len(), 2);
        assert!((w[1].1 - 18.0).abs() < 1e-15);
        assert!(temporal_curve(&[], Metric::Rmse, 2, 60).is_err());
        assert!((mean_over_leads(&rs, Metric::Rmse, 3).unwrap() - 9.7 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let rs = vec![rec(1, 0.25), rec(3, 0.125)];
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &rs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("sample_id,lead_time,rmse,ssim,wfe"));
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), rs);
    }

    proptest! {
        #[test]
        fn ssim_and_rmse_identities(a in prop::collection::vec(0.0f64..1.0, 64), b in prop::collection::vec(0.0f64..1.0, 64)) {
            let a = Array2::from_shape_vec((8, 8), a).unwrap();
            let b = Array2::from_shape_vec((8, 8), b).unwrap();
            let p = SsimParams::default();
            prop_assert_eq!(ssim(a.view(), a.view(), &p).unwrap(), 1.0);
            let s = ssim(a.view(), b.view(), &p).unwrap();
            prop_assert_eq!(s, ssim(b.view(), a.view(), &p).unwrap());
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(rmse(a.view(), b.view()).unwrap(), rmse(b.view(), a.view()).unwrap());
        }
    }
}
