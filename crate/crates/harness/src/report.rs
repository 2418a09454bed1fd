//! CSV tables, curve plots and image triptychs for an evaluation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hossnet_core::metrics::{mean_over_leads, read_records_csv, temporal_curve, write_records_csv, EvalRecord, Metric};
use image::{Rgb, RgbImage};
use ndarray::Array2;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::evaluate::SampleEvaluation;
use crate::{io_err, HarnessError, Result};

/// Mean metrics over the first `leads` lead times of one sample, or of all samples (`sample_id = "all"`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub sample_id: String,
    pub leads: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub wfe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub lead_time: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub wfe: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ReportFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub curves: PathBuf,
    pub curves_png: PathBuf,
    pub triptychs: Vec<PathBuf>,
}

pub fn all_records(evals: &[SampleEvaluation]) -> Vec<EvalRecord> {
    evals.iter().flat_map(|e| e.records.iter().cloned()).collect()
}

fn summary_row(run: &str, sample_id: &str, records: &[EvalRecord], leads: usize) -> Option<SummaryRow> {
    let m = |metric| mean_over_leads(records, metric, leads);
    let n = records.iter().filter(|r| r.lead_time <= leads).map(|r| r.lead_time).max()?;
    Some(SummaryRow { run: run.into(), sample_id: sample_id.into(), leads: n, rmse: m(Metric::Rmse)?, ssim: m(Metric::Ssim)?, wfe: m(Metric::Wfe)? })
}

/// One row per sample followed by the pooled `all` row.
pub fn summarize(run: &str, evals: &[SampleEvaluation], leads: usize) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = evals.iter().filter_map(|e| summary_row(run, &e.sample_id, &e.records, leads)).collect();
    if let Some(all) = summary_row(run, "all", &all_records(evals), leads) {
        rows.push(all);
    }
    rows
}

pub fn curves(records: &[EvalRecord], cfg: &EvalConfig) -> Result<Vec<CurveRow>> {
    let c = |m| temporal_curve(records, m, cfg.curve_interval, cfg.curve_max_lead);
    let (r, s, w) = (c(Metric::Rmse)?, c(Metric::Ssim)?, c(Metric::Wfe)?);
    Ok(r.iter().zip(&s).zip(&w).map(|((&(lead, rmse), &(_, ssim)), &(_, wfe))| CurveRow { lead_time: lead, rmse, ssim, wfe }).collect())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    read_rows(path)
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    read_rows(path)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EvalRecord>> {
    Ok(read_records_csv(File::open(path).map_err(io_err(path))?)?)
}

const PANEL_W: u32 = 320;
const PANEL_H: u32 = 240;
const PALETTE: [RGBColor; 6] = [RGBColor(31, 119, 180), RGBColor(255, 127, 14), RGBColor(44, 160, 44), RGBColor(214, 39, 40), RGBColor(148, 103, 189), RGBColor(140, 86, 75)];

fn plot_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Image(e.to_string())
}

/// RMSE, SSIM and WFE panels side by side, one line per series. The image
/// carries no text; the series order matches the accompanying CSV.
pub fn plot_curves(path: &Path, series: &[&[CurveRow]]) -> Result<()> {
    let (w, h) = (PANEL_W * 3, PANEL_H);
    let mut buf = vec![255u8; (w * h * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut buf, (w, h)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let panels = root.split_evenly((1, 3));
        let getters: [fn(&CurveRow) -> f64; 3] = [|r| r.rmse, |r| r.ssim, |r| r.wfe];
        for (panel, get) in panels.iter().zip(getters) {
            let pts = series.iter().flat_map(|s| s.iter());
            let max_lead = pts.clone().map(|r| r.lead_time).max().unwrap_or(1).max(2) as f64;
            let (lo, hi) = pts.map(get).filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            let (lo, hi) = if lo.is_finite() { (lo, if hi > lo { hi } else { lo + 1e-6 }) } else { (0.0, 1.0) };
            let pad = 0.05 * (hi - lo);
            let mut chart = ChartBuilder::on(panel)
                .margin(12)
                .build_cartesian_2d(1.0..max_lead, (lo - pad)..(hi + pad))
                .map_err(plot_err)?;
            chart.configure_mesh().x_labels(0).y_labels(0).x_max_light_lines(0).y_max_light_lines(0).draw().map_err(plot_err)?;
            for (i, s) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                chart
                    .draw_series(LineSeries::new(s.iter().map(|r| (r.lead_time as f64, get(r))), color.stroke_width(2)))
                    .map_err(plot_err)?;
            }
        }
        root.present().map_err(plot_err)?;
    }
    let img = RgbImage::from_raw(w, h, buf).expect("buffer sized for the image");
    img.save(path).map_err(plot_err)
}

fn gray(v: f64) -> Rgb<u8> {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([g, g, g])
}

/// Blue (zero) to red (largest difference in the triptych).
fn heat(v: f64) -> Rgb<u8> {
    let t = v.clamp(0.0, 1.0);
    Rgb([(255.0 * t).round() as u8, (64.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8, (255.0 * (1.0 - t)).round() as u8])
}

/// Predicted (top), true (middle) and |difference| (bottom) damage at the
/// requested leads, each frame scaled up by `scale`.
pub fn write_triptych(path: &Path, eval: &SampleEvaluation, leads: &[usize], scale: u32) -> Result<Option<PathBuf>> {
    let pick: Vec<usize> = leads.iter().copied().filter(|&l| l >= 1 && l <= eval.records.len()).collect();
    if pick.is_empty() {
        return Ok(None);
    }
    let pp = eval.prediction.planes()?;
    let tp = eval.truth.planes()?;
    let (fh, fw) = eval.truth.dims();
    let gap = 2u32;
    let (cw, ch) = (fw as u32 * scale, fh as u32 * scale);
    let w = pick.len() as u32 * (cw + gap) + gap;
    let h = 3 * (ch + gap) + gap;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let diffs: Vec<Array2<f64>> = pick.iter().map(|&l| (&pp[l - 1] - &tp[l - 1]).mapv(f64::abs)).collect();
    let dmax = diffs.iter().flat_map(|d| d.iter().copied()).fold(0.0, f64::max).max(1e-12);
    for (col, &lead) in pick.iter().enumerate() {
        let x0 = gap + col as u32 * (cw + gap);
        let rows: [(&Array2<f64>, bool); 3] = [(&pp[lead - 1], false), (&tp[lead - 1], false), (&diffs[col], true)];
        for (row, (plane, is_diff)) in rows.iter().enumerate() {
            let y0 = gap + row as u32 * (ch + gap);
            for ((y, x), &v) in plane.indexed_iter() {
                let c = if *is_diff { heat(v / dmax) } else { gray(v) };
                for dy in 0..scale {
                    for dx in 0..scale {
                        img.put_pixel(x0 + x as u32 * scale + dx, y0 + y as u32 * scale + dy, c);
                    }
                }
            }
        }
    }
    img.save(path).map_err(plot_err)?;
    Ok(Some(path.to_path_buf()))
}

fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Write `metrics.csv`, `summary.csv`, `curves.csv`, `curves.png` and one
/// `triptych_<sample>.png` per sample into `dir`.
pub fn write_report(dir: &Path, run: &str, evals: &[SampleEvaluation], cfg: &EvalConfig) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let records = all_records(evals);
    if records.is_empty() {
        return Err(HarnessError::Data("no evaluation records to report".into()));
    }
    let metrics = dir.join("metrics.csv");
    write_records_csv(BufWriter::new(File::create(&metrics).map_err(io_err(&metrics))?), &records)?;
    let summary = dir.join("summary.csv");
    write_rows(&summary, &summarize(run, evals, cfg.summary_steps))?;
    let curve_rows = curves(&records, cfg)?;
    let curves_csv = dir.join("curves.csv");
    write_rows(&curves_csv, &curve_rows)?;
    let curves_png = dir.join("curves.png");
    plot_curves(&curves_png, &[&curve_rows])?;
    let mut triptychs = Vec::new();
    for e in evals {
        let (h, w) = e.truth.dims();
        let scale = (128 / h.max(w)).max(1) as u32;
        if let Some(p) = write_triptych(&dir.join(format!("triptych_{}.png", safe_name(&e.sample_id))), e, &cfg.triptych_leads, scale)? {
            triptychs.push(p);
        }
    }
    Ok(ReportFiles { metrics, summary, curves: curves_csv, curves_png, triptychs })
}

/// Gather the pooled summary and curves of several evaluated runs into
/// `comparison.csv` and `comparison_curves.csv`, and overlay the curves in `comparison.png`.
pub fn compare_runs(report_dirs: &[(String, PathBuf)], out: &Path) -> Result<Vec<SummaryRow>> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut rows = Vec::new();
    let mut all_curves = Vec::new();
    for (name, dir) in report_dirs {
        let summary = read_summary(&dir.join("summary.csv"))?;
        let pooled = summary.into_iter().find(|r| r.sample_id == "all").ok_or_else(|| HarnessError::Data(format!("{} has no pooled summary row", dir.display())))?;
        rows.push(SummaryRow { run: name.clone(), ..pooled });
        all_curves.push((name.clone(), read_curves(&dir.join("curves.csv"))?));
    }
    write_rows(&out.join("comparison.csv"), &rows)?;
    #[derive(Serialize)]
    struct Labeled<'a> {
        run: &'a str,
        lead_time: usize,
        rmse: f64,
        ssim: f64,
        wfe: f64,
    }
    let labeled: Vec<Labeled> = all_curves
        .iter()
        .flat_map(|(n, c)| c.iter().map(move |r| Labeled { run: n, lead_time: r.lead_time, rmse: r.rmse, ssim: r.ssim, wfe: r.wfe }))
        .collect();
    write_rows(&out.join("comparison_curves.csv"), &labeled)?;
    let series: Vec<&[CurveRow]> = all_curves.iter().map(|(_, c)| c.as_slice()).collect();
    plot_curves(&out.join("comparison.png"), &series)?;
    Ok(rows)
}

/// Per-lead means pooled over samples, keyed by lead.
pub fn mean_by_lead(records: &[EvalRecord], metric: Metric) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.lead_time).or_default();
        e.0 += metric.of(r);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
