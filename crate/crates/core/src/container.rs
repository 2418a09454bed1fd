//! On-disk dataset container.
//!
//! A dataset is a directory holding, per sequence, a raw tensor file
//! `<stem>.bin` and a JSON sidecar `<stem>.json`, where the stem is
//! `<sample_id>.<channel_kind>`. The tensor file is row-major `H×W×C×T`
//! (time fastest) little-endian `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::{ChannelKind, CoreError, FieldFrame, NormStats, Result, SampleSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub sample_id: String,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub channel_kind: ChannelKind,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
}

pub fn stem(sample_id: &str, kind: ChannelKind) -> String {
    format!("{sample_id}.{kind}")
}

/// Number of `f32` values written per buffered chunk.
const CHUNK: usize = 1 << 14;

pub fn write_sequence(dir: &Path, seq: &SampleSequence, norm_stats: Option<&NormStats>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let (h, w) = seq.dims();
    let (c, t) = (seq.channels(), seq.len());
    let stem = stem(&seq.sample_id, seq.kind());
    let bin_path = dir.join(format!("{stem}.bin"));
    let json_path = dir.join(format!("{stem}.json"));

    let file = fs::File::create(&bin_path).map_err(|e| CoreError::io(&bin_path, e))?;
    let mut out = BufWriter::new(file);
    let mut chunk: Vec<u8> = Vec::with_capacity(CHUNK * 4);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                for frame in seq.frames() {
                    chunk.extend_from_slice(&(frame.values()[[y, x, ch]] as f32).to_le_bytes());
                    if chunk.len() >= CHUNK * 4 {
                        out.write_all(&chunk).map_err(|e| CoreError::io(&bin_path, e))?;
                        chunk.clear();
                    }
                }
            }
        }
    }
    out.write_all(&chunk).map_err(|e| CoreError::io(&bin_path, e))?;
    out.flush().map_err(|e| CoreError::io(&bin_path, e))?;

    let sidecar = Sidecar {
        sample_id: seq.sample_id.clone(),
        height: h,
        width: w,
        channels: c,
        steps: t,
        channel_kind: seq.kind(),
        metadata: seq.metadata.clone(),
        norm_stats: norm_stats.cloned(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&json_path, json).map_err(|e| CoreError::io(&json_path, e))?;
    Ok(bin_path)
}

pub fn read_sidecar(dir: &Path, stem: &str) -> Result<Sidecar> {
    let path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Read one sequence; returns it with any statistics stored in its sidecar.
pub fn read_sequence(dir: &Path, stem: &str) -> Result<(SampleSequence, Option<NormStats>)> {
    let sc = read_sidecar(dir, stem)?;
    if sc.channels != sc.channel_kind.channels() {
        return Err(CoreError::Format {
            path: dir.join(format!("{stem}.json")),
            reason: format!("{} sequences have {} channels, sidecar says {}", sc.channel_kind, sc.channel_kind.channels(), sc.channels),
        });
    }
    let path = dir.join(format!("{stem}.bin"));
    let n = sc.height * sc.width * sc.channels * sc.steps;
    let mut bytes = Vec::with_capacity(n * 4);
    let file = fs::File::open(&path).map_err(|e| CoreError::io(&path, e))?;
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| CoreError::io(&path, e))?;
    if bytes.len() != n * 4 {
        return Err(CoreError::Format { path, reason: format!("expected {} bytes, found {}", n * 4, bytes.len()) });
    }
    let mut frames: Vec<Array3<f64>> = (0..sc.steps).map(|_| Array3::zeros((sc.height, sc.width, sc.channels))).collect();
    let mut it = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    for y in 0..sc.height {
        for x in 0..sc.width {
            for c in 0..sc.channels {
                for frame in frames.iter_mut() {
                    frame[[y, x, c]] = it.next().expect("length checked");
                }
            }
        }
    }
    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(t, v)| FieldFrame::new(v, sc.channel_kind, t))
        .collect::<Result<Vec<_>>>()?;
    let seq = SampleSequence::new(sc.sample_id, frames, sc.metadata)?;
    Ok((seq, sc.norm_stats))
}

/// Stems of every sequence in `dir` of the given kind, sorted.
pub fn list_stems(dir: &Path, kind: ChannelKind) -> Result<Vec<String>> {
    let suffix = format!(".{kind}.json");
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))? {
        let entry = entry.map_err(|e| CoreError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(&suffix) {
            stems.push(stem(id, kind));
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn write_dataset(dir: &Path, sequences: &[SampleSequence]) -> Result<()> {
    for s in sequences {
        write_sequence(dir, s, None)?;
    }
    Ok(())
}

/// All sequences of `kind` in `dir`, ordered by sample id.
pub fn read_dataset(dir: &Path, kind: ChannelKind) -> Result<Vec<SampleSequence>> {
    list_stems(dir, kind)?.iter().map(|s| read_sequence(dir, s).map(|(seq, _)| seq)).collect()
}
