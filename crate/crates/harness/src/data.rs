//! Datasets on disk and their normalized, split form for one experiment.

use std::path::Path;

use hossnet_core::container::{read_dataset, write_dataset};
use hossnet_core::datagen::{build_benchmark_set, derive_stress_channels};
use hossnet_core::{ChannelKind, FieldFrame, NormStats, SampleSequence};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DataConfig, ExperimentConfig, Scenario};
use crate::splits::{make_split, Split};
use crate::{HarnessError, Result};

/// Damage sequences with their derived stress channels, index-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub damage: Vec<SampleSequence>,
    pub stress: Vec<SampleSequence>,
}

/// Round every value to `f32`, the precision of the on-disk container, so
/// that a freshly generated dataset equals its reloaded copy.
fn to_storage_precision(seq: &SampleSequence) -> Result<SampleSequence> {
    let frames = seq
        .frames()
        .iter()
        .map(|f| FieldFrame::new(f.values().mapv(|v| v as f32 as f64), f.kind(), f.time_index()))
        .collect::<hossnet_core::Result<Vec<_>>>()?;
    Ok(seq.with_frames(frames)?)
}

impl Dataset {
    pub fn generate(cfg: &DataConfig) -> Result<Self> {
        let damage = build_benchmark_set(cfg.n_samples, &cfg.crack)?
            .iter()
            .map(to_storage_precision)
            .collect::<Result<Vec<_>>>()?;
        let stress = damage.iter().map(|d| derive_stress_channels(d).map_err(HarnessError::from).and_then(|s| to_storage_precision(&s))).collect::<Result<Vec<_>>>()?;
        Ok(Self { damage, stress })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_dataset(dir, &self.damage)?;
        write_dataset(dir, &self.stress)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let damage = read_dataset(dir, ChannelKind::FractureDamage)?;
        let stress = read_dataset(dir, ChannelKind::CauchyStress)?;
        if damage.is_empty() {
            return Err(HarnessError::Data(format!("no fracture-damage sequences in {}", dir.display())));
        }
        if damage.len() != stress.len() || damage.iter().zip(&stress).any(|(d, s)| d.sample_id != s.sample_id || d.len() != s.len()) {
            return Err(HarnessError::Data(format!("damage and stress sequences in {} do not pair up", dir.display())));
        }
        Ok(Self { damage, stress })
    }

    /// Load `dir` if it holds a dataset matching `cfg`, otherwise generate one and write it there.
    pub fn load_or_generate(dir: &Path, cfg: &DataConfig) -> Result<Self> {
        let has_data = dir.is_dir() && dir.read_dir().map_err(crate::io_err(dir))?.next().is_some();
        if !has_data {
            log::info!("generating {} samples into {}", cfg.n_samples, dir.display());
            let ds = Self::generate(cfg)?;
            ds.save(dir)?;
            return Ok(ds);
        }
        let ds = Self::load(dir)?;
        let (h, w) = ds.damage[0].dims();
        if ds.damage.len() != cfg.n_samples || ds.damage[0].len() != cfg.crack.n_steps || (h, w) != (cfg.crack.height, cfg.crack.width) {
            return Err(HarnessError::Data(format!(
                "{} holds {} samples of {} steps at {h}×{w}, the configuration asks for {} × {} at {}×{}; point data.root elsewhere or regenerate",
                dir.display(),
                ds.damage.len(),
                ds.damage[0].len(),
                cfg.n_samples,
                cfg.crack.n_steps,
                cfg.crack.height,
                cfg.crack.width
            )));
        }
        Ok(ds)
    }

    pub fn ids(&self) -> Vec<String> {
        self.damage.iter().map(|s| s.sample_id.clone()).collect()
    }

    pub fn n_steps(&self) -> usize {
        self.damage.iter().map(|s| s.len()).min().unwrap_or(0)
    }

    /// SHA-256 over ids, shapes and the little-endian bytes of every value.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for seq in self.damage.iter().chain(&self.stress) {
            h.update(seq.sample_id.as_bytes());
            h.update(seq.kind().to_string().as_bytes());
            let (r, c) = seq.dims();
            for n in [r, c, seq.channels(), seq.len()] {
                h.update((n as u64).to_le_bytes());
            }
            for f in seq.frames() {
                for v in f.values() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub damage: NormStats,
    pub stress: NormStats,
}

/// A dataset normalized with statistics fitted on the training steps of a split.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub split: Split,
    pub norm: Normalization,
    pub damage: Vec<SampleSequence>,
    pub stress: Vec<SampleSequence>,
    /// Damage in physical units, the reference for evaluation.
    pub raw_damage: Vec<SampleSequence>,
    pub dataset_hash: String,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig, dataset: &Dataset) -> Result<Self> {
        Self::prepare_with(config, dataset, None)
    }

    /// As [`Experiment::prepare`], reusing `norm` instead of refitting when given.
    pub fn prepare_with(config: &ExperimentConfig, dataset: &Dataset, norm: Option<Normalization>) -> Result<Self> {
        config.validate()?;
        let split = make_split(config.protocol, &dataset.ids(), dataset.n_steps(), config.held_out)?;
        let fit = |seqs: &[SampleSequence]| {
            NormStats::fit(split.train.iter().flat_map(|p| p.steps.iter().map(move |&t| seqs[p.sample].frame(t))))
        };
        let norm = match norm {
            Some(n) => n,
            None => Normalization { damage: fit(&dataset.damage)?, stress: fit(&dataset.stress)? },
        };
        let damage = dataset.damage.iter().map(|s| norm.damage.apply(s)).collect::<hossnet_core::Result<Vec<_>>>()?;
        let stress = dataset.stress.iter().map(|s| norm.stress.apply(s)).collect::<hossnet_core::Result<Vec<_>>>()?;
        Ok(Self { config: config.clone(), split, norm, damage, stress, raw_damage: dataset.damage.clone(), dataset_hash: dataset.hash() })
    }

    /// Network inputs of `sample` at step `t`.
    pub fn input_frame(&self, sample: usize, t: usize) -> &FieldFrame {
        match self.config.scenario {
            Scenario::CauchyToFracture => self.stress[sample].frame(t),
            Scenario::FractureToFracture => self.damage[sample].frame(t),
        }
    }

    pub fn damage_frame(&self, sample: usize, t: usize) -> &FieldFrame {
        self.damage[sample].frame(t)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.damage[0].dims()
    }
}

/// An all-zero damage frame at step `t`.
pub fn zero_damage(h: usize, w: usize, t: usize) -> FieldFrame {
    FieldFrame::new(Array3::zeros((h, w, 1)), ChannelKind::FractureDamage, t).expect("single channel")
}
