//! Experiment configuration, its presets and TOML loading.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hossnet_core::datagen::CrackSpec;
use hossnet_core::flow::{FlowSolverParams, DEFAULT_MAGNITUDE_FLOOR};
use hossnet_core::metrics::{SsimParams, DEFAULT_CHANGE_THRESHOLD, DEFAULT_DILATION};
use hossnet_model::{ExtractorSpec, LossWeights, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::{io_err, HarnessError, Result};

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "HOSSNET_DATA_DIR";

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident = $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = HarnessError;

            fn from_str(s: &str) -> Result<Self> {
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s) || v.as_str().replace('_', "-").eq_ignore_ascii_case(s))
                    .ok_or_else(|| {
                        let names: Vec<_> = $name::ALL.iter().map(|v| v.as_str()).collect();
                        HarnessError::Config(format!("unknown {} {s:?}; expected one of {}", stringify!($name), names.join(", ")))
                    })
            }
        }
    };
}

named_enum!(
    /// What the network reads.
    Scenario { CauchyToFracture = "cauchy_to_fracture", FractureToFracture = "fracture_to_fracture" }
);

named_enum!(Protocol {
    OverSample = "over_sample",
    OverTime = "over_time",
    InterpolationBlocks = "interpolation_blocks",
    InterpolationSparse = "interpolation_sparse",
});

named_enum!(Variant { Hru = "HRU", CnnLstm = "CNN_LSTM", HossnetF = "HOSSnet_F", Hossnet = "HOSSnet" });

named_enum!(Preset { Desk = "desk", Paper = "paper" });

impl Scenario {
    pub fn in_channels(self) -> usize {
        match self {
            Scenario::CauchyToFracture => 3,
            Scenario::FractureToFracture => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; falls back to `$HOSSNET_DATA_DIR`, then `data`.
    pub root: Option<PathBuf>,
    pub n_samples: usize,
    pub crack: CrackSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { root: None, n_samples: 6, crack: CrackSpec::default() }
    }
}

impl DataConfig {
    pub fn resolved_root(&self) -> PathBuf {
        self.root
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Fraction of training windows, taken from the end, held out for validation.
    pub validation_fraction: f64,
    /// Start offset between consecutive training windows; the window length when unset.
    pub window_stride: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-4, epochs: 100, batch_size: 4, validation_fraction: 0.1, window_stride: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha_perc: f64,
    pub alpha_op: f64,
    pub magnitude_floor: f64,
    /// Restrict the pixel terms to the changing part of each training window.
    pub sub_region: bool,
    pub extractor: ExtractorSpec,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            alpha_perc: w.alpha_perc,
            alpha_op: w.alpha_op,
            magnitude_floor: DEFAULT_MAGNITUDE_FLOOR,
            sub_region: true,
            extractor: ExtractorSpec::random_conv(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Leads averaged in the summary table.
    pub summary_steps: usize,
    pub curve_interval: usize,
    pub curve_max_lead: usize,
    pub triptych_leads: Vec<usize>,
    pub change_threshold: f64,
    pub dilation: usize,
    pub ssim: SsimParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            summary_steps: 50,
            curve_interval: 2,
            curve_max_lead: 60,
            triptych_leads: vec![1, 11, 21, 31, 41, 51],
            change_threshold: DEFAULT_CHANGE_THRESHOLD,
            dilation: DEFAULT_DILATION,
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub protocol: Protocol,
    pub variant: Variant,
    pub seed: u64,
    /// Index of the held-out (or single interpolation) sample; the last one when unset.
    pub held_out: Option<usize>,
    pub positive_direction: bool,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    /// `in_channels` and `seed` are overwritten from the scenario and the
    /// experiment seed; the variant may switch off the recurrence or the
    /// residual blocks.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub flow: FlowSolverParams,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// 6 samples × 60 steps × 32×32, 100 epochs, a narrow network and the
    /// random-convolution perceptual extractor.
    pub fn desk() -> Self {
        Self {
            scenario: Scenario::CauchyToFracture,
            protocol: Protocol::OverSample,
            variant: Variant::Hossnet,
            seed: 0,
            held_out: None,
            positive_direction: true,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            model: ModelConfig { base_width: 8, latent_state_size: 8, ..ModelConfig::default() },
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            flow: FlowSolverParams::default(),
            eval: EvalConfig::default(),
        }
    }

    /// 300 steps, 500 epochs, full-width network and VGG16 features.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.data.crack.n_steps = 300;
        c.train.epochs = 500;
        c.model = ModelConfig::default();
        c.loss.extractor = ExtractorSpec::default();
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Overlay a TOML document on a preset: keys present in the file win,
    /// everything else keeps the preset's value.
    pub fn from_toml_str(base: Preset, text: &str) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text)?;
        let mut merged = match toml::Value::try_from(Self::preset(base)).map_err(|e| HarnessError::Config(e.to_string()))? {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        merge(&mut merged, overlay);
        let cfg: Self = toml::Value::Table(merged).try_into()?;
        Ok(cfg)
    }

    pub fn load(base: Preset, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(base, &text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn run_name(&self) -> String {
        format!("{}-{}-{}-seed{}", self.scenario, self.protocol, self.variant, self.seed)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_name())
    }

    pub fn held_out_index(&self) -> usize {
        self.held_out.unwrap_or(self.data.n_samples.saturating_sub(1))
    }

    pub fn stride(&self) -> usize {
        self.train.window_stride.unwrap_or(self.model.window_length)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.train.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.train.learning_rate));
        }
        if self.train.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.train.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.train.validation_fraction) {
            return bad(format!("validation_fraction must lie in [0, 1), got {}", self.train.validation_fraction));
        }
        if self.stride() == 0 {
            return bad("window_stride must be at least 1".into());
        }
        if self.held_out_index() >= self.data.n_samples {
            return bad(format!("held_out {} is out of range for {} samples", self.held_out_index(), self.data.n_samples));
        }
        if self.scenario == Scenario::FractureToFracture && self.protocol == Protocol::InterpolationSparse {
            return bad("the sparse interpolation protocol has no consecutive training frames to learn next-step prediction from; use cauchy_to_fracture".into());
        }
        if !(self.loss.magnitude_floor > 0.0) {
            return bad(format!("magnitude_floor must be positive, got {}", self.loss.magnitude_floor));
        }
        if self.eval.curve_interval == 0 {
            return bad("curve_interval must be at least 1".into());
        }
        self.data.crack.validate()?;
        self.flow.validate()?;
        LossWeights { alpha_perc: self.loss.alpha_perc, alpha_op: self.loss.alpha_op }.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
