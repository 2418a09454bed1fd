use serde::{Deserialize, Serialize};

use crate::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
    None,
}

/// How the upsampled latent is merged with the encoder skip activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkipMerge {
    #[default]
    Add,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    /// Nearest-neighbour ×2 after a 3×3 convolution.
    #[default]
    Nearest,
    /// Learned 2×2 stride-2 transposed convolution.
    Transposed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub n_res_blocks_per_stage: usize,
    pub latent_state_size: usize,
    pub window_length: usize,
    pub output_activation: OutputActivation,
    pub skip_merge: SkipMerge,
    pub upsample: Upsample,
    /// Without the recurrent layer the network maps each frame independently.
    pub use_rtl: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_width: 64,
            n_res_blocks_per_stage: 3,
            latent_state_size: 64,
            window_length: 5,
            output_activation: OutputActivation::Sigmoid,
            skip_merge: SkipMerge::Add,
            upsample: Upsample::Nearest,
            use_rtl: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.in_channels == 0 {
            return bad("in_channels must be at least 1");
        }
        if self.base_width == 0 {
            return bad("base_width must be at least 1");
        }
        if self.window_length == 0 {
            return bad("window_length must be at least 1");
        }
        if self.use_rtl && self.latent_state_size == 0 {
            return bad("latent_state_size must be at least 1");
        }
        Ok(())
    }
}
