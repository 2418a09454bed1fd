//! The four compared models as changes to one base configuration.

use hossnet_model::{LossSettings, LossWeights, ModelConfig};

use crate::config::{ExperimentConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSetup {
    pub model: ModelConfig,
    pub loss: LossSettings,
    pub sub_region: bool,
}

/// - HRU: encoder-decoder without the recurrent layer, pixel loss only.
/// - CNN_LSTM: plain convolutional encoder, LSTM, decoder; no residual blocks, pixel loss only.
/// - HOSSnet_F: the full model without the perceptual term.
/// - HOSSnet: the full model.
pub fn setup(cfg: &ExperimentConfig) -> VariantSetup {
    let mut model = ModelConfig { in_channels: cfg.scenario.in_channels(), seed: cfg.seed, ..cfg.model.clone() };
    let full = LossWeights { alpha_perc: cfg.loss.alpha_perc, alpha_op: cfg.loss.alpha_op };
    let pixel_only = LossWeights { alpha_perc: 0.0, alpha_op: 0.0 };
    let (weights, sub_region) = match cfg.variant {
        Variant::Hru => {
            model.use_rtl = false;
            (pixel_only, false)
        }
        Variant::CnnLstm => {
            model.use_rtl = true;
            model.n_res_blocks_per_stage = 0;
            (pixel_only, false)
        }
        Variant::HossnetF => {
            model.use_rtl = true;
            (LossWeights { alpha_perc: 0.0, ..full }, cfg.loss.sub_region)
        }
        Variant::Hossnet => {
            model.use_rtl = true;
            (full, cfg.loss.sub_region)
        }
    };
    let loss = LossSettings { weights, flow: cfg.flow, magnitude_floor: cfg.loss.magnitude_floor };
    VariantSetup { model, loss, sub_region }
}
