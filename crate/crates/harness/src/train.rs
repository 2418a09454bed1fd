//! Minibatch training with Adam, validation and best-checkpoint tracking.

use std::path::Path;
use std::time::Instant;

use hossnet_autograd::{Adam, AdamConfig, Graph, Tensor};
use hossnet_core::{FieldFrame, RegionMask};
use hossnet_model::losses::subregion_masks;
use hossnet_model::tensor_io::stack_windows;
use hossnet_model::{build_extractor, checkpoint, total_loss, FeatureExtractor, LossReport, Mode, Network};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Experiment};
use crate::manifest::{source_revision, RunManifest};
use crate::variants::{setup, VariantSetup};
use crate::windows::{train_validation, training_windows, Window};
use crate::{io_err, HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossReport,
    pub validation: Option<LossReport>,
    pub optimizer_steps: u64,
}

pub struct TrainOutcome {
    /// Parameters at the best epoch.
    pub best: Network,
    pub last: Network,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub optimizer_steps: u64,
    pub train_windows: usize,
    pub validation_windows: usize,
}

/// Input and target tensors of a batch of windows.
struct Batch {
    input: Tensor,
    target: Tensor,
    masks: Option<Vec<RegionMask>>,
    len: usize,
}

fn batch(exp: &Experiment, windows: &[&Window], sub_region: bool) -> Result<Batch> {
    let inputs: Vec<Vec<FieldFrame>> = windows.iter().map(|w| w.inputs.iter().map(|&t| exp.input_frame(w.sample, t).clone()).collect()).collect();
    let targets: Vec<Vec<FieldFrame>> = windows.iter().map(|w| w.targets.iter().map(|&t| exp.damage_frame(w.sample, t).clone()).collect()).collect();
    let input = stack_windows(&inputs.iter().map(|v| v.as_slice()).collect::<Vec<_>>())?;
    let target = stack_windows(&targets.iter().map(|v| v.as_slice()).collect::<Vec<_>>())?;
    let steps = windows[0].inputs.len();
    let masks = sub_region.then(|| subregion_masks(&target, steps));
    Ok(Batch { input, target, masks, len: windows.len() })
}

fn accumulate(acc: &mut LossReport, r: &LossReport, weight: f64) {
    acc.mse += weight * r.mse;
    acc.perceptual += weight * r.perceptual;
    acc.optical += weight * r.optical;
    acc.total += weight * r.total;
}

fn scaled(r: LossReport, s: f64) -> LossReport {
    LossReport { mse: r.mse * s, perceptual: r.perceptual * s, optical: r.optical * s, total: r.total * s }
}

fn is_finite(r: &LossReport) -> bool {
    [r.mse, r.perceptual, r.optical, r.total].iter().all(|v| v.is_finite())
}

/// Train the variant described by `exp.config`. With `checkpoint_path`,
/// the best network so far is written there whenever it improves.
pub fn train_network(exp: &Experiment, checkpoint_path: Option<&Path>) -> Result<TrainOutcome> {
    let cfg = &exp.config;
    let VariantSetup { model, loss, sub_region } = setup(cfg);
    let steps = model.window_length;
    let windows = training_windows(&exp.split, cfg.scenario, steps, cfg.stride());
    if windows.is_empty() {
        return Err(HarnessError::Config(format!("no training windows of length {steps} fit the {} split", cfg.protocol)));
    }
    let (train_w, val_w) = train_validation(windows, cfg.train.validation_fraction);
    let extractor: Option<Box<dyn FeatureExtractor>> = if loss.weights.alpha_perc > 0.0 { Some(build_extractor(&cfg.loss.extractor)?) } else { None };
    let extractor = extractor.as_deref();

    let val_batches = val_w
        .chunks(cfg.train.batch_size)
        .map(|c| batch(exp, &c.iter().collect::<Vec<_>>(), sub_region))
        .collect::<Result<Vec<_>>>()?;

    let mut net = Network::new(model)?;
    let mut adam = Adam::new(AdamConfig { learning_rate: cfg.train.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train_w.len()).collect();
    let mut history = Vec::with_capacity(cfg.train.epochs);
    let mut best: Option<(f64, usize, Network)> = None;

    for epoch in 1..=cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossReport::default();
        for (bi, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let ws: Vec<&Window> = chunk.iter().map(|&i| &train_w[i]).collect();
            let b = batch(exp, &ws, sub_region)?;
            let mut g = Graph::new();
            let bind = net.bind(&mut g, true);
            let x = g.constant(b.input);
            let out = net.forward(&mut g, &bind, x, steps, Mode::Train)?;
            let (l, report) = total_loss(&mut g, out.output, &b.target, steps, b.masks.as_deref(), &loss, extractor)?;
            if !is_finite(&report) {
                return Err(HarnessError::Diverged { epoch, batch: bi, detail: format!("non-finite loss {report:?}") });
            }
            let grads = bind.gradients(&g.backward(l), net.params());
            if grads.iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
                return Err(HarnessError::Diverged { epoch, batch: bi, detail: "non-finite gradient".into() });
            }
            adam.step(net.params_mut(), &grads);
            net.apply_bn_updates(&out.bn_updates);
            accumulate(&mut acc, &report, b.len as f64);
        }
        let train_report = scaled(acc, 1.0 / train_w.len() as f64);

        let validation = if val_batches.is_empty() {
            None
        } else {
            let mut v = LossReport::default();
            for b in &val_batches {
                let mut g = Graph::new();
                let bind = net.bind(&mut g, false);
                let x = g.constant(b.input.clone());
                let out = net.forward(&mut g, &bind, x, steps, Mode::Eval)?;
                let (_, report) = total_loss(&mut g, out.output, &b.target, steps, b.masks.as_deref(), &loss, extractor)?;
                accumulate(&mut v, &report, b.len as f64);
            }
            Some(scaled(v, 1.0 / val_w.len() as f64))
        };
        if validation.as_ref().is_some_and(|v| !is_finite(v)) {
            return Err(HarnessError::Diverged { epoch, batch: 0, detail: format!("non-finite validation loss {validation:?}") });
        }

        let score = validation.as_ref().map_or(train_report.total, |v| v.total);
        log::info!(
            "epoch {epoch}/{}: train mse {:.6} total {:.6}{}",
            cfg.train.epochs,
            train_report.mse,
            train_report.total,
            validation.as_ref().map(|v| format!(", validation total {:.6}", v.total)).unwrap_or_default()
        );
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            if let Some(p) = checkpoint_path {
                checkpoint::save(&net, p)?;
            }
            best = Some((score, epoch, net.clone()));
        }
        history.push(EpochLog { epoch, train: train_report, validation, optimizer_steps: adam.steps_taken() });
    }

    let (best_score, best_epoch, best_net) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: best_net,
        last: net,
        history,
        best_epoch,
        best_score,
        optimizer_steps: adam.steps_taken(),
        train_windows: train_w.len(),
        validation_windows: val_w.len(),
    })
}

pub fn write_history(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_mse", "train_perceptual", "train_optical", "train_total", "val_mse", "val_perceptual", "val_optical", "val_total", "optimizer_steps"])?;
    for h in history {
        let v = h.validation.map(|v| [v.mse, v.perceptual, v.optical, v.total].map(|x| x.to_string()));
        let v = v.unwrap_or_else(|| std::array::from_fn(|_| String::new()));
        let mut row = vec![h.epoch.to_string()];
        row.extend([h.train.mse, h.train.perceptual, h.train.optical, h.train.total].map(|x| x.to_string()));
        row.extend(v);
        row.push(h.optimizer_steps.to_string());
        w.write_record(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Prepare the experiment, train, and write `config.toml`, `history.csv`,
/// `best.safetensors` and `manifest.json` into the run directory.
pub fn run_training(exp: &Experiment) -> Result<(TrainOutcome, RunManifest)> {
    let cfg = &exp.config;
    let dir = cfg.run_dir();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?).map_err(io_err(dir.join("config.toml")))?;
    let ckpt = dir.join("best.safetensors");
    let t0 = Instant::now();
    let outcome = train_network(exp, Some(&ckpt))?;
    let wall = t0.elapsed().as_secs_f64();
    let history = dir.join("history.csv");
    write_history(&history, &outcome.history)?;
    let manifest = RunManifest {
        run_name: cfg.run_name(),
        config: cfg.clone(),
        source_revision: source_revision(),
        dataset_hash: exp.dataset_hash.clone(),
        normalization: exp.norm.clone(),
        split: exp.split.clone(),
        wall_clock_seconds: wall,
        epochs_run: outcome.history.len(),
        optimizer_steps: outcome.optimizer_steps,
        final_loss: outcome.history.last().map(|h| h.train).unwrap_or_default(),
        best_epoch: outcome.best_epoch,
        best_score: outcome.best_score,
        checkpoint: ckpt,
        history,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok((outcome, manifest))
}

/// Load (or generate) the configured dataset and train on it.
pub fn train_from_config(cfg: &crate::ExperimentConfig) -> Result<(TrainOutcome, RunManifest)> {
    cfg.validate()?;
    let ds = Dataset::load_or_generate(&cfg.data.resolved_root(), &cfg.data)?;
    let exp = Experiment::prepare(cfg, &ds)?;
    run_training(&exp)
}
