//! Test-window reconstruction and per-lead metrics.

use std::collections::BTreeMap;

use hossnet_core::metrics::{detect_dynamic_region, evaluate_sequence, EvalRecord};
use hossnet_core::postproc::enforce_positive_direction;
use hossnet_core::{FieldFrame, MaskKind, RegionMask, SampleSequence};
use hossnet_model::tensor_io::{planes, stack_windows};
use hossnet_model::Network;
use ndarray::Array2;

use crate::config::Scenario;
use crate::data::Experiment;
use crate::{HarnessError, Result};

/// What to reconstruct for one test portion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestPlan {
    pub sample: usize,
    pub sample_id: String,
    /// Known damage steps fed to a Fracture→Fracture rollout; empty for Cauchy→Fracture.
    pub context: Vec<usize>,
    /// Steps whose damage is predicted and scored, in order.
    pub targets: Vec<usize>,
    /// Last known ground-truth step before the targets, if any.
    pub anchor: Option<usize>,
}

/// Anything that turns a plan into normalized damage planes, one per target.
pub trait Reconstructor {
    fn reconstruct(&self, exp: &Experiment, plan: &TestPlan) -> Result<Vec<Array2<f64>>>;
}

/// Returns the ground truth.
pub struct TruthOracle;

impl Reconstructor for TruthOracle {
    fn reconstruct(&self, exp: &Experiment, plan: &TestPlan) -> Result<Vec<Array2<f64>>> {
        plan.targets.iter().map(|&t| Ok(exp.damage_frame(plan.sample, t).plane()?.to_owned())).collect()
    }
}

/// Repeats the anchor frame (zeros without one).
pub struct Persistence;

impl Reconstructor for Persistence {
    fn reconstruct(&self, exp: &Experiment, plan: &TestPlan) -> Result<Vec<Array2<f64>>> {
        let frame = match plan.anchor {
            Some(a) => exp.damage_frame(plan.sample, a).plane()?.to_owned(),
            None => Array2::zeros(exp.dims()),
        };
        Ok(vec![frame; plan.targets.len()])
    }
}

impl Reconstructor for Network {
    fn reconstruct(&self, exp: &Experiment, plan: &TestPlan) -> Result<Vec<Array2<f64>>> {
        let l = self.config().window_length;
        match exp.config.scenario {
            Scenario::CauchyToFracture => {
                // consecutive chunks of L target steps; a short tail reuses the last L
                let n = plan.targets.len();
                let mut out: Vec<Array2<f64>> = Vec::with_capacity(n);
                let mut start = 0;
                while start < n {
                    let (lo, hi) = if start + l <= n { (start, start + l) } else { (n.saturating_sub(l), n) };
                    let frames: Vec<FieldFrame> = plan.targets[lo..hi].iter().map(|&t| exp.input_frame(plan.sample, t).clone()).collect();
                    let pred = planes(&self.predict(&stack_windows(&[&frames])?, hi - lo)?);
                    out.extend(pred.into_iter().skip(start - lo));
                    start = hi;
                }
                Ok(out)
            }
            Scenario::FractureToFracture => {
                if plan.context.len() < l {
                    return Err(HarnessError::Config(format!("rollout needs {l} context steps, the plan has {}", plan.context.len())));
                }
                let mut history: Vec<FieldFrame> = plan.context[plan.context.len() - l..].iter().map(|&t| exp.damage_frame(plan.sample, t).clone()).collect();
                let mut out = Vec::with_capacity(plan.targets.len());
                for &t in &plan.targets {
                    let window = &history[history.len() - l..];
                    let pred = planes(&self.predict(&stack_windows(&[window])?, l)?);
                    let next = pred.into_iter().last().expect("non-empty window");
                    history.push(FieldFrame::damage(next.clone(), t));
                    out.push(next);
                }
                Ok(out)
            }
        }
    }
}

/// One plan per test portion.
///
/// Cauchy→Fracture predicts every test step from its given inputs.
/// Fracture→Fracture rolls out from the `window` training steps right before
/// the test portion when they exist and are consecutive; otherwise the first
/// `window` test steps become context and are not scored.
pub fn test_plans(exp: &Experiment, window: usize) -> Result<Vec<TestPlan>> {
    let mut plans = Vec::new();
    for p in &exp.split.test {
        let Some(&first) = p.steps.first() else { continue };
        let train = exp.split.train_steps_of(p.sample);
        let before: Vec<usize> = train.iter().copied().filter(|&t| t < first).collect();
        let plan = match exp.config.scenario {
            Scenario::CauchyToFracture => TestPlan {
                sample: p.sample,
                sample_id: p.sample_id.clone(),
                context: vec![],
                targets: p.steps.clone(),
                anchor: before.last().copied(),
            },
            Scenario::FractureToFracture => {
                let tail = &before[before.len().saturating_sub(window)..];
                let history_ok = tail.len() == window && tail.last() == Some(&(first - 1)) && tail.windows(2).all(|w| w[1] == w[0] + 1);
                let contiguous = p.steps.windows(2).all(|w| w[1] == w[0] + 1);
                if !contiguous {
                    return Err(HarnessError::Config("Fracture→Fracture rollout needs a contiguous test portion".into()));
                }
                let (context, targets) = if history_ok {
                    (tail.to_vec(), p.steps.clone())
                } else {
                    if p.steps.len() <= window {
                        return Err(HarnessError::Config(format!("test portion of {} steps leaves nothing to predict after {window} context steps", p.steps.len())));
                    }
                    (p.steps[..window].to_vec(), p.steps[window..].to_vec())
                };
                let anchor = context.last().copied();
                TestPlan { sample: p.sample, sample_id: p.sample_id.clone(), context, targets, anchor }
            }
        };
        plans.push(plan);
    }
    Ok(plans)
}

#[derive(Clone, Debug)]
pub struct SampleEvaluation {
    pub sample_id: String,
    pub steps: Vec<usize>,
    /// Predicted damage in physical units, after post-processing; frame `i` is `steps[i]`.
    pub prediction: SampleSequence,
    pub truth: SampleSequence,
    pub records: Vec<EvalRecord>,
}

/// Reconstruct, denormalize, optionally enforce non-decreasing damage, and score one plan.
pub fn evaluate_plan(exp: &Experiment, recon: &dyn Reconstructor, plan: &TestPlan, positive_direction: bool) -> Result<SampleEvaluation> {
    let pred = recon.reconstruct(exp, plan)?;
    if pred.len() != plan.targets.len() {
        return Err(HarnessError::Data(format!("reconstructor returned {} frames for {} targets", pred.len(), plan.targets.len())));
    }
    let raw = &exp.raw_damage[plan.sample];
    let frames = pred
        .into_iter()
        .enumerate()
        .map(|(i, p)| exp.norm.damage.denormalize_frame(&FieldFrame::damage(p, i)))
        .collect::<hossnet_core::Result<Vec<_>>>()?;
    let meta = BTreeMap::new();
    let mut prediction = SampleSequence::new(plan.sample_id.clone(), frames, meta.clone())?;
    if positive_direction {
        let anchor = match plan.anchor {
            Some(a) => raw.frame(a).clone().with_time_index(0),
            None => prediction.frame(0).clone(),
        };
        prediction = enforce_positive_direction(&prediction, &anchor)?;
    }
    let truth = SampleSequence::new(plan.sample_id.clone(), plan.targets.iter().enumerate().map(|(i, &t)| raw.frame(t).clone().with_time_index(i)).collect(), meta)?;
    let dynamic = if truth.len() >= 2 {
        detect_dynamic_region(&truth, (0, truth.len() - 1), exp.config.eval.change_threshold, exp.config.eval.dilation)?
    } else {
        let (h, w) = truth.dims();
        RegionMask::new(Array2::from_elem((h, w), false), MaskKind::Dynamic)
    };
    let records = evaluate_sequence(&prediction, &truth, &dynamic, &exp.config.eval.ssim)?;
    Ok(SampleEvaluation { sample_id: plan.sample_id.clone(), steps: plan.targets.clone(), prediction, truth, records })
}

/// Evaluate every test portion of the experiment's split.
pub fn evaluate(exp: &Experiment, recon: &dyn Reconstructor, window: usize, positive_direction: bool) -> Result<Vec<SampleEvaluation>> {
    test_plans(exp, window)?.iter().map(|p| evaluate_plan(exp, recon, p, positive_direction)).collect()
}
