//! Fixed-length training windows drawn from the training portions.

use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::splits::Split;

/// Input and target time steps of one training example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub sample: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Windows of `length` steps starting every `stride` steps along each run of
/// training steps; both inputs and targets come from training steps only.
///
/// Cauchy→Fracture pairs each input step with the damage at the same step
/// and walks the portion's evenly spaced runs. Fracture→Fracture needs the
/// next step as target, so it walks runs of consecutive steps and every
/// window needs `length + 1` of them.
pub fn training_windows(split: &Split, scenario: Scenario, length: usize, stride: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for p in &split.train {
        match scenario {
            Scenario::CauchyToFracture => {
                for run in p.runs() {
                    let mut s = 0;
                    while s + length <= run.len() {
                        let steps = run[s..s + length].to_vec();
                        out.push(Window { sample: p.sample, inputs: steps.clone(), targets: steps });
                        s += stride;
                    }
                }
            }
            Scenario::FractureToFracture => {
                for run in p.contiguous_runs() {
                    let mut s = 0;
                    while s + length < run.len() {
                        out.push(Window { sample: p.sample, inputs: run[s..s + length].to_vec(), targets: run[s + 1..s + length + 1].to_vec() });
                        s += stride;
                    }
                }
            }
        }
    }
    out
}

/// Split off the last `fraction` of the windows for validation; at least
/// one window when the fraction is positive and two or more exist.
pub fn train_validation(mut windows: Vec<Window>, fraction: f64) -> (Vec<Window>, Vec<Window>) {
    let n = windows.len();
    let mut n_val = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.max(1);
    }
    n_val = n_val.min(n.saturating_sub(1));
    let val = windows.split_off(n - n_val);
    (windows, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splits::{split_interpolation, split_over_sample, InterpolationMode};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn cauchy_windows_tile_each_training_sample() {
        let split = split_over_sample(&ids(3), 12, None).unwrap();
        let w = training_windows(&split, Scenario::CauchyToFracture, 5, 5);
        assert_eq!(w.len(), 4);
        assert_eq!(w[1], Window { sample: 0, inputs: vec![5, 6, 7, 8, 9], targets: vec![5, 6, 7, 8, 9] });
        assert!(w.iter().all(|x| x.sample != 2));
    }

    #[test]
    fn fracture_targets_are_next_steps_within_blocks() {
        let split = split_interpolation(&ids(1), 0, 30, InterpolationMode::Blocks).unwrap();
        let w = training_windows(&split, Scenario::FractureToFracture, 3, 3);
        // runs 0..10 and 20..30 each fit three windows of 3 + 1 steps
        assert_eq!(w.len(), 6);
        assert_eq!(w[3].inputs, vec![20, 21, 22]);
        assert_eq!(w[3].targets, vec![21, 22, 23]);
        assert!(w.iter().all(|x| x.targets.iter().all(|t| *t < 10 || *t >= 20)));
    }

    #[test]
    fn sparse_cauchy_windows_use_strided_steps() {
        let split = split_interpolation(&ids(1), 0, 60, InterpolationMode::Sparse).unwrap();
        let w = training_windows(&split, Scenario::CauchyToFracture, 3, 3);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].inputs, vec![0, 10, 20]);
    }

    #[test]
    fn validation_takes_the_tail() {
        let mk = |n: usize| (0..n).map(|i| Window { sample: i, inputs: vec![], targets: vec![] }).collect::<Vec<_>>();
        let (t, v) = train_validation(mk(60), 0.1);
        assert_eq!((t.len(), v.len()), (54, 6));
        assert_eq!(v[0].sample, 54);
        let (t, v) = train_validation(mk(3), 0.1);
        assert_eq!((t.len(), v.len()), (2, 1));
        let (t, v) = train_validation(mk(1), 0.1);
        assert_eq!((t.len(), v.len()), (1, 0));
        let (t, v) = train_validation(mk(5), 0.0);
        assert_eq!((t.len(), v.len()), (5, 0));
    }
}
