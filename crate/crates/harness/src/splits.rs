//! Train/test splits over (sample, time step) pairs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::Protocol;
use crate::{HarnessError, Result};

/// Some time steps of one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Portion {
    pub sample: usize,
    pub sample_id: String,
    /// Strictly increasing time indices.
    pub steps: Vec<usize>,
}

impl Portion {
    fn new(sample: usize, ids: &[String], steps: impl IntoIterator<Item = usize>) -> Self {
        Self { sample, sample_id: ids[sample].clone(), steps: steps.into_iter().collect() }
    }

    /// Maximal runs with the portion's smallest step spacing: contiguous
    /// blocks for block splits, the whole portion for an evenly strided one.
    pub fn runs(&self) -> Vec<&[usize]> {
        let Some(spacing) = self.steps.windows(2).map(|w| w[1] - w[0]).min() else {
            return if self.steps.is_empty() { vec![] } else { vec![&self.steps[..]] };
        };
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..self.steps.len() {
            if self.steps[i] - self.steps[i - 1] != spacing {
                out.push(&self.steps[start..i]);
                start = i;
            }
        }
        out.push(&self.steps[start..]);
        out
    }

    /// Runs of consecutive time steps.
    pub fn contiguous_runs(&self) -> Vec<&[usize]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.steps.len() {
            if i == self.steps.len() || self.steps[i] != self.steps[i - 1] + 1 {
                if i > start {
                    out.push(&self.steps[start..i]);
                }
                start = i;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub protocol: Protocol,
    pub n_steps: usize,
    pub train: Vec<Portion>,
    pub test: Vec<Portion>,
}

fn pairs(portions: &[Portion]) -> BTreeSet<(String, usize)> {
    portions.iter().flat_map(|p| p.steps.iter().map(move |&t| (p.sample_id.clone(), t))).collect()
}

impl Split {
    pub fn train_pairs(&self) -> BTreeSet<(String, usize)> {
        pairs(&self.train)
    }

    pub fn test_pairs(&self) -> BTreeSet<(String, usize)> {
        pairs(&self.test)
    }

    /// Errors if any (sample id, time index) pair is both trained and tested on.
    pub fn check_disjoint(&self) -> Result<()> {
        let train = self.train_pairs();
        if let Some((id, t)) = self.test_pairs().intersection(&train).next() {
            return Err(HarnessError::Split(format!("{:?} split leaks ({id}, {t}) into both train and test", self.protocol)));
        }
        for p in self.train.iter().chain(&self.test) {
            if p.steps.windows(2).any(|w| w[0] >= w[1]) || p.steps.last().is_some_and(|&t| t >= self.n_steps) {
                return Err(HarnessError::Split(format!("portion of {} has unordered or out-of-range steps", p.sample_id)));
            }
        }
        Ok(())
    }

    /// Sorted training steps of `sample`.
    pub fn train_steps_of(&self, sample: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.train.iter().filter(|p| p.sample == sample).flat_map(|p| p.steps.iter().copied()).collect();
        s.sort_unstable();
        s
    }
}

fn check_inputs(ids: &[String], n_steps: usize, min_samples: usize) -> Result<()> {
    if ids.len() < min_samples {
        return Err(HarnessError::Split(format!("need at least {min_samples} samples, got {}", ids.len())));
    }
    if n_steps < 2 {
        return Err(HarnessError::Split(format!("need at least 2 time steps, got {n_steps}")));
    }
    let unique: BTreeSet<_> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(HarnessError::Split("sample ids are not distinct".into()));
    }
    Ok(())
}

fn held(ids: &[String], held_out: Option<usize>) -> Result<usize> {
    let h = held_out.unwrap_or(ids.len() - 1);
    if h >= ids.len() {
        return Err(HarnessError::Split(format!("held-out index {h} out of range for {} samples", ids.len())));
    }
    Ok(h)
}

/// All samples but one for training; the held-out sample (default last) for testing.
pub fn split_over_sample(ids: &[String], n_steps: usize, held_out: Option<usize>) -> Result<Split> {
    check_inputs(ids, n_steps, 2)?;
    let h = held(ids, held_out)?;
    let train = (0..ids.len()).filter(|&i| i != h).map(|i| Portion::new(i, ids, 0..n_steps)).collect();
    let test = vec![Portion::new(h, ids, 0..n_steps)];
    Ok(Split { protocol: Protocol::OverSample, n_steps, train, test })
}

/// The other samples in full plus the first `floor(T/2)` steps of the
/// held-out sample for training; its remaining steps for testing.
pub fn split_over_time(ids: &[String], n_steps: usize, held_out: Option<usize>) -> Result<Split> {
    check_inputs(ids, n_steps, 1)?;
    let h = held(ids, held_out)?;
    let half = n_steps / 2;
    let mut train: Vec<Portion> = (0..ids.len()).filter(|&i| i != h).map(|i| Portion::new(i, ids, 0..n_steps)).collect();
    train.push(Portion::new(h, ids, 0..half));
    let test = vec![Portion::new(h, ids, half..n_steps)];
    Ok(Split { protocol: Protocol::OverTime, n_steps, train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpolationMode {
    /// First and last thirds train, the middle third tests.
    Blocks,
    /// Every tenth step trains, the rest tests.
    Sparse,
}

pub const SPARSE_EVERY: usize = 10;

/// Single-sample interpolation split of sample `sample`.
pub fn split_interpolation(ids: &[String], sample: usize, n_steps: usize, mode: InterpolationMode) -> Result<Split> {
    check_inputs(ids, n_steps, 1)?;
    if sample >= ids.len() {
        return Err(HarnessError::Split(format!("sample index {sample} out of range for {} samples", ids.len())));
    }
    let (protocol, train_steps, test_steps): (Protocol, Vec<usize>, Vec<usize>) = match mode {
        InterpolationMode::Blocks => {
            let third = n_steps / 3;
            if third == 0 {
                return Err(HarnessError::Split(format!("{n_steps} steps cannot be cut into thirds")));
            }
            let train = (0..third).chain(n_steps - third..n_steps).collect();
            (Protocol::InterpolationBlocks, train, (third..n_steps - third).collect())
        }
        InterpolationMode::Sparse => {
            let (train, test) = (0..n_steps).partition(|t| t % SPARSE_EVERY == 0);
            (Protocol::InterpolationSparse, train, test)
        }
    };
    Ok(Split {
        protocol,
        n_steps,
        train: vec![Portion::new(sample, ids, train_steps)],
        test: vec![Portion::new(sample, ids, test_steps)],
    })
}

/// The split of `protocol`, checked for leakage.
pub fn make_split(protocol: Protocol, ids: &[String], n_steps: usize, held_out: Option<usize>) -> Result<Split> {
    let split = match protocol {
        Protocol::OverSample => split_over_sample(ids, n_steps, held_out)?,
        Protocol::OverTime => split_over_time(ids, n_steps, held_out)?,
        Protocol::InterpolationBlocks => split_interpolation(ids, held(ids, held_out)?, n_steps, InterpolationMode::Blocks)?,
        Protocol::InterpolationSparse => split_interpolation(ids, held(ids, held_out)?, n_steps, InterpolationMode::Sparse)?,
    };
    split.check_disjoint()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("crack_{i:03}")).collect()
    }

    #[test]
    fn runs() {
        let p = Portion { sample: 0, sample_id: "a".into(), steps: vec![0, 1, 2, 7, 8] };
        assert_eq!(p.runs(), vec![&[0, 1, 2][..], &[7, 8][..]]);
        assert_eq!(p.contiguous_runs(), vec![&[0, 1, 2][..], &[7, 8][..]]);
        let s = Portion { sample: 0, sample_id: "a".into(), steps: vec![0, 10, 20] };
        assert_eq!(s.runs(), vec![&[0, 10, 20][..]]);
        assert_eq!(s.contiguous_runs().len(), 3);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(split_over_sample(&ids(1), 10, None).is_err());
        assert!(split_over_sample(&ids(2), 10, Some(2)).is_err());
        assert!(split_interpolation(&ids(1), 0, 2, InterpolationMode::Blocks).is_err());
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(split_over_sample(&dup, 10, None).is_err());
    }

    #[test]
    fn odd_length_over_time() {
        let s = split_over_time(&ids(2), 7, None).unwrap();
        assert_eq!(s.test[0].steps, vec![3, 4, 5, 6]);
        assert_eq!(s.train[1].steps, vec![0, 1, 2]);
    }
}
