use std::collections::BTreeMap;

use super::{SchedulerDecision, SchedulerKind, TaskScheduler};
use crate::envs::EpisodeOutcome;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task::TaskId;

/// Uniform draw over `k` tasks.
pub fn uniform_select(k: usize, rng: &mut Rng) -> Result<SchedulerDecision> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least two tasks, got {k}")));
    }
    Ok(SchedulerDecision::draw(vec![1.0 / k as f64; k], BTreeMap::new(), rng))
}

/// Baseline: every decision is uniform.
#[derive(Debug, Clone)]
pub struct UniformScheduler {
    k: usize,
}

impl UniformScheduler {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("need at least two tasks, got {k}")));
        }
        Ok(Self { k })
    }
}

impl TaskScheduler for UniformScheduler {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::Ba3c
    }

    fn decide(&mut self, _train_steps: u64, rng: &mut Rng) -> Result<SchedulerDecision> {
        uniform_select(self.k, rng)
    }

    fn observe(&mut self, _task: TaskId, _outcome: &EpisodeOutcome, _train_steps: u64) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn distribution_is_flat() {
        let d = uniform_select(4, &mut stream(1, Stream::Scheduler)).unwrap();
        assert_eq!(d.distribution, vec![0.25; 4]);
        assert!(uniform_select(1, &mut stream(1, Stream::Scheduler)).is_err());
    }

    #[test]
    fn seeded_sequence_is_reproducible() {
        let draw = || {
            let mut rng = stream(11, Stream::Scheduler);
            (0..50).map(|_| uniform_select(2, &mut rng).unwrap().task).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn empirical_frequencies_within_four_sigma() {
        let k = 5;
        let n = 100_000;
        let mut rng = stream(5, Stream::Scheduler);
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[uniform_select(k, &mut rng).unwrap().task.0] += 1;
        }
        let p = 0.2;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 4.0 * sigma, "{freq}");
        }
    }
}
