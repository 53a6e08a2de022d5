use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SchedulerDecision, SchedulerKind, TaskScheduler};
use crate::envs::EpisodeOutcome;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task::{TargetRegistry, TargetMode, TaskId};

/// Lower bound on the variance term of the exploration bonus.
pub const VARIANCE_FLOOR: f64 = 0.002;

/// Discounted bandit statistics, one arm per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DucbStats {
    pub gamma: f64,
    pub beta: f64,
    /// Discounted reward sums.
    pub sums: Vec<f64>,
    /// Discounted pull counts.
    pub counts: Vec<f64>,
    pub means: Vec<f64>,
    pub bonus: Vec<f64>,
    pub pulled: Vec<bool>,
}

impl DucbStats {
    pub fn new(k: usize, gamma: f64, beta: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Domain(format!("need at least two tasks, got {k}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Domain(format!("discount must lie in (0, 1], got {gamma}")));
        }
        Ok(Self {
            gamma,
            beta,
            sums: vec![0.0; k],
            counts: vec![0.0; k],
            means: vec![0.0; k],
            bonus: vec![0.0; k],
            pulled: vec![false; k],
        })
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    /// First task never pulled, if any.
    pub fn first_unpulled(&self) -> Option<usize> {
        self.pulled.iter().position(|p| !p)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.means.iter().zip(&self.bonus).map(|(m, c)| m + self.beta * c).collect()
    }
}

/// Records that task `task` was trained and scored `score` against `target`.
pub fn ducb_observe(stats: &mut DucbStats, task: TaskId, score: f64, target: f64) -> Result<()> {
    let k = stats.len();
    if task.0 >= k {
        return Err(Error::UnknownTask { index: task.0, count: k });
    }
    let reward = crate::task::normalized_lag(score, target)?.max(0.0);
    let g = stats.gamma;
    stats.sums.iter_mut().for_each(|x| *x *= g);
    stats.sums[task.0] += reward;
    stats.counts.iter_mut().for_each(|n| *n *= g);
    stats.counts[task.0] += 1.0;
    stats.pulled[task.0] = true;
    let total: f64 = stats.counts.iter().sum();
    let log_total = total.ln();
    for i in 0..k {
        let n = stats.counts[i];
        if stats.pulled[i] && n > 0.0 {
            let mean = stats.sums[i] / n;
            stats.means[i] = mean;
            let var = (mean * (1.0 - mean)).max(VARIANCE_FLOOR);
            stats.bonus[i] = (var * log_total / n).max(0.0).sqrt();
        } else {
            stats.means[i] = 0.0;
            stats.bonus[i] = 0.0;
        }
    }
    Ok(())
}

/// Doubles the target of `task` if `score` reached it, then records the pull.
pub fn ducb_doubling_observe(
    stats: &mut DucbStats,
    targets: &mut TargetRegistry,
    task: TaskId,
    score: f64,
) -> Result<bool> {
    let doubled = targets.double_if_reached(task, score)?;
    ducb_observe(stats, task, score, targets.get(task))?;
    Ok(doubled)
}

/// Arg-max of mean plus scaled bonus; ties go to the lowest index.
pub fn ducb_select(stats: &DucbStats) -> Result<TaskId> {
    if let Some(i) = stats.first_unpulled() {
        return Err(Error::Unpulled(i));
    }
    let scores = stats.scores();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(TaskId(best))
}

/// Bandit scheduler over tasks. With doubling targets it needs no target
/// estimates up front.
#[derive(Debug, Clone)]
pub struct DucbScheduler {
    stats: DucbStats,
    targets: TargetRegistry,
}

impl DucbScheduler {
    pub fn new(targets: TargetRegistry, gamma: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            stats: DucbStats::new(targets.len(), gamma, beta)?,
            targets,
        })
    }

    pub fn doubling(k: usize, initial: f64, gamma: f64, beta: f64) -> Result<Self> {
        Self::new(TargetRegistry::doubling(k, initial)?, gamma, beta)
    }

    pub fn stats(&self) -> &DucbStats {
        &self.stats
    }

    pub fn targets(&self) -> &TargetRegistry {
        &self.targets
    }
}

impl TaskScheduler for DucbScheduler {
    fn kind(&self) -> SchedulerKind {
        match self.targets.mode() {
            TargetMode::Fixed => SchedulerKind::Ua4c,
            TargetMode::Doubling => SchedulerKind::Dua4c,
        }
    }

    fn decide(&mut self, _train_steps: u64, rng: &mut Rng) -> Result<SchedulerDecision> {
        let k = self.stats.len();
        let task = match self.stats.first_unpulled() {
            Some(i) => i,
            None => ducb_select(&self.stats)?.0,
        };
        let mut distribution = vec![0.0; k];
        distribution[task] = 1.0;
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("mean".into(), self.stats.means.clone());
        diagnostics.insert("bonus".into(), self.stats.bonus.clone());
        diagnostics.insert("count".into(), self.stats.counts.clone());
        diagnostics.insert("target".into(), self.targets.as_slice().to_vec());
        Ok(SchedulerDecision::draw(distribution, diagnostics, rng))
    }

    fn observe(&mut self, task: TaskId, outcome: &EpisodeOutcome, _train_steps: u64) -> Result<()> {
        match self.targets.mode() {
            TargetMode::Fixed => {
                if task.0 >= self.targets.len() {
                    return Err(Error::UnknownTask {
                        index: task.0,
                        count: self.targets.len(),
                    });
                }
                let ta = self.targets.get(task);
                ducb_observe(&mut self.stats, task, outcome.score, ta)
            }
            TargetMode::Doubling => {
                ducb_doubling_observe(&mut self.stats, &mut self.targets, task, outcome.score).map(|_| ())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn two_task_bonus_example() {
        let mut s = DucbStats::new(2, 1.0, 0.25).unwrap();
        ducb_observe(&mut s, TaskId(0), 0.0, 1.0).unwrap();
        ducb_observe(&mut s, TaskId(1), 1.0, 1.0).unwrap();
        assert_eq!(s.means, vec![1.0, 0.0]);
        assert_eq!(s.counts, vec![1.0, 1.0]);
        let c = (VARIANCE_FLOOR * 2f64.ln()).sqrt();
        assert!((s.bonus[0] - c).abs() < 1e-15);
        assert!((s.bonus[0] - 0.037233).abs() < 1e-6);
        assert_eq!(ducb_select(&s).unwrap(), TaskId(0));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut s = DucbStats::new(3, 0.9, 0.25).unwrap();
        for i in 0..3 {
            s.pulled[i] = true;
        }
        assert_eq!(ducb_select(&s).unwrap(), TaskId(0));
    }

    #[test]
    fn unpulled_is_an_error() {
        let mut s = DucbStats::new(3, 0.9, 0.25).unwrap();
        ducb_observe(&mut s, TaskId(0), 0.0, 1.0).unwrap();
        assert!(matches!(ducb_select(&s), Err(Error::Unpulled(1))));
    }

    #[test]
    fn scheduler_round_robins_first() {
        let targets = TargetRegistry::fixed(vec![1.0; 3], 1.0).unwrap();
        let mut s = DucbScheduler::new(targets, 0.99, 0.25).unwrap();
        let mut rng = stream(3, Stream::Scheduler);
        for want in 0..3 {
            let d = s.decide(0, &mut rng).unwrap();
            assert_eq!(d.task, TaskId(want));
            s.observe(d.task, &EpisodeOutcome::default(), 0).unwrap();
        }
        assert!(s.decide(0, &mut rng).is_ok());
    }

    #[test]
    fn doubling_trace() {
        let mut s = DucbStats::new(2, 1.0, 0.25).unwrap();
        let mut t = TargetRegistry::doubling(2, 1.0).unwrap();
        assert!(ducb_doubling_observe(&mut s, &mut t, TaskId(0), 3.0).unwrap());
        assert_eq!(t.as_slice(), &[2.0, 1.0]);
        assert_eq!(s.sums[0], 0.0);
        assert!(!ducb_doubling_observe(&mut s, &mut t, TaskId(0), 1.0).unwrap());
        assert_eq!(s.sums[0], 0.5);
        assert!(ducb_doubling_observe(&mut s, &mut t, TaskId(0), 2.0).unwrap());
        assert_eq!(t.as_slice(), &[4.0, 1.0]);
        assert_eq!(s.sums[0], 1.0);
    }

    #[test]
    fn constant_pulls_converge_to_effective_horizon() {
        let mut s = DucbStats::new(2, 0.99, 0.25).unwrap();
        for _ in 0..3000 {
            ducb_observe(&mut s, TaskId(0), 0.5, 1.0).unwrap();
        }
        assert!((s.counts[0] - 100.0).abs() < 1e-9);
        assert!((s.means[0] - 0.5).abs() < 1e-12);
        assert_eq!(s.counts[1], 0.0);
    }

    proptest! {
        #[test]
        fn stats_invariants(pulls in prop::collection::vec((0usize..4, -2.0f64..3.0), 1..60), gamma in 0.5f64..=1.0) {
            let mut s = DucbStats::new(4, gamma, 0.25).unwrap();
            let mut oracle_n = [0.0f64; 4];
            let mut oracle_x = [0.0f64; 4];
            for &(j, score) in &pulls {
                ducb_observe(&mut s, TaskId(j), score, 1.5).unwrap();
                for i in 0..4 {
                    oracle_n[i] *= gamma;
                    oracle_x[i] *= gamma;
                }
                oracle_n[j] += 1.0;
                oracle_x[j] += ((1.5 - score) / 1.5).max(0.0);
            }
            for i in 0..4 {
                prop_assert!(s.counts[i] >= 0.0);
                prop_assert!((s.counts[i] - oracle_n[i]).abs() < 1e-9);
                prop_assert!((s.sums[i] - oracle_x[i]).abs() < 1e-9);
                prop_assert!(s.bonus[i] >= 0.0);
                if s.counts[i] > 0.0 {
                    prop_assert!((s.means[i] - s.sums[i] / s.counts[i]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn doubled_targets_stay_powers_of_two(scores in prop::collection::vec((0usize..3, 0.0f64..50.0), 1..80)) {
            let mut s = DucbStats::new(3, 0.99, 0.25).unwrap();
            let mut t = TargetRegistry::doubling(3, 1.0).unwrap();
            let mut prev = t.as_slice().to_vec();
            for &(j, score) in &scores {
                ducb_doubling_observe(&mut s, &mut t, TaskId(j), score).unwrap();
                for (i, &v) in t.as_slice().iter().enumerate() {
                    prop_assert!(v >= prev[i]);
                    prop_assert!(v.log2().fract() == 0.0);
                }
                prev = t.as_slice().to_vec();
            }
        }
    }
}
