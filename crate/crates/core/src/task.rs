//! Task identities, target scores and rolling score windows.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a task inside its instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub usize);

impl TaskId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    #[default]
    Fixed,
    /// Targets start at an estimate and double each time the agent reaches them.
    Doubling,
}

/// Per-task target scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRegistry {
    mode: TargetMode,
    targets: Vec<f64>,
    multiplier: f64,
}

impl TargetRegistry {
    /// Fixed registry. `targets` are the base scores; the effective target is base × multiplier.
    pub fn fixed(targets: Vec<f64>, multiplier: f64) -> Result<Self> {
        Self::build(TargetMode::Fixed, targets, multiplier)
    }

    /// Doubling registry with every target initialised to `initial`.
    pub fn doubling(k: usize, initial: f64) -> Result<Self> {
        Self::build(TargetMode::Doubling, vec![initial; k], 1.0)
    }

    fn build(mode: TargetMode, targets: Vec<f64>, multiplier: f64) -> Result<Self> {
        if !(multiplier.is_finite() && multiplier > 0.0) {
            return Err(Error::validation("multiplier", "must be a positive finite number"));
        }
        if let Some((i, t)) = targets
            .iter()
            .enumerate()
            .find(|(_, t)| !(t.is_finite() && **t > 0.0))
        {
            return Err(Error::validation(
                format!("targets[{i}]"),
                format!("target must be positive, got {t}"),
            ));
        }
        let targets = targets.into_iter().map(|t| t * multiplier).collect();
        Ok(Self {
            mode,
            targets,
            multiplier,
        })
    }

    pub fn mode(&self) -> TargetMode {
        self.mode
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn get(&self, task: TaskId) -> f64 {
        self.targets[task.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.targets
    }

    /// Doubles the target of `task` if `score` reached it. Returns whether it doubled.
    pub fn double_if_reached(&mut self, task: TaskId, score: f64) -> Result<bool> {
        if self.mode != TargetMode::Doubling {
            return Err(Error::Domain("target doubling requires a doubling registry".into()));
        }
        let ta = &mut self.targets[task.0];
        if score >= *ta {
            *ta *= 2.0;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

/// FIFO window holding the most recent `capacity` training scores of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWindow {
    capacity: usize,
    scores: VecDeque<f64>,
}

impl ScoreWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "score window capacity must be at least 1");
        Self {
            capacity,
            scores: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn push(&mut self, score: f64) {
        self.scores.push_back(score);
        if self.scores.len() > self.capacity {
            self.scores.pop_front();
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.scores.len() == self.capacity
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.scores.back().copied()
    }

    pub fn average(&self) -> Result<f64> {
        if self.scores.is_empty() {
            return Err(Error::NoEstimate);
        }
        Ok(self.scores.iter().sum::<f64>() / self.scores.len() as f64)
    }

    /// Average, or 0 for a task that has no scores yet (maximal lag).
    pub fn average_or_zero(&self) -> f64 {
        self.average().unwrap_or(0.0)
    }
}

/// How far `score` lags behind `target`, as a fraction of the target: (ta − a)/ta.
pub fn normalized_lag(score: f64, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::Domain(format!("target must be positive, got {target}")));
    }
    Ok((target - score) / target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_average_examples() {
        let mut w = ScoreWindow::new(10);
        assert!(matches!(w.average(), Err(Error::NoEstimate)));
        assert_eq!(w.average_or_zero(), 0.0);
        w.push(2.0);
        w.push(4.0);
        assert_eq!(w.average().unwrap(), 3.0);

        let mut w = ScoreWindow::new(2);
        for s in [1.0, 2.0, 3.0] {
            w.push(s);
        }
        assert_eq!(w.scores().collect::<Vec<_>>(), vec![2.0, 3.0]);
        assert_eq!(w.average().unwrap(), 2.5);
    }

    #[test]
    fn normalized_lag_examples() {
        assert_eq!(normalized_lag(7.0, 7.0).unwrap(), 0.0);
        assert_eq!(normalized_lag(0.0, 7.0).unwrap(), 1.0);
        assert_eq!(normalized_lag(150.0, 100.0).unwrap(), -0.5);
        assert!(normalized_lag(1.0, 0.0).is_err());
        assert!(normalized_lag(1.0, -3.0).is_err());
    }

    #[test]
    fn doubling_registry() {
        let mut reg = TargetRegistry::doubling(2, 1.0).unwrap();
        assert!(reg.double_if_reached(TaskId(0), 1.0).unwrap());
        assert_eq!(reg.get(TaskId(0)), 2.0);
        assert!(!reg.double_if_reached(TaskId(1), 0.5).unwrap());
        assert_eq!(reg.get(TaskId(1)), 1.0);

        let mut fixed = TargetRegistry::fixed(vec![1.0, 2.0], 1.0).unwrap();
        assert!(fixed.double_if_reached(TaskId(0), 5.0).is_err());
    }

    #[test]
    fn registry_multiplier_and_validation() {
        let reg = TargetRegistry::fixed(vec![3.0, 5.0], 2.0).unwrap();
        assert_eq!(reg.as_slice(), &[6.0, 10.0]);
        assert!(TargetRegistry::fixed(vec![3.0, 0.0], 1.0).is_err());
        assert!(TargetRegistry::fixed(vec![3.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn window_matches_slice_oracle(cap in 1usize..8, pushes in prop::collection::vec(-100.0f64..100.0, 0..40)) {
            let mut w = ScoreWindow::new(cap);
            for (i, &s) in pushes.iter().enumerate() {
                w.push(s);
                let start = (i + 1).saturating_sub(cap);
                let expected = &pushes[start..=i];
                prop_assert!(w.len() <= cap);
                prop_assert_eq!(w.scores().collect::<Vec<_>>(), expected.to_vec());
            }
        }

        #[test]
        fn lag_is_scale_invariant(a in -1e3f64..1e3, ta in 1e-3f64..1e3, c in 1e-3f64..1e3) {
            let base = normalized_lag(a, ta).unwrap();
            let scaled = normalized_lag(c * a, c * ta).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }
}
