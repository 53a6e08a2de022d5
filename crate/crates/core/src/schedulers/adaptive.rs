use std::collections::BTreeMap;

use super::{SchedulerDecision, SchedulerKind, TaskScheduler};
use crate::envs::EpisodeOutcome;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task::{ScoreWindow, TargetRegistry, TaskId};

/// Softmax over normalised lags: p_i ∝ exp((ta_i − a_i) / (ta_i · τ)).
pub fn a5c_distribution(averages: &[f64], targets: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    if averages.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: averages.len(),
        });
    }
    let evidence = averages
        .iter()
        .zip(targets)
        .map(|(&a, &ta)| crate::task::normalized_lag(a, ta).map(|m| m / tau))
        .collect::<Result<Vec<_>>>()?;
    let max = evidence.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = evidence.iter().map(|m| (m - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Samples tasks from a softmax over how far each task lags its target,
/// after a uniform warmup.
#[derive(Debug, Clone)]
pub struct AdaptiveScheduler {
    targets: TargetRegistry,
    tau: f64,
    windows: Vec<ScoreWindow>,
    warmup_steps: Option<u64>,
    warm: bool,
}

impl AdaptiveScheduler {
    pub fn new(targets: TargetRegistry, tau: f64, window: usize, warmup_steps: Option<u64>) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::validation("scheduler.tau", "must be positive"));
        }
        if targets.len() < 2 {
            return Err(Error::Domain("need at least two tasks".into()));
        }
        Ok(Self {
            windows: vec![ScoreWindow::new(window.max(1)); targets.len()],
            targets,
            tau,
            warmup_steps,
            warm: false,
        })
    }

    pub fn windows(&self) -> &[ScoreWindow] {
        &self.windows
    }

    pub fn in_warmup(&self, train_steps: u64) -> bool {
        match self.warmup_steps {
            Some(l) => train_steps < l,
            None => !self.warm,
        }
    }
}

impl TaskScheduler for AdaptiveScheduler {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::A5c
    }

    fn decide(&mut self, train_steps: u64, rng: &mut Rng) -> Result<SchedulerDecision> {
        let k = self.windows.len();
        let averages: Vec<f64> = self.windows.iter().map(ScoreWindow::average_or_zero).collect();
        let lags = averages
            .iter()
            .zip(self.targets.as_slice())
            .map(|(&a, &ta)| crate::task::normalized_lag(a, ta))
            .collect::<Result<Vec<_>>>()?;
        let warmup = self.in_warmup(train_steps);
        let distribution = if warmup {
            vec![1.0 / k as f64; k]
        } else {
            a5c_distribution(&averages, self.targets.as_slice(), self.tau)?
        };
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("average".into(), averages);
        diagnostics.insert("lag".into(), lags);
        diagnostics.insert("warmup".into(), vec![if warmup { 1.0 } else { 0.0 }]);
        Ok(SchedulerDecision::draw(distribution, diagnostics, rng))
    }

    fn observe(&mut self, task: TaskId, outcome: &EpisodeOutcome, _train_steps: u64) -> Result<()> {
        self.windows
            .get_mut(task.0)
            .ok_or(Error::UnknownTask {
                index: task.0,
                count: self.targets.len(),
            })?
            .push(outcome.score);
        if !self.warm && self.windows.iter().all(ScoreWindow::is_full) {
            self.warm = true;
        }
        Ok(())
    }
}
