//! Task schedulers: at every task decision step, pick which task the shared
//! learner trains on next.
//!
//! Every decision consumes exactly one uniform draw from the scheduler stream
//! and maps it through the inverse CDF of the emitted distribution. Argmax
//! schedulers emit a one-hot distribution, so replaying a decision log needs
//! nothing but the logged distributions and the seed.

mod adaptive;
mod ducb;
mod meta;
mod uniform;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use adaptive::{a5c_distribution, AdaptiveScheduler};
pub use ducb::{ducb_doubling_observe, ducb_observe, ducb_select, DucbScheduler, DucbStats, VARIANCE_FLOOR};
pub use meta::{
    ea4c_reward, fa4c_target, EpisodicMetaScheduler, FineGrainedMetaScheduler, MetaLearner, MetaState, RewardMode,
};
pub use uniform::{uniform_select, UniformScheduler};

use crate::envs::{EpisodeOutcome, MultiTaskInstance};
use crate::error::{Error, Result};
use crate::learner::sample_index;
use crate::rng::Rng;
use crate::task::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerDecision {
    pub task: TaskId,
    pub distribution: Vec<f64>,
    pub diagnostics: BTreeMap<String, Vec<f64>>,
}

impl SchedulerDecision {
    /// Draws the task for `distribution` with one uniform variate from `rng`.
    pub fn draw(distribution: Vec<f64>, diagnostics: BTreeMap<String, Vec<f64>>, rng: &mut Rng) -> Self {
        let task = TaskId(sample_index(&distribution, rng.random()));
        Self {
            task,
            distribution,
            diagnostics,
        }
    }
}

/// When task decisions happen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    /// At the end of every training episode.
    Episode,
    /// After every `n` learner steps.
    Steps(usize),
}

pub trait TaskScheduler: Send {
    fn kind(&self) -> SchedulerKind;

    fn cadence(&self) -> Cadence {
        Cadence::Episode
    }

    /// Chooses the next task. `train_steps` is the number of learner steps so far.
    fn decide(&mut self, train_steps: u64, rng: &mut Rng) -> Result<SchedulerDecision>;

    /// Feeds back the result of training on `task`.
    fn observe(&mut self, task: TaskId, outcome: &EpisodeOutcome, train_steps: u64) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// Uniform sampling.
    Ba3c,
    /// Softmax over normalised lags.
    A5c,
    /// Discounted UCB bandit.
    Ua4c,
    /// Discounted UCB with doubling target estimates.
    Dua4c,
    /// Actor-critic meta-learner deciding at episode ends.
    Ea4c,
    /// Actor-critic meta-learner deciding every N steps.
    Fa4c,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::Ba3c,
        SchedulerKind::A5c,
        SchedulerKind::Ua4c,
        SchedulerKind::Dua4c,
        SchedulerKind::Ea4c,
        SchedulerKind::Fa4c,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Ba3c => "ba3c",
            SchedulerKind::A5c => "a5c",
            SchedulerKind::Ua4c => "ua4c",
            SchedulerKind::Dua4c => "dua4c",
            SchedulerKind::Ea4c => "ea4c",
            SchedulerKind::Fa4c => "fa4c",
        }
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation("scheduler.kind", format!("unknown scheduler `{s}`")))
    }
}

/// Scheduler hyperparameters. Only the ones relevant to `kind` are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    /// Softmax temperature.
    pub tau: f64,
    /// Scores per task kept for the running performance estimate.
    pub window: usize,
    /// Uniform-sampling warmup in learner steps. Unset: until every window is full.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<u64>,
    pub ucb_gamma: f64,
    pub ucb_beta: f64,
    pub doubling_initial_target: f64,
    pub lambda: f64,
    pub reward_mode: RewardMode,
    /// Size of the worst-task set in the meta reward. Unset: min(3, k).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_count: Option<usize>,
    pub meta_gamma: f64,
    pub meta_entropy: f64,
    pub meta_value_coef: f64,
    pub meta_lr: f64,
    pub meta_lr_final: f64,
    pub meta_hidden: usize,
    pub meta_layers: usize,
    pub meta_recurrent: bool,
    pub meta_rms_decay: f64,
    pub meta_rms_epsilon: f64,
    /// Steps between decisions for the fine-grained meta-learner.
    pub decision_interval: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            kind: SchedulerKind::Ba3c,
            tau: 0.05,
            window: 10,
            warmup_steps: None,
            ucb_gamma: 0.99,
            ucb_beta: 0.25,
            doubling_initial_target: 1.0,
            lambda: 0.5,
            reward_mode: RewardMode::Performance,
            worst_count: None,
            meta_gamma: 0.8,
            meta_entropy: 0.0,
            meta_value_coef: 0.5,
            meta_lr: 1e-3,
            meta_lr_final: 1e-4,
            meta_hidden: 100,
            meta_layers: 2,
            meta_recurrent: false,
            meta_rms_decay: 0.99,
            meta_rms_epsilon: 1e-8,
            decision_interval: 20,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("scheduler.{f}");
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field(name), format!("must be positive, got {v}")))
            }
        };
        positive("tau", self.tau)?;
        if self.window == 0 {
            return Err(Error::validation(field("window"), "must be at least 1"));
        }
        if !(self.ucb_gamma > 0.0 && self.ucb_gamma <= 1.0) {
            return Err(Error::validation(field("ucb_gamma"), "must lie in (0, 1]"));
        }
        if !(self.ucb_beta >= 0.0 && self.ucb_beta.is_finite()) {
            return Err(Error::validation(field("ucb_beta"), "must be non-negative"));
        }
        positive("doubling_initial_target", self.doubling_initial_target)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation(field("lambda"), "must lie in [0, 1]"));
        }
        if self.worst_count == Some(0) {
            return Err(Error::validation(field("worst_count"), "must be at least 1"));
        }
        if !(self.meta_gamma >= 0.0 && self.meta_gamma <= 1.0) {
            return Err(Error::validation(field("meta_gamma"), "must lie in [0, 1]"));
        }
        if !(self.meta_entropy >= 0.0 && self.meta_entropy.is_finite()) {
            return Err(Error::validation(field("meta_entropy"), "must be non-negative"));
        }
        positive("meta_value_coef", self.meta_value_coef)?;
        positive("meta_lr", self.meta_lr)?;
        positive("meta_lr_final", self.meta_lr_final)?;
        positive("meta_rms_epsilon", self.meta_rms_epsilon)?;
        if !(0.0..1.0).contains(&self.meta_rms_decay) {
            return Err(Error::validation(field("meta_rms_decay"), "must lie in [0, 1)"));
        }
        if self.meta_hidden == 0 || self.meta_layers == 0 {
            return Err(Error::validation(field("meta_hidden"), "meta network needs at least one non-empty layer"));
        }
        if self.decision_interval == 0 {
            return Err(Error::validation(field("decision_interval"), "must be positive"));
        }
        Ok(())
    }

    pub fn worst_count_for(&self, k: usize) -> usize {
        self.worst_count.unwrap_or(3).min(k)
    }
}

/// Builds the configured scheduler for `instance`.
///
/// `fine_targets` are required by the fine-grained meta-learner only.
pub fn build_scheduler(
    config: &SchedulerConfig,
    instance: &MultiTaskInstance,
    total_steps: u64,
    meta_init: &mut Rng,
    fine_targets: Option<Vec<f64>>,
) -> Result<Box<dyn TaskScheduler>> {
    config.validate()?;
    let k = instance.k();
    let targets = instance.targets.clone();
    Ok(match config.kind {
        SchedulerKind::Ba3c => Box::new(UniformScheduler::new(k)?),
        SchedulerKind::A5c => Box::new(AdaptiveScheduler::new(targets, config.tau, config.window, config.warmup_steps)?),
        SchedulerKind::Ua4c => Box::new(DucbScheduler::new(targets, config.ucb_gamma, config.ucb_beta)?),
        SchedulerKind::Dua4c => Box::new(DucbScheduler::doubling(
            k,
            config.doubling_initial_target,
            config.ucb_gamma,
            config.ucb_beta,
        )?),
        SchedulerKind::Ea4c => Box::new(EpisodicMetaScheduler::new(
            MetaLearner::new(config, k, total_steps, meta_init),
            targets.as_slice().to_vec(),
            config,
        )?),
        SchedulerKind::Fa4c => {
            let fine = fine_targets.ok_or_else(|| {
                Error::validation("scheduler.kind", "fa4c needs fine-grained targets for every task")
            })?;
            Box::new(FineGrainedMetaScheduler::new(
                MetaLearner::new(config, k, total_steps, meta_init),
                fine,
                config,
            )?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.name().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("exp3".parse::<SchedulerKind>().is_err());
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = SchedulerConfig {
            tau: -1.0,
            ..SchedulerConfig::default()
        };
        match cfg.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "scheduler.tau"),
            other => panic!("{other:?}"),
        }
        assert_eq!(SchedulerConfig::default().worst_count_for(2), 2);
        assert_eq!(SchedulerConfig::default().worst_count_for(6), 3);
    }
}
