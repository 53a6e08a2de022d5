//! The shared multi-task actor-critic learner.

mod checkpoint;
mod gradients;
mod net;
mod optim;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use gradients::{compute_gradient_terms, compute_gradients, Gradients, LossWeights, Term, Transition, TransitionBatch};
pub use net::{sample_index, ActorCriticNet, Forward, NetShape};
pub use optim::{apply_update, clip_norm, LrSchedule, RmsProp};
pub use train::{act, Action, Learner, Segment, TaskSlot};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadsMode {
    #[default]
    Shared,
    /// One learned projection of the shared policy output per task.
    PerTask,
}

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub n_step: usize,
    pub entropy_beta: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub lr_final: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    /// Global gradient-norm clip applied before each update; 0 disables it.
    pub max_grad_norm: f64,
    pub hidden: usize,
    pub recurrent: bool,
    pub heads: HeadsMode,
    pub workers: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            n_step: 20,
            entropy_beta: 0.02,
            value_coef: 0.5,
            lr: 1e-3,
            lr_final: 1e-4,
            rms_decay: 0.99,
            rms_epsilon: 1e-8,
            max_grad_norm: 40.0,
            hidden: 32,
            recurrent: false,
            heads: HeadsMode::Shared,
            workers: 1,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("learner.{f}");
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation(field("gamma"), "must lie in (0, 1]"));
        }
        if self.n_step == 0 {
            return Err(Error::validation(field("n_step"), "must be positive"));
        }
        if !(self.entropy_beta >= 0.0 && self.entropy_beta.is_finite()) {
            return Err(Error::validation(field("entropy_beta"), "must be non-negative"));
        }
        if !(self.value_coef > 0.0 && self.value_coef.is_finite()) {
            return Err(Error::validation(field("value_coef"), "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(field("lr"), "must be positive"));
        }
        if !(self.lr_final > 0.0 && self.lr_final.is_finite()) {
            return Err(Error::validation(field("lr_final"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::validation(field("rms_decay"), "must lie in [0, 1)"));
        }
        if !(self.rms_epsilon > 0.0) {
            return Err(Error::validation(field("rms_epsilon"), "must be positive"));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::validation(field("max_grad_norm"), "must be non-negative"));
        }
        if self.hidden == 0 {
            return Err(Error::validation(field("hidden"), "must be positive"));
        }
        if self.workers == 0 {
            return Err(Error::validation(field("workers"), "must be at least 1"));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            entropy_beta: self.entropy_beta,
            value_coef: self.value_coef,
        }
    }
}
