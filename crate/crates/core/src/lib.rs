//! Multi-task actor-critic training with active task sampling.
//!
//! A shared learner trains on several tasks at once; a [`schedulers`]
//! implementation decides which task it trains on next. The crate also holds
//! the synthetic task suites, evaluation metrics, network analyses and the
//! experiment harness that ties them together.

pub mod analysis;
pub mod config;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod metrics;
pub mod rng;
pub mod schedulers;
pub mod task;

pub use config::{load_config, RunConfig};
pub use envs::{EpisodeOutcome, MultiTaskInstance, TaskDescriptor, TaskEnv, TaskParams};
pub use error::{Error, Result};
pub use learner::{ActorCriticNet, Learner, LearnerConfig};
pub use schedulers::{SchedulerConfig, SchedulerDecision, SchedulerKind, TaskScheduler};
pub use task::{ScoreWindow, TargetMode, TargetRegistry, TaskId};
