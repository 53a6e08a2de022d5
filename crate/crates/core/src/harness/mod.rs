//! Experiment orchestration: the training loop, run directories and
//! cross-run comparison.

mod compare;
mod directory;
mod run;

pub use compare::{compare_runs, run_dirs_under, Comparison, GroupRow, METRIC_NAMES};
pub use directory::{run_experiment, Manifest, RunDirectory, RunStatus};
pub use run::{fine_targets, replay_decisions, train, DecisionRecord, NoObserver, RunObserver, RunOutcome};
