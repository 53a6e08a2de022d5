//! Shared fixtures for the benchmarks.

use amtl_core::config::RunConfig;
use amtl_core::envs::{preset, MultiTaskInstance};
use amtl_core::learner::{ActorCriticNet, NetShape, Transition, TransitionBatch};
use amtl_core::rng::{stream, Stream};
use amtl_core::schedulers::SchedulerKind;
use amtl_core::TaskId;

/// Deterministic values in [-1, 1] without a random source.
pub fn wave(i: usize) -> f64 {
    ((i as f64) * 0.618_033_988_7).sin()
}

pub fn instance() -> MultiTaskInstance {
    preset("syn6").unwrap()
}

pub fn shape(instance: &MultiTaskInstance, recurrent: bool) -> NetShape {
    NetShape {
        inputs: instance.observation_dim(),
        hidden: vec![32],
        recurrent,
        outputs: instance.union_action_count,
        heads: instance.k(),
    }
}

pub fn net(shape: NetShape) -> ActorCriticNet {
    ActorCriticNet::random(shape, &mut stream(1, Stream::LearnerInit))
}

/// An `len`-step batch with deterministic observations, actions and rewards.
pub fn batch(shape: &NetShape, len: usize) -> TransitionBatch {
    TransitionBatch {
        task: TaskId(1),
        steps: (0..len)
            .map(|t| Transition {
                observation: (0..shape.inputs).map(|i| wave(t * shape.inputs + i)).collect(),
                action: t % shape.outputs,
                reward: wave(7 * t + 3),
                value: 0.0,
            })
            .collect(),
        bootstrap: 0.5,
        initial_hidden: shape.recurrent.then(|| vec![0.1; shape.last_hidden()]),
    }
}

/// Scores and targets for `k` tasks, some above target.
pub fn scores(k: usize) -> (Vec<f64>, Vec<f64>) {
    let targets: Vec<f64> = (0..k).map(|i| 1.0 + i as f64).collect();
    let scores = targets.iter().enumerate().map(|(i, t)| t * (0.6 + 0.6 * wave(i))).collect();
    (scores, targets)
}

pub fn run_config(kind: SchedulerKind, total_steps: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 1,
        total_steps,
        ..RunConfig::default()
    };
    cfg.scheduler.kind = kind;
    cfg.eval.episodes = 2;
    cfg.eval.interval = total_steps;
    cfg
}
