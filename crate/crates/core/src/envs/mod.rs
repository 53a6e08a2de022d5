//! Synthetic episodic task families with analytically known optimal scores.
//!
//! Every observation is `[signature | state]`: a per-task signature block that
//! is constant for the whole run, followed by a small state block. Actions are
//! drawn from the instance's union action space; an action at or above the
//! task's native action count is a no-op that leaves the state untouched,
//! yields reward 0 and only advances the step counter.

mod grid;
mod instance;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use grid::{GridSolution, GRID_ACTIONS};
pub use instance::{preset, MultiTaskInstance, TaskEntry, PRESETS};

/// Width of the state block appended after the signature.
pub const STATE_DIM: usize = 4;
/// Default signature width.
pub const SIGNATURE_DIM: usize = 8;
/// Default episode cap in steps.
pub const DEFAULT_EPISODE_CAP: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskParams {
    /// Walk from position 0 to `length`. Reaching the end pays 1. Every
    /// non-no-op step the agent falls off with probability `slip`, ending the
    /// episode with nothing. Native actions: `forward_action` advances, the
    /// other one steps back (floored at 0).
    Chain {
        length: usize,
        slip: f64,
        #[serde(default)]
        forward_action: usize,
    },
    /// `horizon` pulls of Bernoulli arms with the given success probabilities.
    BanditRoom { payoffs: Vec<f64>, horizon: usize },
    /// Navigate an n×n grid from (0, 0) to `goal` with actions up/down/left/right.
    /// With probability `slip` the chosen move is replaced by a uniformly random one.
    /// Each move costs `step_cost`; entering the goal pays `goal_reward`.
    GridNav {
        size: usize,
        goal: [usize; 2],
        slip: f64,
        step_cost: f64,
        goal_reward: f64,
    },
}

impl TaskParams {
    pub fn family(&self) -> &'static str {
        match self {
            TaskParams::Chain { .. } => "chain",
            TaskParams::BanditRoom { .. } => "bandit_room",
            TaskParams::GridNav { .. } => "grid_nav",
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            TaskParams::Chain { .. } => 2,
            TaskParams::BanditRoom { payoffs, .. } => payoffs.len(),
            TaskParams::GridNav { .. } => GRID_ACTIONS,
        }
    }

    pub fn validate(&self, cap: usize) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::validation(name, format!("must lie in [0, 1), got {p}")))
            }
        };
        match self {
            TaskParams::Chain {
                length,
                slip,
                forward_action,
            } => {
                if *length == 0 || *length > cap {
                    return Err(Error::validation(
                        "length",
                        format!("chain length must be in 1..={cap}, got {length}"),
                    ));
                }
                if *forward_action > 1 {
                    return Err(Error::validation("forward_action", "must be 0 or 1"));
                }
                prob("slip", *slip)
            }
            TaskParams::BanditRoom { payoffs, horizon } => {
                if payoffs.len() < 2 {
                    return Err(Error::validation("payoffs", "need at least two arms"));
                }
                if payoffs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::validation("payoffs", "arm payoffs must lie in [0, 1]"));
                }
                if payoffs.iter().all(|&p| p == 0.0) {
                    return Err(Error::validation("payoffs", "at least one arm must pay"));
                }
                if *horizon == 0 {
                    return Err(Error::validation("horizon", "must be positive"));
                }
                Ok(())
            }
            TaskParams::GridNav {
                size,
                goal,
                slip,
                step_cost,
                goal_reward,
            } => {
                if *size < 2 {
                    return Err(Error::validation("size", "grid must be at least 2×2"));
                }
                if goal[0] >= *size || goal[1] >= *size || *goal == [0, 0] {
                    return Err(Error::validation("goal", "goal must be inside the grid and not the start"));
                }
                if !(*step_cost > 0.0) {
                    return Err(Error::validation("step_cost", "must be positive"));
                }
                if !(goal_reward.is_finite()) {
                    return Err(Error::validation("goal_reward", "must be finite"));
                }
                prob("slip", *slip)
            }
        }
    }
}

/// A task: family parameters plus the signature the network sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub params: TaskParams,
    pub signature: Vec<f64>,
}

impl TaskDescriptor {
    pub fn action_count(&self) -> usize {
        self.params.action_count()
    }

    pub fn observation_dim(&self) -> usize {
        self.signature.len() + STATE_DIM
    }
}

/// Analytic optimal expected episode score of a task under an episode cap.
pub fn oracle_target(task: &TaskDescriptor, cap: usize) -> Result<f64> {
    task.params.validate(cap)?;
    let target = match &task.params {
        TaskParams::Chain { length, slip, .. } => (1.0 - slip).powi(*length as i32),
        TaskParams::BanditRoom { payoffs, horizon } => {
            let best = payoffs.iter().copied().fold(f64::MIN, f64::max);
            (*horizon).min(cap) as f64 * best
        }
        TaskParams::GridNav { .. } => GridSolution::solve(&task.params)?.start_value(),
    };
    if !(target > 0.0) {
        return Err(Error::Domain(format!(
            "task `{}` has non-positive optimal score {target}",
            task.name
        )));
    }
    Ok(target)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub score: f64,
    pub length: usize,
    pub per_step_rewards: Vec<f64>,
    /// False when the outcome covers only part of an episode.
    pub terminal: bool,
}

impl EpisodeOutcome {
    pub fn record(&mut self, reward: f64) {
        self.score += reward;
        self.length += 1;
        self.per_step_rewards.push(reward);
    }
}

#[derive(Debug, Clone, PartialEq)]
enum EnvState {
    Chain { position: usize },
    Bandit { pulls: usize },
    Grid { x: usize, y: usize },
}

/// One running copy of a task.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    task: TaskDescriptor,
    union_actions: usize,
    cap: usize,
    state: Option<EnvState>,
    steps: usize,
    done: bool,
    grid: Option<GridSolution>,
}

impl TaskEnv {
    pub fn new(task: TaskDescriptor, union_actions: usize, cap: usize) -> Result<Self> {
        task.params.validate(cap)?;
        if task.action_count() > union_actions {
            return Err(Error::validation(
                "union_action_count",
                format!("task `{}` needs {} actions", task.name, task.action_count()),
            ));
        }
        let grid = match &task.params {
            TaskParams::GridNav { .. } => Some(GridSolution::solve(&task.params)?),
            _ => None,
        };
        Ok(Self {
            task,
            union_actions,
            cap,
            state: None,
            steps: 0,
            done: false,
            grid,
        })
    }

    pub fn descriptor(&self) -> &TaskDescriptor {
        &self.task
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn is_running(&self) -> bool {
        self.state.is_some() && !self.done
    }

    pub fn reset(&mut self, _rng: &mut Rng) -> Observation {
        self.state = Some(match &self.task.params {
            TaskParams::Chain { .. } => EnvState::Chain { position: 0 },
            TaskParams::BanditRoom { .. } => EnvState::Bandit { pulls: 0 },
            TaskParams::GridNav { .. } => EnvState::Grid { x: 0, y: 0 },
        });
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    pub fn step(&mut self, action: usize, rng: &mut Rng) -> Result<(Observation, f64, bool)> {
        if action >= self.union_actions {
            return Err(Error::InvalidAction {
                action,
                count: self.union_actions,
            });
        }
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let native = action < self.task.action_count();
        let state = self.state.as_mut().ok_or(Error::NotReset)?;
        let mut reward = 0.0;
        let mut terminal = false;
        match (state, &self.task.params) {
            (EnvState::Chain { position }, TaskParams::Chain { length, slip, forward_action }) => {
                if native {
                    if rng.random::<f64>() < *slip {
                        terminal = true;
                    } else if action == *forward_action {
                        *position += 1;
                        if *position == *length {
                            reward = 1.0;
                            terminal = true;
                        }
                    } else {
                        *position = position.saturating_sub(1);
                    }
                }
            }
            (EnvState::Bandit { pulls }, TaskParams::BanditRoom { payoffs, horizon }) => {
                let u: f64 = rng.random();
                if native && u < payoffs[action] {
                    reward = 1.0;
                }
                *pulls += 1;
                terminal = *pulls >= *horizon;
            }
            (
                EnvState::Grid { x, y },
                TaskParams::GridNav {
                    size,
                    goal,
                    slip,
                    step_cost,
                    goal_reward,
                },
            ) => {
                if native {
                    let mut dir = action;
                    if rng.random::<f64>() < *slip {
                        dir = rng.random_range(0..GRID_ACTIONS);
                    }
                    let (nx, ny) = grid::apply_move(*x, *y, dir, *size);
                    *x = nx;
                    *y = ny;
                    reward = -step_cost;
                    if [nx, ny] == *goal {
                        reward += goal_reward;
                        terminal = true;
                    }
                }
            }
            _ => unreachable!("env state always matches its task family"),
        }
        self.steps += 1;
        self.done = terminal || self.steps >= self.cap;
        Ok((self.observe(), reward, self.done))
    }

    /// The action an optimal policy takes in the current state.
    pub fn optimal_action(&self) -> Result<usize> {
        let state = self.state.as_ref().ok_or(Error::NotReset)?;
        Ok(match (&self.task.params, state) {
            (TaskParams::Chain { forward_action, .. }, _) => *forward_action,
            (TaskParams::BanditRoom { payoffs, .. }, _) => payoffs
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                .0,
            (TaskParams::GridNav { .. }, EnvState::Grid { x, y }) => {
                self.grid.as_ref().expect("grid solution").best_action(*x, *y)
            }
            _ => unreachable!("env state always matches its task family"),
        })
    }

    fn observe(&self) -> Observation {
        let mut v = Vec::with_capacity(self.task.observation_dim());
        v.extend_from_slice(&self.task.signature);
        let mut s = [0.0; STATE_DIM];
        match (&self.state, &self.task.params) {
            (Some(EnvState::Chain { position }), TaskParams::Chain { length, .. }) => {
                let frac = *position as f64 / *length as f64;
                s[0] = frac;
                s[1] = 1.0 - frac;
            }
            (Some(EnvState::Bandit { pulls }), TaskParams::BanditRoom { horizon, .. }) => {
                s[0] = *pulls as f64 / *horizon as f64;
            }
            (Some(EnvState::Grid { x, y }), TaskParams::GridNav { size, goal, .. }) => {
                let scale = (*size - 1) as f64;
                s[0] = *x as f64 / scale;
                s[1] = *y as f64 / scale;
                s[2] = (goal[0] as f64 - *x as f64) / scale;
                s[3] = (goal[1] as f64 - *y as f64) / scale;
            }
            _ => {}
        }
        v.extend_from_slice(&s);
        Observation(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn task(params: TaskParams) -> TaskDescriptor {
        TaskDescriptor {
            name: "t".into(),
            params,
            signature: vec![0.5; SIGNATURE_DIM],
        }
    }

    fn chain(length: usize, slip: f64) -> TaskDescriptor {
        task(TaskParams::Chain {
            length,
            slip,
            forward_action: 1,
        })
    }

    #[test]
    fn chain_reset_encodes_position_zero() {
        let mut env = TaskEnv::new(chain(5, 0.1), 4, 200).unwrap();
        let obs = env.reset(&mut stream(1, Stream::Train(0)));
        assert_eq!(&obs.as_slice()[SIGNATURE_DIM..], &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn deterministic_chain_walk() {
        let mut rng = stream(3, Stream::Train(0));
        let mut env = TaskEnv::new(chain(3, 0.0), 4, 200).unwrap();
        env.reset(&mut rng);
        let mut score = 0.0;
        let mut steps = 0;
        loop {
            let (_, r, done) = env.step(1, &mut rng).unwrap();
            score += r;
            steps += 1;
            if done {
                break;
            }
        }
        assert_eq!(steps, 3);
        assert_eq!(score, 1.0);
        assert!(matches!(env.step(1, &mut rng), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn union_action_beyond_native_is_noop() {
        let mut rng = stream(3, Stream::Train(0));
        let mut env = TaskEnv::new(chain(4, 0.0), 6, 200).unwrap();
        env.reset(&mut rng);
        env.step(1, &mut rng).unwrap();
        let before = env.observe();
        let (obs, r, done) = env.step(5, &mut rng).unwrap();
        assert_eq!(obs, before);
        assert_eq!(r, 0.0);
        assert!(!done);
        assert_eq!(env.steps(), 2);
        assert!(matches!(env.step(6, &mut rng), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn step_before_reset_fails() {
        let mut rng = stream(3, Stream::Train(0));
        let mut env = TaskEnv::new(chain(4, 0.0), 4, 200).unwrap();
        assert!(matches!(env.step(0, &mut rng), Err(Error::NotReset)));
    }

    #[test]
    fn cap_truncates() {
        let mut rng = stream(3, Stream::Train(0));
        let mut env = TaskEnv::new(chain(4, 0.0), 4, 5).unwrap();
        env.reset(&mut rng);
        let mut n = 0;
        while !env.step(3, &mut rng).unwrap().2 {
            n += 1;
        }
        assert_eq!(n + 1, 5);
    }

    #[test]
    fn oracle_targets() {
        let bandit = task(TaskParams::BanditRoom {
            payoffs: vec![0.1, 0.9],
            horizon: 10,
        });
        assert!((oracle_target(&bandit, 200).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(oracle_target(&chain(7, 0.0), 200).unwrap(), 1.0);
        assert!((oracle_target(&chain(4, 0.1), 200).unwrap() - 0.9f64.powi(4)).abs() < 1e-15);
        assert!(oracle_target(&chain(300, 0.0), 200).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = task(TaskParams::BanditRoom {
            payoffs: vec![0.5],
            horizon: 10,
        });
        assert!(TaskEnv::new(bad, 4, 200).is_err());
        let grid = task(TaskParams::GridNav {
            size: 4,
            goal: [0, 0],
            slip: 0.0,
            step_cost: 1.0,
            goal_reward: 10.0,
        });
        assert!(TaskEnv::new(grid, 4, 200).is_err());
        let wide = task(TaskParams::BanditRoom {
            payoffs: vec![0.5; 5],
            horizon: 10,
        });
        assert!(TaskEnv::new(wide, 4, 200).is_err());
    }
}
