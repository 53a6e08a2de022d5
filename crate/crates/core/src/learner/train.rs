use rand::Rng as _;

use super::gradients::{compute_gradients, Transition, TransitionBatch};
use super::net::{sample_index, ActorCriticNet, NetShape};
use super::optim::{apply_update, clip_norm, LrSchedule, RmsProp};
use super::{HeadsMode, LearnerConfig};
use crate::envs::{EpisodeOutcome, MultiTaskInstance, Observation, TaskEnv};
use crate::error::Result;
use crate::rng::Rng;
use crate::task::TaskId;

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub action: usize,
    pub probs: Vec<f64>,
    pub value: f64,
    /// Recurrent state after this step (None for feed-forward nets).
    pub hidden: Option<Vec<f64>>,
}

/// Samples an action from the policy at `obs`. Consumes exactly one uniform draw.
pub fn act(
    net: &ActorCriticNet,
    obs: &Observation,
    task: TaskId,
    hidden: Option<&[f64]>,
    clamp: Option<usize>,
    rng: &mut Rng,
) -> Result<Action> {
    let f = net.forward(obs.as_slice(), hidden, task.0, clamp)?;
    let action = sample_index(&f.probs, rng.random());
    let hidden = net.shape().recurrent.then(|| f.hidden().to_vec());
    Ok(Action {
        action,
        probs: f.probs,
        value: f.value,
        hidden,
    })
}

/// Per-task training state: the environment, its random stream, and whatever
/// is needed to resume a half-finished episode.
#[derive(Debug, Clone)]
pub struct TaskSlot {
    pub task: TaskId,
    env: TaskEnv,
    rng: Rng,
    obs: Option<Observation>,
    hidden: Option<Vec<f64>>,
}

impl TaskSlot {
    pub fn new(instance: &MultiTaskInstance, task: TaskId, rng: Rng) -> Result<Self> {
        Ok(Self {
            task,
            env: instance.make_env(task)?,
            rng,
            obs: None,
            hidden: None,
        })
    }

    /// Drops any episode in progress; the next collection starts a new one.
    pub fn reset_episode(&mut self) {
        self.obs = None;
        self.hidden = None;
    }

    pub fn env(&self) -> &TaskEnv {
        &self.env
    }

    /// True when an episode is in progress and will be resumed.
    pub fn mid_episode(&self) -> bool {
        self.obs.is_some()
    }

    pub fn hidden(&self) -> Option<&[f64]> {
        self.hidden.as_deref()
    }
}

/// Experience gathered by one rollout chunk.
#[derive(Debug, Clone)]
pub struct Segment {
    pub batch: TransitionBatch,
    pub terminal: bool,
}

/// Network, optimiser state and step counters of the shared learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub net: ActorCriticNet,
    pub optimizer: RmsProp,
    pub schedule: LrSchedule,
    /// Environment steps consumed by training so far.
    pub steps: u64,
    pub updates: u64,
    /// When set, rollouts still happen but parameters are never updated.
    pub frozen: bool,
    config: LearnerConfig,
}

impl Learner {
    pub fn shape_for(config: &LearnerConfig, instance: &MultiTaskInstance) -> NetShape {
        NetShape {
            inputs: instance.observation_dim(),
            hidden: vec![config.hidden],
            recurrent: config.recurrent,
            outputs: instance.union_action_count,
            heads: match config.heads {
                HeadsMode::Shared => 0,
                HeadsMode::PerTask => instance.k(),
            },
        }
    }

    pub fn new(config: LearnerConfig, instance: &MultiTaskInstance, total_steps: u64, init_rng: &mut Rng) -> Self {
        let net = ActorCriticNet::random(Self::shape_for(&config, instance), init_rng);
        Self::from_net(config, net, total_steps)
    }

    pub fn from_net(config: LearnerConfig, net: ActorCriticNet, total_steps: u64) -> Self {
        let optimizer = RmsProp::new(net.len(), config.rms_decay, config.rms_epsilon);
        let schedule = LrSchedule {
            initial: config.lr,
            last: config.lr_final,
            total_steps,
        };
        Self {
            net,
            optimizer,
            schedule,
            steps: 0,
            updates: 0,
            frozen: false,
            config,
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    /// Runs the slot's task for at most `max_steps` steps, starting a new
    /// episode if none is in progress, without touching the parameters.
    pub fn collect(&self, slot: &mut TaskSlot, max_steps: usize) -> Result<Segment> {
        if slot.obs.is_none() {
            slot.obs = Some(slot.env.reset(&mut slot.rng));
            slot.hidden = None;
        }
        let initial_hidden = slot.hidden.clone();
        let mut steps = Vec::with_capacity(max_steps);
        let mut terminal = false;
        while steps.len() < max_steps {
            let obs = slot.obs.take().expect("episode in progress");
            let a = act(&self.net, &obs, slot.task, slot.hidden.as_deref(), None, &mut slot.rng)?;
            let (next, reward, done) = slot.env.step(a.action, &mut slot.rng)?;
            steps.push(Transition {
                observation: obs.0,
                action: a.action,
                reward,
                value: a.value,
            });
            slot.hidden = a.hidden;
            if done {
                terminal = true;
                slot.hidden = None;
                break;
            }
            slot.obs = Some(next);
        }
        let bootstrap = match &slot.obs {
            Some(obs) if !terminal => {
                self.net
                    .forward(obs.as_slice(), slot.hidden.as_deref(), slot.task.0, None)?
                    .value
            }
            _ => 0.0,
        };
        Ok(Segment {
            batch: TransitionBatch {
                task: slot.task,
                steps,
                bootstrap,
                initial_hidden,
            },
            terminal,
        })
    }

    /// Gradient of the actor-critic loss on a batch, clipped to `max_grad_norm`.
    pub fn gradient(&self, batch: &TransitionBatch) -> Result<Vec<f64>> {
        let mut g = compute_gradients(&self.net, batch, self.config.loss_weights())?.total;
        if self.config.max_grad_norm > 0.0 {
            clip_norm(&mut g, self.config.max_grad_norm);
        }
        Ok(g)
    }

    /// Accounts for `steps` consumed environment steps and applies `grad`.
    pub fn apply(&mut self, grad: &[f64], steps: usize) -> Result<()> {
        self.steps += steps as u64;
        if self.frozen {
            return Ok(());
        }
        apply_update(&mut self.net, &mut self.optimizer, grad, &self.schedule, self.steps)?;
        self.updates += 1;
        Ok(())
    }

    fn learn(&mut self, segment: &Segment) -> Result<()> {
        if self.frozen {
            self.steps += segment.batch.len() as u64;
            return Ok(());
        }
        let g = self.gradient(&segment.batch)?;
        self.apply(&g, segment.batch.len())
    }

    /// Plays one full episode of the slot's task, updating every `n_step`
    /// steps and at the end of the episode.
    pub fn train_for_one_episode(&mut self, slot: &mut TaskSlot) -> Result<EpisodeOutcome> {
        slot.reset_episode();
        let mut outcome = EpisodeOutcome::default();
        loop {
            let seg = self.collect(slot, self.config.n_step)?;
            for t in &seg.batch.steps {
                outcome.record(t.reward);
            }
            self.learn(&seg)?;
            if seg.terminal {
                outcome.terminal = true;
                return Ok(outcome);
            }
        }
    }

    /// Advances the slot's current episode by `n` steps (fewer if it ends)
    /// with a single update. The episode and recurrent state stay cached in
    /// the slot so the task can be resumed later.
    pub fn train_for_n_steps(&mut self, slot: &mut TaskSlot, n: usize) -> Result<EpisodeOutcome> {
        let seg = self.collect(slot, n)?;
        let mut outcome = EpisodeOutcome::default();
        for t in &seg.batch.steps {
            outcome.record(t.reward);
        }
        outcome.terminal = seg.terminal;
        self.learn(&seg)?;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{preset, TaskDescriptor, TaskParams, SIGNATURE_DIM};
    use crate::rng::{stream, Stream};

    fn chain_instance(length: usize) -> MultiTaskInstance {
        let task = |i: usize| TaskDescriptor {
            name: format!("c{i}"),
            params: TaskParams::Chain {
                length,
                slip: 0.0,
                forward_action: 1,
            },
            signature: (0..SIGNATURE_DIM).map(|d| if d == i { 1.0 } else { 0.0 }).collect(),
        };
        MultiTaskInstance::with_oracle_targets("chains", vec![task(0), task(1)], 2, 200).unwrap()
    }

    fn learner(inst: &MultiTaskInstance, cfg: LearnerConfig) -> Learner {
        Learner::new(cfg, inst, 10_000, &mut stream(1, Stream::LearnerInit))
    }

    #[test]
    fn update_cadence_follows_n_step() {
        // A 45-step episode: bandit horizon 45 never terminates early.
        let task = TaskDescriptor {
            name: "b".into(),
            params: TaskParams::BanditRoom {
                payoffs: vec![0.5, 0.5],
                horizon: 45,
            },
            signature: vec![1.0; SIGNATURE_DIM],
        };
        let mut other = task.clone();
        other.name = "b2".into();
        other.signature[0] = 0.0;
        let inst = MultiTaskInstance::with_oracle_targets("b", vec![task, other], 2, 200).unwrap();
        let mut l = learner(&inst, LearnerConfig::default());
        let mut slot = TaskSlot::new(&inst, TaskId(0), stream(1, Stream::Train(0))).unwrap();
        let mut lengths = Vec::new();
        loop {
            let seg = l.collect(&mut slot, 20).unwrap();
            lengths.push(seg.batch.len());
            if seg.terminal {
                break;
            }
        }
        assert_eq!(lengths, vec![20, 20, 5]);

        let before = l.updates;
        let out = l.train_for_one_episode(&mut slot).unwrap();
        assert_eq!(out.length, 45);
        assert_eq!(l.updates - before, 3);
        assert_eq!(l.steps, 45);
    }

    #[test]
    fn one_step_episode_is_one_update() {
        let inst = chain_instance(1);
        let mut l = learner(&inst, LearnerConfig::default());
        let mut slot = TaskSlot::new(&inst, TaskId(0), stream(1, Stream::Train(0))).unwrap();
        // Keep playing until an episode happens to finish in one step.
        loop {
            let before = l.updates;
            let out = l.train_for_one_episode(&mut slot).unwrap();
            if out.length == 1 {
                assert_eq!(l.updates - before, 1);
                assert_eq!(out.score, out.per_step_rewards.iter().sum::<f64>());
                break;
            }
        }
    }

    #[test]
    fn n_step_chunks_resume_and_flag_terminal() {
        let inst = chain_instance(30);
        let mut l = learner(&inst, LearnerConfig::default());
        let mut slot = TaskSlot::new(&inst, TaskId(0), stream(2, Stream::Train(0))).unwrap();
        let out = l.train_for_n_steps(&mut slot, 20).unwrap();
        assert_eq!(out.length, 20);
        assert!(!out.terminal);
        assert!(slot.mid_episode());
        assert_eq!(slot.env().steps(), 20);
        let mut total = 20;
        loop {
            let out = l.train_for_n_steps(&mut slot, 20).unwrap();
            total += out.length;
            if out.terminal {
                assert!(out.length <= 20);
                break;
            }
        }
        assert!(total <= 200);
        assert!(!slot.mid_episode());
    }

    #[test]
    fn recurrent_learner_trains() {
        let inst = preset("syn6").unwrap();
        let cfg = LearnerConfig {
            recurrent: true,
            hidden: 8,
            ..LearnerConfig::default()
        };
        let mut l = learner(&inst, cfg);
        let mut slot = TaskSlot::new(&inst, TaskId(2), stream(2, Stream::Train(2))).unwrap();
        let before = l.net.checksum();
        l.train_for_one_episode(&mut slot).unwrap();
        assert_ne!(before, l.net.checksum());
        let out = l.train_for_n_steps(&mut slot, 3).unwrap();
        assert!(out.length <= 3);
    }

    #[test]
    fn same_seed_same_action() {
        let inst = preset("syn6").unwrap();
        let l = learner(&inst, LearnerConfig::default());
        let obs = inst.make_env(TaskId(0)).unwrap().reset(&mut stream(0, Stream::Train(0)));
        let a = act(&l.net, &obs, TaskId(0), None, None, &mut stream(5, Stream::Train(0))).unwrap();
        let b = act(&l.net, &obs, TaskId(0), None, None, &mut stream(5, Stream::Train(0))).unwrap();
        assert_eq!(a, b);
    }
}
