use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Cadence, SchedulerConfig, SchedulerDecision, SchedulerKind, TaskScheduler};
use crate::envs::EpisodeOutcome;
use crate::error::{Error, Result};
use crate::learner::{
    apply_update, compute_gradients, ActorCriticNet, LossWeights, LrSchedule, NetShape, RmsProp, Transition,
    TransitionBatch,
};
use crate::rng::Rng;
use crate::task::{ScoreWindow, TaskId};

/// Which form the worst-task term of the meta reward takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Second term is `mean(clip(perf))` over the worst tasks.
    #[default]
    Performance,
    /// Second term is `1 − mean(clip(perf))` over the worst tasks.
    Shortfall,
}

/// Meta reward for having trained on a task whose lag is `m_j`.
///
/// `normalized_perf` holds a_i / ta_i for every task; the `worst_count`
/// lowest enter the second term clipped to [0, 1].
pub fn ea4c_reward(m_j: f64, normalized_perf: &[f64], lambda: f64, worst_count: usize, mode: RewardMode) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if worst_count == 0 || worst_count > normalized_perf.len() {
        return Err(Error::Domain(format!(
            "worst_count {worst_count} outside 1..={}",
            normalized_perf.len()
        )));
    }
    if !m_j.is_finite() || normalized_perf.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("meta reward inputs must be finite".into()));
    }
    let mut perf = normalized_perf.to_vec();
    perf.sort_by(f64::total_cmp);
    let worst = perf[..worst_count].iter().map(|p| p.clamp(0.0, 1.0)).sum::<f64>() / worst_count as f64;
    let second = match mode {
        RewardMode::Performance => worst,
        RewardMode::Shortfall => 1.0 - worst,
    };
    Ok(lambda * m_j + (1.0 - lambda) * second)
}

/// Averaged N-step score: for each episode, the reward over its first
/// floor(l / N)·N steps divided by floor(l / N), then the mean over episodes.
pub fn fa4c_target(outcomes: &[EpisodeOutcome], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("chunk length must be positive".into()));
    }
    if outcomes.is_empty() {
        return Err(Error::NoEstimate);
    }
    let mut total = 0.0;
    for (i, o) in outcomes.iter().enumerate() {
        let l = o.per_step_rewards.len();
        let x = l / n;
        if x == 0 {
            return Err(Error::Domain(format!("episode {i} has {l} steps, fewer than {n}")));
        }
        let mut sum = 0.0;
        for r in &o.per_step_rewards[..x * n] {
            sum += r;
        }
        total += sum / x as f64;
    }
    Ok(total / outcomes.len() as f64)
}

/// Meta-learner input: normalised pick counts, one-hot previous task and the
/// previous sampling distribution, each of length k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetaState(pub Vec<f64>);

impl MetaState {
    /// State before any pick: zero counts, no previous task, uniform policy.
    pub fn initial(k: usize) -> Self {
        let mut v = vec![0.0; 3 * k];
        v[2 * k..].iter_mut().for_each(|p| *p = 1.0 / k as f64);
        Self(v)
    }

    pub fn build(counts: &[f64], previous: TaskId, prev_distribution: &[f64]) -> Result<Self> {
        let k = counts.len();
        if prev_distribution.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: prev_distribution.len(),
            });
        }
        if previous.0 >= k {
            return Err(Error::UnknownTask { index: previous.0, count: k });
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("pick counts must have a positive sum".into()));
        }
        let mut v = Vec::with_capacity(3 * k);
        v.extend(counts.iter().map(|c| c / total));
        v.extend((0..k).map(|i| if i == previous.0 { 1.0 } else { 0.0 }));
        v.extend_from_slice(prev_distribution);
        Ok(Self(v))
    }

    pub fn k(&self) -> usize {
        self.0.len() / 3
    }

    pub fn counts(&self) -> &[f64] {
        &self.0[..self.k()]
    }

    pub fn previous(&self) -> &[f64] {
        let k = self.k();
        &self.0[k..2 * k]
    }

    pub fn distribution(&self) -> &[f64] {
        &self.0[2 * self.k()..]
    }

    /// Checks the simplex and one-hot structure of the three blocks.
    pub fn check(&self) -> Result<()> {
        let simplex = |b: &[f64]| b.iter().all(|&x| x >= 0.0) && (b.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        let prev = self.previous();
        let one_hot = prev.iter().all(|&x| x == 0.0 || x == 1.0) && prev.iter().sum::<f64>() == 1.0;
        if self.0.len() % 3 != 0 || !simplex(self.counts()) || !one_hot || !simplex(self.distribution()) {
            return Err(Error::Domain(format!("malformed meta state {:?}", self.0)));
        }
        Ok(())
    }
}

/// Actor-critic over task choices, trained with one-step returns.
#[derive(Debug, Clone)]
pub struct MetaLearner {
    pub net: ActorCriticNet,
    pub optimizer: RmsProp,
    pub schedule: LrSchedule,
    pub weights: LossWeights,
    /// When set the network is never updated.
    pub frozen: bool,
    state: MetaState,
    entering_hidden: Option<Vec<f64>>,
    distribution: Vec<f64>,
    counts: Vec<f64>,
    updates: u64,
}

impl MetaLearner {
    pub fn shape(config: &SchedulerConfig, k: usize) -> NetShape {
        NetShape {
            inputs: 3 * k,
            hidden: vec![config.meta_hidden; config.meta_layers],
            recurrent: config.meta_recurrent,
            outputs: k,
            heads: 0,
        }
    }

    pub fn new(config: &SchedulerConfig, k: usize, total_steps: u64, init: &mut Rng) -> Self {
        Self::from_net(config, ActorCriticNet::random(Self::shape(config, k), init), total_steps)
    }

    pub fn from_net(config: &SchedulerConfig, net: ActorCriticNet, total_steps: u64) -> Self {
        let k = net.shape().outputs;
        Self {
            optimizer: RmsProp::new(net.len(), config.meta_rms_decay, config.meta_rms_epsilon),
            schedule: LrSchedule {
                initial: config.meta_lr,
                last: config.meta_lr_final,
                total_steps,
            },
            weights: LossWeights {
                gamma: config.meta_gamma,
                entropy_beta: config.meta_entropy,
                value_coef: config.meta_value_coef,
            },
            net,
            frozen: false,
            state: MetaState::initial(k),
            entering_hidden: None,
            distribution: vec![1.0 / k as f64; k],
            counts: vec![0.0; k],
            updates: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// Sampling distribution for the next decision.
    pub fn distribution(&self) -> &[f64] {
        &self.distribution
    }

    pub fn state(&self) -> &MetaState {
        &self.state
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Learns from having picked `task` and received `reward`, moves to the
    /// next state and recomputes the sampling distribution.
    pub fn step(&mut self, task: TaskId, reward: f64, learner_step: u64) -> Result<&[f64]> {
        if !reward.is_finite() {
            return Err(Error::NonFinite {
                step: self.updates as usize,
                what: "meta reward",
            });
        }
        let k = self.k();
        if task.0 >= k {
            return Err(Error::UnknownTask { index: task.0, count: k });
        }
        self.counts[task.0] += 1.0;
        let next = MetaState::build(&self.counts, task, &self.distribution)?;
        let here = self.net.forward(&self.state.0, self.entering_hidden.as_deref(), 0, None)?;
        let carried = self.net.shape().recurrent.then(|| here.hidden().to_vec());
        if !self.frozen {
            let bootstrap = self.net.forward(&next.0, carried.as_deref(), 0, None)?.value;
            let batch = TransitionBatch {
                task: TaskId(0),
                steps: vec![Transition {
                    observation: self.state.0.clone(),
                    action: task.0,
                    reward,
                    value: here.value,
                }],
                bootstrap,
                initial_hidden: self.entering_hidden.clone(),
            };
            let grad = compute_gradients(&self.net, &batch, self.weights)?;
            apply_update(&mut self.net, &mut self.optimizer, &grad.total, &self.schedule, learner_step)?;
            self.updates += 1;
        }
        self.distribution = self.net.forward(&next.0, carried.as_deref(), 0, None)?.probs;
        self.entering_hidden = carried;
        self.state = next;
        Ok(&self.distribution)
    }
}

fn normalized(windows: &[ScoreWindow], targets: &[f64]) -> Vec<f64> {
    windows.iter().zip(targets).map(|(w, ta)| w.average_or_zero() / ta).collect()
}

fn meta_decision(meta: &MetaLearner, last_reward: Option<f64>, perf: Vec<f64>, rng: &mut Rng) -> SchedulerDecision {
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("normalized_perf".into(), perf);
    if let Some(r) = last_reward {
        diagnostics.insert("meta_reward".into(), vec![r]);
    }
    SchedulerDecision::draw(meta.distribution().to_vec(), diagnostics, rng)
}

fn check_targets(targets: &[f64], k: usize) -> Result<()> {
    if targets.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: targets.len(),
        });
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("targets must be positive, got {t}")));
    }
    Ok(())
}

/// Meta-learner scheduler deciding at episode ends, rewarded on the
/// trained task's lag and the worst tasks' normalised performance.
#[derive(Debug, Clone)]
pub struct EpisodicMetaScheduler {
    meta: MetaLearner,
    targets: Vec<f64>,
    windows: Vec<ScoreWindow>,
    lambda: f64,
    mode: RewardMode,
    worst_count: usize,
    last_reward: Option<f64>,
}

impl EpisodicMetaScheduler {
    pub fn new(meta: MetaLearner, targets: Vec<f64>, config: &SchedulerConfig) -> Result<Self> {
        let k = meta.k();
        check_targets(&targets, k)?;
        Ok(Self {
            meta,
            targets,
            windows: vec![ScoreWindow::new(config.window); k],
            lambda: config.lambda,
            mode: config.reward_mode,
            worst_count: config.worst_count_for(k),
            last_reward: None,
        })
    }

    pub fn meta(&self) -> &MetaLearner {
        &self.meta
    }
}

impl TaskScheduler for EpisodicMetaScheduler {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::Ea4c
    }

    fn decide(&mut self, _train_steps: u64, rng: &mut Rng) -> Result<SchedulerDecision> {
        let perf = normalized(&self.windows, &self.targets);
        Ok(meta_decision(&self.meta, self.last_reward, perf, rng))
    }

    fn observe(&mut self, task: TaskId, outcome: &EpisodeOutcome, train_steps: u64) -> Result<()> {
        let k = self.targets.len();
        self.windows
            .get_mut(task.0)
            .ok_or(Error::UnknownTask { index: task.0, count: k })?
            .push(outcome.score);
        let perf = normalized(&self.windows, &self.targets);
        let m_j = 1.0 - perf[task.0];
        let r = ea4c_reward(m_j, &perf, self.lambda, self.worst_count, self.mode)?;
        self.meta.step(task, r, train_steps)?;
        self.last_reward = Some(r);
        Ok(())
    }
}

/// Meta-learner scheduler deciding every N learner steps, scored against
/// N-step targets.
#[derive(Debug, Clone)]
pub struct FineGrainedMetaScheduler {
    meta: MetaLearner,
    fine_targets: Vec<f64>,
    windows: Vec<ScoreWindow>,
    lambda: f64,
    mode: RewardMode,
    worst_count: usize,
    interval: usize,
    last_reward: Option<f64>,
}

impl FineGrainedMetaScheduler {
    pub fn new(meta: MetaLearner, fine_targets: Vec<f64>, config: &SchedulerConfig) -> Result<Self> {
        let k = meta.k();
        check_targets(&fine_targets, k)?;
        Ok(Self {
            meta,
            fine_targets,
            windows: vec![ScoreWindow::new(config.window); k],
            lambda: config.lambda,
            mode: config.reward_mode,
            worst_count: config.worst_count_for(k),
            interval: config.decision_interval,
            last_reward: None,
        })
    }

    pub fn meta(&self) -> &MetaLearner {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut MetaLearner {
        &mut self.meta
    }

    /// Reward for a chunk on `task` that scored `score`.
    pub fn reward(&self, task: TaskId, score: f64) -> Result<f64> {
        let perf = normalized(&self.windows, &self.fine_targets);
        let r1 = 1.0 - score / self.fine_targets[task.0];
        ea4c_reward(r1, &perf, self.lambda, self.worst_count, self.mode)
    }
}

impl TaskScheduler for FineGrainedMetaScheduler {
    fn kind(&self) -> SchedulerKind {
        SchedulerKind::Fa4c
    }

    fn cadence(&self) -> Cadence {
        Cadence::Steps(self.interval)
    }

    fn decide(&mut self, _train_steps: u64, rng: &mut Rng) -> Result<SchedulerDecision> {
        let perf = normalized(&self.windows, &self.fine_targets);
        Ok(meta_decision(&self.meta, self.last_reward, perf, rng))
    }

    fn observe(&mut self, task: TaskId, outcome: &EpisodeOutcome, train_steps: u64) -> Result<()> {
        let k = self.fine_targets.len();
        self.windows
            .get_mut(task.0)
            .ok_or(Error::UnknownTask { index: task.0, count: k })?
            .push(outcome.score);
        let r = self.reward(task, outcome.score)?;
        self.meta.step(task, r, train_steps)?;
        self.last_reward = Some(r);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng as _;

    #[test]
    fn reward_worked_examples() {
        let perf = [0.3, 0.1, 0.9, 0.2];
        let performance = ea4c_reward(0.4, &perf, 0.5, 3, RewardMode::Performance).unwrap();
        let shortfall = ea4c_reward(0.4, &perf, 0.5, 3, RewardMode::Shortfall).unwrap();
        assert!((performance - 0.3).abs() < 1e-15);
        assert!((shortfall - 0.6).abs() < 1e-15);
        assert!((ea4c_reward(0.0, &[1.0; 5], 0.25, 3, RewardMode::Performance).unwrap() - 0.75).abs() < 1e-15);
        assert!(ea4c_reward(0.0, &[1.0; 5], 1.5, 3, RewardMode::Performance).is_err());
        assert!(ea4c_reward(0.0, &[1.0; 2], 0.5, 3, RewardMode::Performance).is_err());
    }

    #[test]
    fn state_example() {
        let s = MetaState::build(&[1.0, 1.0, 2.0], TaskId(2), &[1.0 / 3.0; 3]).unwrap();
        assert_eq!(&s.0[..6], &[0.25, 0.25, 0.5, 0.0, 0.0, 1.0]);
        assert_eq!(s.distribution(), &[1.0 / 3.0; 3]);
        s.check().unwrap();
    }

    #[test]
    fn fine_target_examples() {
        let ep = |rewards: Vec<f64>| EpisodeOutcome {
            score: rewards.iter().sum(),
            length: rewards.len(),
            per_step_rewards: rewards,
            terminal: true,
        };
        assert_eq!(fa4c_target(&[ep(vec![1.0; 40])], 20).unwrap(), 20.0);
        assert_eq!(fa4c_target(&[ep(vec![0.0; 45])], 20).unwrap(), 0.0);
        assert_eq!(fa4c_target(&[ep(vec![1.0; 20]), ep(vec![0.5; 20])], 20).unwrap(), 15.0);
        assert!(fa4c_target(&[ep(vec![1.0; 19])], 20).is_err());
    }

    #[test]
    fn first_distribution_uniform_and_updates_change_it() {
        let cfg = SchedulerConfig {
            meta_hidden: 4,
            meta_lr: 1e-2,
            ..SchedulerConfig::default()
        };
        let mut meta = MetaLearner::new(&cfg, 3, 1000, &mut stream(1, Stream::MetaInit));
        assert_eq!(meta.distribution(), &[1.0 / 3.0; 3]);
        let before = meta.net.checksum();
        meta.step(TaskId(1), 1.0, 0).unwrap();
        assert_ne!(meta.net.checksum(), before);
        meta.state().check().unwrap();
        assert!(meta.step(TaskId(1), f64::NAN, 0).is_err());
    }

    #[test]
    fn state_invariants_over_many_steps() {
        let cfg = SchedulerConfig {
            meta_hidden: 8,
            meta_recurrent: true,
            ..SchedulerConfig::default()
        };
        let mut meta = MetaLearner::new(&cfg, 4, 10_000, &mut stream(2, Stream::MetaInit));
        let mut rng = stream(2, Stream::Scheduler);
        for t in 0..500 {
            let task = crate::learner::sample_index(meta.distribution(), rng.random());
            meta.step(TaskId(task), rng.random_range(-1.0..1.0), t).unwrap();
            meta.state().check().unwrap();
        }
    }
}
