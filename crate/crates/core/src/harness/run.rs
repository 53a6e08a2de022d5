//! The training loop: scheduler picks a task, the learner trains on it, the
//! scheduler sees the result, and evaluation runs on a fixed step schedule.

use std::collections::BTreeMap;
use std::sync::RwLock;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::envs::{EpisodeOutcome, MultiTaskInstance};
use crate::error::{Error, Result};
use crate::learner::{Learner, TaskSlot};
use crate::metrics::{evaluate, EvalReport, EvalSpec, OracleActor};
use crate::rng::{stream, Rng, Stream};
use crate::schedulers::{build_scheduler, fa4c_target, Cadence, SchedulerKind};
use crate::task::TaskId;

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub index: u64,
    /// Learner steps taken before the decision.
    pub step: u64,
    pub task: TaskId,
    pub distribution: Vec<f64>,
    pub diagnostics: BTreeMap<String, Vec<f64>>,
}

/// Receives the artifacts of a run as they are produced.
pub trait RunObserver {
    fn decision(&mut self, _record: &DecisionRecord) -> Result<()> {
        Ok(())
    }

    fn evaluation(&mut self, _report: &EvalReport) -> Result<()> {
        Ok(())
    }

    /// Called every `checkpoint_interval` steps and once at the end.
    fn checkpoint(&mut self, _learner: &Learner, _is_final: bool) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub learner: Learner,
    pub reports: Vec<EvalReport>,
    pub decisions: u64,
    /// Learner steps spent on each task.
    pub task_steps: Vec<u64>,
}

impl RunOutcome {
    pub fn final_report(&self) -> &EvalReport {
        self.reports.last().expect("a run always ends with an evaluation")
    }
}

/// Oracle episodes used to estimate chunk-level targets.
const FINE_TARGET_EPISODES: usize = 20;

/// Per-task targets for N-step chunks.
///
/// Uses the instance's own values when present. Otherwise, for tasks whose
/// optimal episodes are at least N steps long, the averaged N-step score of
/// oracle play; for shorter tasks a chunk is a whole episode, so the episode
/// target is used.
pub fn fine_targets(instance: &MultiTaskInstance, n: usize, seed: u64) -> Result<Vec<f64>> {
    if let Some(t) = &instance.fine_targets {
        return Ok(t.clone());
    }
    let mut out = Vec::with_capacity(instance.k());
    for task in instance.task_ids() {
        let mut env = instance.make_env(task)?;
        let mut rng = stream(seed, Stream::Eval { task: task.0, checkpoint: u64::MAX });
        let mut episodes = Vec::with_capacity(FINE_TARGET_EPISODES);
        for _ in 0..FINE_TARGET_EPISODES {
            let mut actor = OracleActor;
            let mut outcome = EpisodeOutcome::default();
            let mut obs = env.reset(&mut rng);
            loop {
                let a = crate::metrics::Actor::act(&mut actor, task, &env, &obs, &mut rng)?;
                let (next, r, done) = env.step(a, &mut rng)?;
                outcome.record(r);
                obs = next;
                if done {
                    break;
                }
            }
            episodes.push(outcome);
        }
        let target = if episodes.iter().all(|e| e.length >= n) {
            fa4c_target(&episodes, n)?
        } else {
            instance.targets.get(task)
        };
        if !(target > 0.0) {
            return Err(Error::Domain(format!(
                "task `{}` has no positive chunk target",
                instance.tasks[task.0].name
            )));
        }
        out.push(target);
    }
    Ok(out)
}

fn make_slots(instance: &MultiTaskInstance, seed: u64, worker: usize) -> Result<Vec<TaskSlot>> {
    let mut seeder = (worker > 0).then(|| stream(seed, Stream::Worker(worker)));
    instance
        .task_ids()
        .map(|t| {
            let rng = match &mut seeder {
                None => stream(seed, Stream::Train(t.0)),
                Some(s) => Rng::seed_from_u64(s.random()),
            };
            TaskSlot::new(instance, t, rng)
        })
        .collect()
}

/// Trains on one task for one unit of the cadence while other workers may do
/// the same. Parameters are read under a shared lock and each batch update is
/// applied under the exclusive lock.
fn train_shared(lock: &RwLock<Learner>, slot: &mut TaskSlot, cadence: Cadence, budget: usize) -> Result<EpisodeOutcome> {
    let poisoned = || Error::Domain("a worker panicked while holding the learner".into());
    let mut outcome = EpisodeOutcome::default();
    let chunk = match cadence {
        Cadence::Episode => {
            slot.reset_episode();
            lock.read().map_err(|_| poisoned())?.config().n_step
        }
        Cadence::Steps(n) => n.min(budget),
    };
    loop {
        let (segment, grad) = {
            let learner = lock.read().map_err(|_| poisoned())?;
            let seg = learner.collect(slot, chunk)?;
            let grad = if learner.frozen { None } else { Some(learner.gradient(&seg.batch)?) };
            (seg, grad)
        };
        for t in &segment.batch.steps {
            outcome.record(t.reward);
        }
        {
            let mut learner = lock.write().map_err(|_| poisoned())?;
            match grad {
                Some(g) => learner.apply(&g, segment.batch.len())?,
                None => learner.steps += segment.batch.len() as u64,
            }
        }
        if segment.terminal {
            outcome.terminal = true;
            return Ok(outcome);
        }
        if let Cadence::Steps(_) = cadence {
            return Ok(outcome);
        }
    }
}

/// Runs the configured experiment on `instance`, reporting to `observer`.
pub fn train(config: &RunConfig, instance: &MultiTaskInstance, observer: &mut dyn RunObserver) -> Result<RunOutcome> {
    config.validate()?;
    let seed = config.seed;
    let total = config.total_steps;
    let k = instance.k();
    let mut learner = Learner::new(config.learner.clone(), instance, total, &mut stream(seed, Stream::LearnerInit));
    let fine = match config.scheduler.kind {
        SchedulerKind::Fa4c => Some(fine_targets(instance, config.scheduler.decision_interval, seed)?),
        _ => None,
    };
    let mut scheduler = build_scheduler(&config.scheduler, instance, total, &mut stream(seed, Stream::MetaInit), fine)?;
    let cadence = scheduler.cadence();
    let mut sched_rng = stream(seed, Stream::Scheduler);
    let workers = config.learner.workers.max(1);
    let mut slots: Vec<Vec<TaskSlot>> = (0..workers).map(|w| make_slots(instance, seed, w)).collect::<Result<_>>()?;

    let spec = EvalSpec {
        episodes: config.eval.episodes,
        episode_cap: config.eval.episode_cap,
        seed,
    };
    let mut reports = Vec::new();
    let run_eval = |learner: &Learner, observer: &mut dyn RunObserver, reports: &mut Vec<EvalReport>| -> Result<()> {
        let report = evaluate(&learner.net, instance, spec, learner.steps)?;
        observer.evaluation(&report)?;
        reports.push(report);
        Ok(())
    };
    run_eval(&learner, observer, &mut reports)?;
    let interval = config.eval.interval;
    let mut next_eval = interval;
    let mut next_checkpoint = match config.checkpoint_interval {
        0 => u64::MAX,
        c => c,
    };
    let mut decisions = 0u64;
    let mut task_steps = vec![0u64; k];

    while learner.steps < total {
        let round = workers.min(match cadence {
            Cadence::Episode => usize::MAX,
            Cadence::Steps(n) => (total - learner.steps).div_ceil(n as u64).max(1) as usize,
        });
        let mut picks = Vec::with_capacity(round);
        for _ in 0..round {
            let d = scheduler.decide(learner.steps, &mut sched_rng)?;
            if d.task.0 >= k {
                return Err(Error::UnknownTask { index: d.task.0, count: k });
            }
            observer.decision(&DecisionRecord {
                index: decisions,
                step: learner.steps,
                task: d.task,
                distribution: d.distribution,
                diagnostics: d.diagnostics,
            })?;
            decisions += 1;
            picks.push(d.task);
        }
        let remaining = (total - learner.steps) as usize;
        let outcomes: Vec<EpisodeOutcome> = if workers == 1 {
            let slot = &mut slots[0][picks[0].0];
            vec![match cadence {
                Cadence::Episode => learner.train_for_one_episode(slot)?,
                Cadence::Steps(n) => learner.train_for_n_steps(slot, n.min(remaining))?,
            }]
        } else {
            let lock = RwLock::new(learner);
            let results: Vec<Result<EpisodeOutcome>> = std::thread::scope(|s| {
                let handles: Vec<_> = slots
                    .iter_mut()
                    .zip(&picks)
                    .map(|(worker_slots, task)| {
                        let lock = &lock;
                        let slot = &mut worker_slots[task.0];
                        s.spawn(move || train_shared(lock, slot, cadence, remaining))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Domain("worker thread panicked".into()))))
                    .collect()
            });
            learner = lock
                .into_inner()
                .map_err(|_| Error::Domain("a worker panicked while holding the learner".into()))?;
            results.into_iter().collect::<Result<_>>()?
        };
        for (task, outcome) in picks.iter().zip(&outcomes) {
            task_steps[task.0] += outcome.length as u64;
            scheduler.observe(*task, outcome, learner.steps)?;
        }
        if learner.steps >= next_eval {
            run_eval(&learner, observer, &mut reports)?;
            next_eval = (learner.steps / interval + 1) * interval;
        }
        if learner.steps >= next_checkpoint {
            observer.checkpoint(&learner, false)?;
            next_checkpoint = (learner.steps / config.checkpoint_interval + 1) * config.checkpoint_interval;
        }
    }
    if reports.last().map(|r| r.step) != Some(learner.steps) {
        run_eval(&learner, observer, &mut reports)?;
    }
    observer.checkpoint(&learner, true)?;
    Ok(RunOutcome {
        learner,
        reports,
        decisions,
        task_steps,
    })
}

/// Replays a decision log: every record's task must be what its
/// distribution yields under the scheduler stream of `seed`.
pub fn replay_decisions(records: &[DecisionRecord], seed: u64) -> Result<()> {
    let mut rng = stream(seed, Stream::Scheduler);
    for r in records {
        let task = crate::learner::sample_index(&r.distribution, rng.random());
        if task != r.task.0 {
            return Err(Error::Format(format!(
                "decision {} chose task {} but its distribution replays to {task}",
                r.index, r.task
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::preset;

    #[derive(Default)]
    struct Capture {
        decisions: Vec<DecisionRecord>,
        evals: Vec<EvalReport>,
    }

    impl RunObserver for Capture {
        fn decision(&mut self, record: &DecisionRecord) -> Result<()> {
            self.decisions.push(record.clone());
            Ok(())
        }

        fn evaluation(&mut self, report: &EvalReport) -> Result<()> {
            self.evals.push(report.clone());
            Ok(())
        }
    }

    fn small(kind: SchedulerKind) -> RunConfig {
        let mut cfg = RunConfig {
            seed: 4,
            total_steps: 1500,
            ..RunConfig::default()
        };
        cfg.scheduler.kind = kind;
        cfg.scheduler.meta_hidden = 8;
        cfg.learner.hidden = 8;
        cfg.eval.interval = 500;
        cfg.eval.episodes = 1;
        cfg
    }

    #[test]
    fn every_scheduler_runs_within_budget_and_replays() {
        let inst = preset("syn6").unwrap();
        for kind in SchedulerKind::ALL {
            let cfg = small(kind);
            let mut cap = Capture::default();
            let out = train(&cfg, &inst, &mut cap).unwrap();
            assert!(out.learner.steps >= cfg.total_steps, "{kind}");
            assert!(out.learner.steps < cfg.total_steps + inst.episode_cap as u64, "{kind}");
            assert_eq!(out.task_steps.iter().sum::<u64>(), out.learner.steps);
            assert_eq!(cap.decisions.len() as u64, out.decisions);
            replay_decisions(&cap.decisions, cfg.seed).unwrap();
            assert_eq!(cap.evals.first().unwrap().step, 0);
            assert_eq!(cap.evals.last().unwrap().step, out.learner.steps);
            if kind == SchedulerKind::Fa4c {
                assert_eq!(out.learner.steps, cfg.total_steps);
            }
        }
    }

    #[test]
    fn tampered_log_fails_replay() {
        let inst = preset("syn6").unwrap();
        let mut cap = Capture::default();
        train(&small(SchedulerKind::Ba3c), &inst, &mut cap).unwrap();
        let mut log = cap.decisions.clone();
        log[3].task = TaskId((log[3].task.0 + 1) % 6);
        assert!(replay_decisions(&log, 4).is_err());
    }

    #[test]
    fn parallel_workers_share_the_budget() {
        let inst = preset("syn6").unwrap();
        let mut cfg = small(SchedulerKind::A5c);
        cfg.learner.workers = 3;
        let out = train(&cfg, &inst, &mut NoObserver).unwrap();
        assert!(out.learner.steps >= cfg.total_steps);
        assert!(out.learner.steps < cfg.total_steps + 3 * inst.episode_cap as u64);
        assert_eq!(out.task_steps.iter().sum::<u64>(), out.learner.steps);
    }

    #[test]
    fn fine_targets_for_short_episodes_fall_back_to_episode_targets() {
        let inst = preset("syn6").unwrap();
        let fine = fine_targets(&inst, 20, 1).unwrap();
        assert_eq!(fine.len(), 6);
        assert!(fine.iter().all(|&t| t > 0.0));
    }
}
