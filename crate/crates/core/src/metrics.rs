//! Multi-task performance metrics and the evaluation protocol.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{MultiTaskInstance, Observation, TaskEnv};
use crate::error::{Error, Result};
use crate::learner::{act, ActorCriticNet};
use crate::rng::{stream, Rng, Stream};
use crate::task::TaskId;

/// Aggregate scores over tasks, from per-task score ratios a_i / ta_i.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Arithmetic mean of the ratios.
    pub p_am: f64,
    /// Arithmetic mean of the ratios clipped at 1.
    pub q_am: f64,
    /// Geometric mean of the clipped ratios.
    pub q_gm: f64,
    /// Harmonic mean of the clipped ratios.
    pub q_hm: f64,
}

pub fn compute_metrics(scores: &[f64], targets: &[f64]) -> Result<Metrics> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Domain("no tasks to score".into()));
    }
    if let Some(a) = scores.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Domain(format!("scores must be non-negative, got {a}")));
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("targets must be positive, got {t}")));
    }
    let k = scores.len() as f64;
    let ratios: Vec<f64> = scores.iter().zip(targets).map(|(a, ta)| a / ta).collect();
    let clipped: Vec<f64> = ratios.iter().map(|r| r.min(1.0)).collect();
    let p_am = ratios.iter().sum::<f64>() / k;
    let q_am = clipped.iter().sum::<f64>() / k;
    if clipped.iter().all(|&c| c == clipped[0]) {
        let c = clipped[0];
        return Ok(Metrics {
            p_am,
            q_am: c,
            q_gm: c,
            q_hm: c,
        });
    }
    if clipped.contains(&0.0) {
        return Ok(Metrics {
            p_am,
            q_am,
            q_gm: 0.0,
            q_hm: 0.0,
        });
    }
    let q_hm = k / scores.iter().zip(targets).map(|(a, ta)| (ta / a).max(1.0)).sum::<f64>();
    let q_gm = (clipped.iter().map(|c| c.ln()).sum::<f64>() / k).exp();
    // Rounding can push the means past each other by an ulp when the ratios
    // are nearly equal; the exact values always satisfy hm ≤ gm ≤ am.
    let q_hm = q_hm.min(q_am);
    Ok(Metrics {
        p_am,
        q_am,
        q_gm: q_gm.clamp(q_hm, q_am),
        q_hm,
    })
}

/// One evaluation checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    /// Mean raw score per task.
    pub raw: Vec<f64>,
    /// max(raw, 0) / target per task.
    pub ratios: Vec<f64>,
    pub metrics: Metrics,
}

impl EvalReport {
    /// Scores are floored at zero before normalising: a task whose mean return
    /// is negative counts as no progress.
    pub fn from_scores(step: u64, raw: Vec<f64>, targets: &[f64]) -> Result<Self> {
        let floored: Vec<f64> = raw.iter().map(|a| a.max(0.0)).collect();
        let metrics = compute_metrics(&floored, targets)?;
        let ratios = floored.iter().zip(targets).map(|(a, ta)| a / ta).collect();
        Ok(Self {
            step,
            raw,
            ratios,
            metrics,
        })
    }
}

/// Something that picks actions during evaluation.
pub trait Actor {
    /// Called at the start of every episode.
    fn begin_episode(&mut self) {}

    fn act(&mut self, task: TaskId, env: &TaskEnv, obs: &Observation, rng: &mut Rng) -> Result<usize>;
}

/// Samples from a network's policy without learning. Optionally clamps one
/// unit of the last hidden layer to zero.
#[derive(Debug, Clone)]
pub struct NetActor<'a> {
    pub net: &'a ActorCriticNet,
    pub clamp: Option<usize>,
    hidden: Option<Vec<f64>>,
}

impl<'a> NetActor<'a> {
    pub fn new(net: &'a ActorCriticNet, clamp: Option<usize>) -> Self {
        Self {
            net,
            clamp,
            hidden: None,
        }
    }
}

impl Actor for NetActor<'_> {
    fn begin_episode(&mut self) {
        self.hidden = None;
    }

    fn act(&mut self, task: TaskId, _env: &TaskEnv, obs: &Observation, rng: &mut Rng) -> Result<usize> {
        let a = act(self.net, obs, task, self.hidden.as_deref(), self.clamp, rng)?;
        self.hidden = a.hidden;
        Ok(a.action)
    }
}

/// Plays each environment's optimal policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleActor;

impl Actor for OracleActor {
    fn act(&mut self, _task: TaskId, env: &TaskEnv, _obs: &Observation, _rng: &mut Rng) -> Result<usize> {
        env.optimal_action()
    }
}

/// How evaluation is run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalSpec {
    pub episodes: usize,
    pub episode_cap: usize,
    pub seed: u64,
}

/// Mean score per task over `spec.episodes` episodes. Every task and
/// checkpoint `step` gets its own random stream.
pub fn mean_scores(actor: &mut dyn Actor, instance: &MultiTaskInstance, spec: EvalSpec, step: u64) -> Result<Vec<f64>> {
    if spec.episodes == 0 {
        return Err(Error::validation("eval.episodes", "must be positive"));
    }
    let mut means = Vec::with_capacity(instance.k());
    for task in instance.task_ids() {
        let mut rng = stream(
            spec.seed,
            Stream::Eval {
                task: task.0,
                checkpoint: step,
            },
        );
        let mut env = TaskEnv::new(instance.task(task)?.clone(), instance.union_action_count, spec.episode_cap)?;
        let mut total = 0.0;
        for _ in 0..spec.episodes {
            actor.begin_episode();
            let mut obs = env.reset(&mut rng);
            let mut score = 0.0;
            loop {
                let a = actor.act(task, &env, &obs, &mut rng)?;
                let (next, r, done) = env.step(a, &mut rng)?;
                score += r;
                obs = next;
                if done {
                    break;
                }
            }
            total += score;
        }
        means.push(total / spec.episodes as f64);
    }
    Ok(means)
}

/// Evaluates `actor` on every task and scores the result against the
/// instance's targets.
pub fn evaluate_with(actor: &mut dyn Actor, instance: &MultiTaskInstance, spec: EvalSpec, step: u64) -> Result<EvalReport> {
    let raw = mean_scores(actor, instance, spec, step)?;
    EvalReport::from_scores(step, raw, instance.targets.as_slice())
}

/// Evaluates a network's stochastic policy. The network is only read.
pub fn evaluate(net: &ActorCriticNet, instance: &MultiTaskInstance, spec: EvalSpec, step: u64) -> Result<EvalReport> {
    evaluate_with(&mut NetActor::new(net, None), instance, spec, step)
}

/// Column names of metrics.csv, in order.
pub fn csv_header(instance: &MultiTaskInstance) -> Vec<String> {
    let mut cols = vec!["step".to_string()];
    cols.extend(instance.tasks.iter().map(|t| format!("raw_{}", t.name)));
    cols.extend(instance.tasks.iter().map(|t| format!("ratio_{}", t.name)));
    cols.extend(["p_am", "q_am", "q_gm", "q_hm"].map(String::from));
    cols
}

pub fn csv_row(report: &EvalReport) -> Vec<String> {
    let m = report.metrics;
    let mut row = vec![report.step.to_string()];
    row.extend(report.raw.iter().map(|v| v.to_string()));
    row.extend(report.ratios.iter().map(|v| v.to_string()));
    row.extend([m.p_am, m.q_am, m.q_gm, m.q_hm].map(|v| v.to_string()));
    row
}

/// Appends evaluation rows to a metrics.csv file.
pub struct MetricsWriter {
    out: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, instance: &MultiTaskInstance) -> Result<Self> {
        let mut out = csv::Writer::from_path(path).map_err(csv_error)?;
        out.write_record(csv_header(instance)).map_err(csv_error)?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, report: &EvalReport) -> Result<()> {
        self.out.write_record(csv_row(report)).map_err(csv_error)?;
        self.out.flush()?;
        Ok(())
    }
}

/// Writes a full metrics table to any sink.
pub fn write_csv<W: Write>(sink: W, instance: &MultiTaskInstance, reports: &[EvalReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(csv_header(instance)).map_err(csv_error)?;
    for r in reports {
        out.write_record(csv_row(r)).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the last row of a metrics.csv file as (column, value) pairs.
pub fn read_last_row(path: &Path) -> Result<Option<Vec<(String, f64)>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let mut last = None;
    for rec in rdr.records() {
        last = Some(rec.map_err(csv_error)?);
    }
    last.map(|rec| {
        header
            .iter()
            .zip(rec.iter())
            .map(|(h, v)| {
                v.parse::<f64>()
                    .map(|x| (h.clone(), x))
                    .map_err(|e| Error::Format(format!("{}: column {h}: {e}", path.display())))
            })
            .collect()
    })
    .transpose()
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::preset;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let m = compute_metrics(&[1.0, 1.0, 0.5], &[1.0; 3]).unwrap();
        assert!((m.q_am - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.q_gm - 0.5f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!((m.q_gm - 0.79370).abs() < 1e-5);
        assert!((m.q_hm - 0.75).abs() < 1e-15);

        let m = compute_metrics(&[4.0, 0.0, 0.0, 0.0], &[1.0; 4]).unwrap();
        assert_eq!((m.p_am, m.q_am, m.q_gm, m.q_hm), (1.0, 0.25, 0.0, 0.0));

        let m = compute_metrics(&[2.0, 3.0], &[2.0, 3.0]).unwrap();
        assert_eq!((m.p_am, m.q_am, m.q_gm, m.q_hm), (1.0, 1.0, 1.0, 1.0));

        assert!(compute_metrics(&[-1.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(compute_metrics(&[1.0, 1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn oracle_reaches_targets_and_net_is_untouched() {
        let inst = preset("syn6").unwrap();
        let spec = EvalSpec {
            episodes: 40,
            episode_cap: inst.episode_cap,
            seed: 3,
        };
        let r = evaluate_with(&mut OracleActor, &inst, spec, 0).unwrap();
        assert_eq!(r.ratios.len(), 6);
        assert!(r.metrics.q_am >= 0.95, "{r:?}");

        let shape = crate::learner::NetShape {
            inputs: inst.observation_dim(),
            hidden: vec![8],
            recurrent: true,
            outputs: inst.union_action_count,
            heads: inst.k(),
        };
        let net = ActorCriticNet::random(shape, &mut stream(1, Stream::LearnerInit));
        let before = net.checksum();
        let a = evaluate(&net, &inst, EvalSpec { episodes: 2, ..spec }, 7).unwrap();
        let b = evaluate(&net, &inst, EvalSpec { episodes: 2, ..spec }, 7).unwrap();
        assert_eq!(net.checksum(), before);
        assert_eq!(a, b);
    }

    #[test]
    fn csv_layout() {
        let inst = preset("syn6").unwrap();
        let header = csv_header(&inst);
        assert_eq!(header.len(), 1 + 12 + 4);
        assert_eq!(header[0], "step");
        assert_eq!(header[13..], ["p_am", "q_am", "q_gm", "q_hm"]);
        let report = EvalReport::from_scores(5, vec![-1.0; 6], inst.targets.as_slice()).unwrap();
        assert_eq!(report.ratios, vec![0.0; 6]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &inst, &[report]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("5,-1,"));
    }

    proptest! {
        #[test]
        fn means_are_ordered_and_bounded(pairs in prop::collection::vec((0.0f64..5.0, 0.1f64..3.0), 1..10)) {
            let (scores, targets): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = compute_metrics(&scores, &targets).unwrap();
            prop_assert!(m.q_hm <= m.q_gm && m.q_gm <= m.q_am && m.q_am <= m.p_am);
            for v in [m.q_hm, m.q_gm, m.q_am] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn raising_a_score_never_lowers_a_mean(
            pairs in prop::collection::vec((0.0f64..5.0, 0.1f64..3.0), 1..10),
            pick in 0usize..10,
            bump in 0.0f64..2.0,
        ) {
            let (scores, targets): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let before = compute_metrics(&scores, &targets).unwrap();
            let mut raised = scores.clone();
            raised[pick % scores.len()] += bump;
            let after = compute_metrics(&raised, &targets).unwrap();
            prop_assert!(after.p_am >= before.p_am);
            prop_assert!(after.q_am >= before.q_am);
            prop_assert!(after.q_gm >= before.q_gm - 1e-12);
            prop_assert!(after.q_hm >= before.q_hm);
        }
    }
}
