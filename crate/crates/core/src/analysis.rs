//! Hidden-unit analyses of a trained network: how often each unit fires on
//! each task, and how much each task's score depends on each unit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::envs::{MultiTaskInstance, Observation, TaskEnv};
use crate::error::{Error, Result};
use crate::learner::{sample_index, ActorCriticNet};
use crate::metrics::{csv_error, mean_scores, Actor, EvalSpec, NetActor};
use crate::rng::Rng;
use crate::task::TaskId;

pub const FIRE_THRESHOLD: f64 = 0.3;
pub const FRACTION_THRESHOLD: f64 = 0.01;

/// Fraction of `activations` with magnitude at least `threshold`.
pub fn firing_fraction(activations: &[f64], threshold: f64) -> f64 {
    if activations.is_empty() {
        return 0.0;
    }
    activations.iter().filter(|a| a.abs() >= threshold).count() as f64 / activations.len() as f64
}

/// Per task and hidden unit, the fraction of time steps the unit fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiringMatrix {
    /// `f[task][unit]`.
    pub f: Vec<Vec<f64>>,
    pub fire_threshold: f64,
    pub fraction_threshold: f64,
}

impl FiringMatrix {
    pub fn tasks(&self) -> usize {
        self.f.len()
    }

    pub fn units(&self) -> usize {
        self.f.first().map_or(0, Vec::len)
    }

    pub fn fires(&self, task: usize, unit: usize) -> bool {
        self.f[task][unit] >= self.fraction_threshold
    }

    /// Number of tasks each unit fires for.
    pub fn task_counts(&self) -> Vec<usize> {
        (0..self.units())
            .map(|j| (0..self.tasks()).filter(|&i| self.fires(i, j)).count())
            .collect()
    }

    pub fn unit_sums(&self) -> Vec<f64> {
        (0..self.units()).map(|j| self.f.iter().map(|row| row[j]).sum()).collect()
    }
}

struct Recorder<'a> {
    net: &'a ActorCriticNet,
    clamp: Option<usize>,
    hidden: Option<Vec<f64>>,
    threshold: f64,
    fired: Vec<Vec<usize>>,
    steps: Vec<usize>,
}

impl Actor for Recorder<'_> {
    fn begin_episode(&mut self) {
        self.hidden = None;
    }

    fn act(&mut self, task: TaskId, _env: &TaskEnv, obs: &Observation, rng: &mut Rng) -> Result<usize> {
        use rand::Rng as _;
        let f = self.net.forward(obs.as_slice(), self.hidden.as_deref(), task.0, self.clamp)?;
        for (count, a) in self.fired[task.0].iter_mut().zip(f.hidden()) {
            if a.abs() >= self.threshold {
                *count += 1;
            }
        }
        self.steps[task.0] += 1;
        self.hidden = self.net.shape().recurrent.then(|| f.hidden().to_vec());
        Ok(sample_index(&f.probs, rng.random()))
    }
}

/// Runs the policy on every task and measures firing of the last hidden layer.
pub fn firing_matrix(
    net: &ActorCriticNet,
    instance: &MultiTaskInstance,
    spec: EvalSpec,
    clamp: Option<usize>,
) -> Result<FiringMatrix> {
    let units = net.shape().last_hidden();
    let mut rec = Recorder {
        net,
        clamp,
        hidden: None,
        threshold: FIRE_THRESHOLD,
        fired: vec![vec![0; units]; instance.k()],
        steps: vec![0; instance.k()],
    };
    mean_scores(&mut rec, instance, spec, 0)?;
    let f = rec
        .fired
        .iter()
        .zip(&rec.steps)
        .map(|(row, &n)| row.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect())
        .collect();
    Ok(FiringMatrix {
        f,
        fire_threshold: FIRE_THRESHOLD,
        fraction_threshold: FRACTION_THRESHOLD,
    })
}

/// Units ordered for plotting, with the task count of each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronOrder {
    pub order: Vec<usize>,
    /// Task count of `order[r]` at rank `r`: a non-increasing step curve.
    pub counts: Vec<usize>,
}

/// Sorts units by the number of tasks they fire for, then by total firing,
/// both descending, then by index.
pub fn sort_neurons(f: &FiringMatrix) -> NeuronOrder {
    let counts = f.task_counts();
    let sums = f.unit_sums();
    let mut order: Vec<usize> = (0..f.units()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then(sums[b].total_cmp(&sums[a]))
            .then(a.cmp(&b))
    });
    let counts = order.iter().map(|&j| counts[j]).collect();
    NeuronOrder { order, counts }
}

/// Score sensitivity of every task to every hidden unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoffMatrix {
    pub baseline: Vec<f64>,
    /// Tasks with a non-zero baseline; the others are left out of every column.
    pub included: Vec<bool>,
    /// `percent[task][unit]`: absolute percentage score change with the unit clamped.
    pub percent: Vec<Vec<f64>>,
    /// `a[task][unit]`: `percent` normalised to sum 1 over included tasks.
    pub a: Vec<Vec<f64>>,
    pub variance: Vec<f64>,
    /// Units by ascending variance, ties by index.
    pub order: Vec<usize>,
}

/// Normalises one unit's column of percentage changes over the included
/// tasks and returns it with its variance.
pub fn normalize_column(percent: &[f64], included: &[bool]) -> (Vec<f64>, f64) {
    let total: f64 = percent.iter().zip(included).filter(|(_, &inc)| inc).map(|(p, _)| p).sum();
    let col: Vec<f64> = percent
        .iter()
        .zip(included)
        .map(|(&p, &inc)| if inc && total > 0.0 { p / total } else { 0.0 })
        .collect();
    let vals: Vec<f64> = col.iter().zip(included).filter(|(_, &inc)| inc).map(|(&v, _)| v).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (col, var)
}

/// Clamps each unit of the last hidden layer in turn and measures the change
/// in every task's mean score. All evaluations share the random streams of
/// the baseline, so differences come from the clamp alone.
pub fn turnoff_matrix(net: &ActorCriticNet, instance: &MultiTaskInstance, spec: EvalSpec) -> Result<TurnoffMatrix> {
    let baseline = mean_scores(&mut NetActor::new(net, None), instance, spec, 0)?;
    let included: Vec<bool> = baseline.iter().map(|&b| b != 0.0).collect();
    if !included.iter().any(|&b| b) {
        return Err(Error::Domain("every task has a zero baseline score".into()));
    }
    let units = net.shape().last_hidden();
    let k = instance.k();
    let mut percent = vec![vec![0.0; units]; k];
    let mut a = vec![vec![0.0; units]; k];
    let mut variance = Vec::with_capacity(units);
    for j in 0..units {
        let clamped = mean_scores(&mut NetActor::new(net, Some(j)), instance, spec, 0)?;
        let col: Vec<f64> = clamped
            .iter()
            .zip(&baseline)
            .map(|(&s, &b)| if b == 0.0 { 0.0 } else { 100.0 * ((s - b) / b).abs() })
            .collect();
        let (norm, var) = normalize_column(&col, &included);
        for i in 0..k {
            percent[i][j] = col[i];
            a[i][j] = norm[i];
        }
        variance.push(var);
    }
    let mut order: Vec<usize> = (0..units).collect();
    order.sort_by(|&x, &y| variance[x].total_cmp(&variance[y]).then(x.cmp(&y)));
    Ok(TurnoffMatrix {
        baseline,
        included,
        percent,
        a,
        variance,
        order,
    })
}

fn task_names(instance: &MultiTaskInstance) -> Vec<String> {
    instance.tasks.iter().map(|t| t.name.clone()).collect()
}

/// Rows are tasks, columns are units in their original order.
pub fn write_firing_csv<W: Write>(sink: W, instance: &MultiTaskInstance, f: &FiringMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    let mut header = vec!["task".to_string()];
    header.extend((0..f.units()).map(|j| format!("unit_{j}")));
    out.write_record(&header).map_err(csv_error)?;
    for (name, row) in task_names(instance).into_iter().zip(&f.f) {
        let mut rec = vec![name];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per rank: rank, unit, task count, total firing.
pub fn write_firing_plot_data<W: Write>(sink: W, f: &FiringMatrix, order: &NeuronOrder) -> Result<()> {
    let sums = f.unit_sums();
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["rank", "unit", "task_count", "firing_sum"]).map_err(csv_error)?;
    for (rank, (&unit, &count)) in order.order.iter().zip(&order.counts).enumerate() {
        out.write_record([rank.to_string(), unit.to_string(), count.to_string(), sums[unit].to_string()])
            .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Heat-map data: rows are tasks, columns are units sorted by ascending
/// variance, and a final `variance` row. Excluded tasks are left blank.
pub fn write_turnoff_csv<W: Write>(sink: W, instance: &MultiTaskInstance, t: &TurnoffMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(sink);
    let mut header = vec!["task".to_string()];
    header.extend(t.order.iter().map(|j| format!("unit_{j}")));
    out.write_record(&header).map_err(csv_error)?;
    for (i, name) in task_names(instance).into_iter().enumerate() {
        let mut rec = vec![name];
        rec.extend(t.order.iter().map(|&j| if t.included[i] { t.a[i][j].to_string() } else { String::new() }));
        out.write_record(&rec).map_err(csv_error)?;
    }
    let mut rec = vec!["variance".to_string()];
    rec.extend(t.order.iter().map(|&j| t.variance[j].to_string()));
    out.write_record(&rec).map_err(csv_error)?;
    out.flush()?;
    Ok(())
}
