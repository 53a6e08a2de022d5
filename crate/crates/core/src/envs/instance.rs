use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{oracle_target, TaskDescriptor, TaskEnv, TaskParams, DEFAULT_EPISODE_CAP, SIGNATURE_DIM};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::task::{TargetRegistry, TaskId};

/// The set of tasks one agent must learn, with their target scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskInstance {
    pub name: String,
    pub tasks: Vec<TaskDescriptor>,
    pub targets: TargetRegistry,
    /// Per-task targets for fixed-length chunks of experience, when known.
    pub fine_targets: Option<Vec<f64>>,
    pub union_action_count: usize,
    pub episode_cap: usize,
}

/// One task as stored in an instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    #[serde(flatten)]
    pub task: TaskDescriptor,
    /// Computed from the task's optimal policy when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InstanceFile {
    name: String,
    union_action_count: usize,
    #[serde(default = "default_cap")]
    episode_cap: usize,
    tasks: Vec<TaskEntry>,
}

fn default_cap() -> usize {
    DEFAULT_EPISODE_CAP
}

impl MultiTaskInstance {
    /// Builds an instance whose targets are the analytic optimal scores.
    pub fn with_oracle_targets(
        name: impl Into<String>,
        tasks: Vec<TaskDescriptor>,
        union_action_count: usize,
        episode_cap: usize,
    ) -> Result<Self> {
        let targets = tasks
            .iter()
            .map(|t| oracle_target(t, episode_cap))
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, tasks, TargetRegistry::fixed(targets, 1.0)?, union_action_count, episode_cap)
    }

    pub fn new(
        name: impl Into<String>,
        tasks: Vec<TaskDescriptor>,
        targets: TargetRegistry,
        union_action_count: usize,
        episode_cap: usize,
    ) -> Result<Self> {
        let inst = Self {
            name: name.into(),
            tasks,
            targets,
            fine_targets: None,
            union_action_count,
            episode_cap,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.tasks.len();
        if k < 2 {
            return Err(Error::validation("tasks", format!("need at least 2 tasks, got {k}")));
        }
        if self.targets.len() != k {
            return Err(Error::validation("targets", "every task needs exactly one target"));
        }
        if self.union_action_count < 2 {
            return Err(Error::validation("union_action_count", "must be at least 2"));
        }
        if self.episode_cap == 0 {
            return Err(Error::validation("episode_cap", "must be positive"));
        }
        if let Some(fine) = &self.fine_targets {
            if fine.len() != k || fine.iter().any(|t| !(*t > 0.0)) {
                return Err(Error::validation("fine_target", "need one positive fine target per task"));
            }
        }
        let dim = self.tasks[0].signature.len();
        for (i, t) in self.tasks.iter().enumerate() {
            t.params.validate(self.episode_cap).map_err(|e| match e {
                Error::Validation { field, message } => Error::validation(format!("tasks[{i}].{field}"), message),
                other => other,
            })?;
            if t.action_count() > self.union_action_count {
                return Err(Error::validation(
                    "union_action_count",
                    format!("task `{}` needs {} actions", t.name, t.action_count()),
                ));
            }
            if t.signature.len() != dim || t.signature.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(
                    format!("tasks[{i}].signature"),
                    format!("signatures must be finite vectors of dimension {dim}"),
                ));
            }
            for (j, u) in self.tasks[..i].iter().enumerate() {
                if u.name == t.name {
                    return Err(Error::validation("tasks", format!("duplicate task name `{}`", t.name)));
                }
                let dist: f64 = u
                    .signature
                    .iter()
                    .zip(&t.signature)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if !(dist > 0.0) {
                    return Err(Error::validation(
                        format!("tasks[{i}].signature"),
                        format!("signature collides with tasks[{j}]"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.tasks.len()
    }

    pub fn observation_dim(&self) -> usize {
        self.tasks[0].observation_dim()
    }

    pub fn task(&self, id: TaskId) -> Result<&TaskDescriptor> {
        self.tasks.get(id.0).ok_or(Error::UnknownTask {
            index: id.0,
            count: self.tasks.len(),
        })
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> {
        (0..self.tasks.len()).map(TaskId)
    }

    pub fn task_index(&self, name: &str) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.name == name).map(TaskId)
    }

    pub fn make_env(&self, id: TaskId) -> Result<TaskEnv> {
        TaskEnv::new(self.task(id)?.clone(), self.union_action_count, self.episode_cap)
    }

    /// Replaces base targets by name and rescales all of them by `multiplier`.
    pub fn retarget(&self, overrides: &BTreeMap<String, f64>, multiplier: f64) -> Result<Self> {
        let mut base: Vec<f64> = self.targets.as_slice().iter().map(|t| t / self.targets.multiplier()).collect();
        for (name, &value) in overrides {
            let id = self
                .task_index(name)
                .ok_or_else(|| Error::validation(format!("targets.{name}"), "no task with this name"))?;
            base[id.0] = value;
        }
        let mut out = self.clone();
        out.targets = TargetRegistry::fixed(base, multiplier).map_err(|e| match e {
            Error::Validation { field, message } if field.starts_with("targets[") => {
                let idx: usize = field["targets[".len()..field.len() - 1].parse().unwrap_or(0);
                Error::validation(format!("targets.{}", self.tasks[idx].name), message)
            }
            other => other,
        })?;
        out.validate()?;
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = InstanceFile {
            name: self.name.clone(),
            union_action_count: self.union_action_count,
            episode_cap: self.episode_cap,
            tasks: self
                .tasks
                .iter()
                .enumerate()
                .map(|(i, t)| TaskEntry {
                    task: t.clone(),
                    target: Some(self.targets.as_slice()[i]),
                    fine_target: self.fine_targets.as_ref().map(|f| f[i]),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, "instance JSON")
    }

    fn parse(text: &str, location: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Config {
            location: location.to_string(),
            message: e.to_string(),
        })?;
        let targets = file
            .tasks
            .iter()
            .map(|e| match e.target {
                Some(t) => Ok(t),
                None => oracle_target(&e.task, file.episode_cap),
            })
            .collect::<Result<Vec<_>>>()?;
        let fine: Vec<Option<f64>> = file.tasks.iter().map(|e| e.fine_target).collect();
        let fine_targets = if fine.iter().all(Option::is_some) {
            Some(fine.into_iter().flatten().collect())
        } else if fine.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::validation("fine_target", "give a fine target for all tasks or none"));
        };
        let mut inst = Self::new(
            file.name,
            file.tasks.into_iter().map(|e| e.task).collect(),
            TargetRegistry::fixed(targets, 1.0)?,
            file.union_action_count,
            file.episode_cap,
        )?;
        inst.fine_targets = fine_targets;
        inst.validate()?;
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let location = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            location: location.clone(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &location)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Names of the built-in instances.
pub const PRESETS: &[&str] = &["syn6", "syn6-imbalanced", "syn12"];

const PRESET_SEED: u64 = 20_180_115;

fn signature(task: usize) -> Vec<f64> {
    let mut rng = stream(PRESET_SEED, Stream::Signature(task));
    (0..SIGNATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn chain(length: usize, slip: f64, forward_action: usize) -> TaskParams {
    TaskParams::Chain {
        length,
        slip,
        forward_action,
    }
}

fn bandit(payoffs: &[f64], horizon: usize) -> TaskParams {
    TaskParams::BanditRoom {
        payoffs: payoffs.to_vec(),
        horizon,
    }
}

fn grid(size: usize, goal: [usize; 2], slip: f64) -> TaskParams {
    TaskParams::GridNav {
        size,
        goal,
        slip,
        step_cost: 0.1,
        goal_reward: 0.2 * (4 * size) as f64,
    }
}

/// Built-in instance by name. Signatures are fixed per task slot.
pub fn preset(name: &str) -> Result<MultiTaskInstance> {
    let params: Vec<(&str, TaskParams)> = match name {
        "syn6" => vec![
            ("bandit-a", bandit(&[0.2, 0.8], 10)),
            ("bandit-b", bandit(&[0.7, 0.3, 0.1], 10)),
            ("chain-a", chain(5, 0.01, 1)),
            ("chain-b", chain(6, 0.01, 0)),
            ("grid-a", grid(3, [2, 2], 0.05)),
            ("grid-b", grid(4, [3, 0], 0.05)),
        ],
        // Two long bandits learned early, then four short sparse bandits that
        // improve only with steady training.
        "syn6-imbalanced" => vec![
            ("bandit-long-a", bandit(&[0.1, 0.9], 80)),
            ("bandit-long-b", bandit(&[0.1, 0.9, 0.1], 80)),
            ("bandit-sparse-a", bandit(&[0.05, 0.05, 0.05, 0.4], 10)),
            ("bandit-sparse-b", bandit(&[0.4, 0.05, 0.05, 0.05], 10)),
            ("bandit-sparse-c", bandit(&[0.05, 0.05, 0.4, 0.05], 10)),
            ("bandit-sparse-d", bandit(&[0.05, 0.4, 0.05, 0.05], 10)),
        ],
        "syn12" => vec![
            ("bandit-a", bandit(&[0.2, 0.8], 10)),
            ("bandit-b", bandit(&[0.7, 0.3, 0.1], 10)),
            ("bandit-c", bandit(&[0.1, 0.1, 0.9, 0.2], 12)),
            ("bandit-d", bandit(&[0.5, 0.9], 8)),
            ("chain-a", chain(4, 0.01, 1)),
            ("chain-b", chain(6, 0.01, 0)),
            ("chain-c", chain(8, 0.02, 1)),
            ("chain-d", chain(10, 0.01, 0)),
            ("grid-a", grid(3, [2, 2], 0.05)),
            ("grid-b", grid(4, [3, 0], 0.05)),
            ("grid-c", grid(4, [0, 3], 0.1)),
            ("grid-d", grid(5, [4, 4], 0.05)),
        ],
        other => {
            return Err(Error::validation(
                "instance.preset",
                format!("unknown preset `{other}` (available: {})", PRESETS.join(", ")),
            ))
        }
    };
    let tasks = params
        .into_iter()
        .enumerate()
        .map(|(i, (n, p))| TaskDescriptor {
            name: n.to_string(),
            params: p,
            signature: signature(i),
        })
        .collect();
    MultiTaskInstance::with_oracle_targets(name, tasks, 4, DEFAULT_EPISODE_CAP)
}
