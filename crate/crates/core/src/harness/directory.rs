use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::run::{train, DecisionRecord, RunObserver, RunOutcome};
use crate::config::RunConfig;
use crate::envs::MultiTaskInstance;
use crate::error::{Error, Result};
use crate::learner::{Checkpoint, Learner};
use crate::metrics::{EvalReport, MetricsWriter};
use crate::schedulers::SchedulerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

/// Run metadata. Written when the run starts and rewritten when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: RunStatus,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    pub instance: String,
    pub total_steps: u64,
    pub version: String,
    pub started_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Layout of one run's output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    pub const MANIFEST: &'static str = "manifest.json";
    pub const CONFIG: &'static str = "config.toml";
    pub const INSTANCE: &'static str = "instance.json";
    pub const DECISIONS: &'static str = "decisions.jsonl";
    pub const METRICS: &'static str = "metrics.csv";
    pub const CHECKPOINTS: &'static str = "checkpoints";
    pub const ANALYSIS: &'static str = "analysis";

    /// Opens an existing run directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let dir = Self { root: root.into() };
        if !dir.manifest_path().is_file() {
            return Err(Error::Format(format!("{} is not a run directory (no manifest)", dir.root.display())));
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(Self::MANIFEST)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(Self::CONFIG)
    }

    pub fn instance_path(&self) -> PathBuf {
        self.root.join(Self::INSTANCE)
    }

    pub fn decisions_path(&self) -> PathBuf {
        self.root.join(Self::DECISIONS)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join(Self::METRICS)
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join(Self::CHECKPOINTS)
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.checkpoints_dir().join("final.json")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join(Self::ANALYSIS)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        Ok(serde_json::from_str(&std::fs::read_to_string(self.manifest_path())?)?)
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_toml(
            &std::fs::read_to_string(self.config_path())?,
            &self.config_path().display().to_string(),
        )
    }

    pub fn instance(&self) -> Result<MultiTaskInstance> {
        MultiTaskInstance::load(&self.instance_path())
    }

    pub fn final_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::load(&self.final_checkpoint_path())
    }

    pub fn decisions(&self) -> Result<Vec<DecisionRecord>> {
        let reader = BufReader::new(File::open(self.decisions_path())?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let rec = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", self.decisions_path().display(), i + 1)))?;
            out.push(rec);
        }
        Ok(out)
    }

    fn write_manifest(&self, manifest: &Manifest) -> Result<()> {
        let tmp = self.root.join("manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(manifest)? + "\n")?;
        std::fs::rename(tmp, self.manifest_path())?;
        Ok(())
    }
}

struct FileObserver {
    decisions: BufWriter<File>,
    metrics: MetricsWriter,
    checkpoints: PathBuf,
}

impl RunObserver for FileObserver {
    fn decision(&mut self, record: &DecisionRecord) -> Result<()> {
        serde_json::to_writer(&mut self.decisions, record)?;
        self.decisions.write_all(b"\n")?;
        Ok(())
    }

    fn evaluation(&mut self, report: &EvalReport) -> Result<()> {
        self.decisions.flush()?;
        self.metrics.write(report)
    }

    fn checkpoint(&mut self, learner: &Learner, is_final: bool) -> Result<()> {
        let name = if is_final {
            "final.json".to_string()
        } else {
            format!("step_{:010}.json", learner.steps)
        };
        Checkpoint::of(learner).save(&self.checkpoints.join(name))
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs an experiment and writes its artifacts under `out`.
///
/// The config and instance are validated before anything is written. Once
/// the directory exists, the manifest records whether the run completed.
pub fn run_experiment(config: &RunConfig, out: &Path) -> Result<(RunDirectory, RunOutcome)> {
    config.validate()?;
    let instance = config.build_instance(None)?;
    let dir = RunDirectory { root: out.to_path_buf() };
    if dir.manifest_path().exists() {
        return Err(Error::Format(format!("{} already holds a run", out.display())));
    }
    std::fs::create_dir_all(dir.checkpoints_dir())?;
    let started = Instant::now();
    let mut manifest = Manifest {
        status: RunStatus::Running,
        seed: config.seed,
        scheduler: config.scheduler.kind,
        instance: instance.name.clone(),
        total_steps: config.total_steps,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: unix_now(),
        steps: None,
        decisions: None,
        wall_clock_secs: None,
        error: None,
    };
    dir.write_manifest(&manifest)?;

    let result = (|| -> Result<RunOutcome> {
        std::fs::write(dir.config_path(), config.to_toml()?)?;
        instance.save(&dir.instance_path())?;
        let mut observer = FileObserver {
            decisions: BufWriter::new(File::create(dir.decisions_path())?),
            metrics: MetricsWriter::create(&dir.metrics_path(), &instance)?,
            checkpoints: dir.checkpoints_dir(),
        };
        let outcome = train(config, &instance, &mut observer)?;
        observer.decisions.flush()?;
        Ok(outcome)
    })();

    manifest.wall_clock_secs = Some(started.elapsed().as_secs_f64());
    match result {
        Ok(outcome) => {
            manifest.status = RunStatus::Completed;
            manifest.steps = Some(outcome.learner.steps);
            manifest.decisions = Some(outcome.decisions);
            dir.write_manifest(&manifest)?;
            Ok((dir, outcome))
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            dir.write_manifest(&manifest)?;
            Err(e)
        }
    }
}
