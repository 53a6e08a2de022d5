use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::directory::{RunDirectory, RunStatus};
use crate::error::{Error, Result};
use crate::metrics::{csv_error, read_last_row};
use crate::schedulers::SchedulerKind;

pub const METRIC_NAMES: [&str; 4] = ["p_am", "q_am", "q_gm", "q_hm"];

/// Mean and sample standard deviation of final metrics over one scheduler's runs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub scheduler: SchedulerKind,
    pub runs: usize,
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub instance: String,
    pub rows: Vec<GroupRow>,
    /// Runs left out, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups the final evaluation of each completed run by scheduler.
/// Runs that did not complete are listed in `skipped`.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    let mut instance: Option<(String, Vec<f64>, PathBuf)> = None;
    let mut groups: BTreeMap<SchedulerKind, Vec<[f64; 4]>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for path in dirs {
        let dir = match RunDirectory::open(path) {
            Ok(d) => d,
            Err(e) => {
                skipped.push((path.clone(), e.to_string()));
                continue;
            }
        };
        let manifest = dir.manifest()?;
        if manifest.status != RunStatus::Completed {
            let why = match (&manifest.status, &manifest.error) {
                (RunStatus::Failed, Some(e)) => format!("failed: {e}"),
                (s, _) => format!("{s:?}").to_lowercase(),
            };
            skipped.push((path.clone(), why));
            continue;
        }
        let inst = dir.instance()?;
        let targets = inst.targets.as_slice().to_vec();
        match &instance {
            None => instance = Some((inst.name.clone(), targets, path.clone())),
            Some((name, t, first)) if *name != inst.name || *t != targets => {
                return Err(Error::Incomparable(format!(
                    "{} ran on `{}` but {} ran on `{}` (or with different targets)",
                    first.display(),
                    name,
                    path.display(),
                    inst.name
                )))
            }
            Some(_) => {}
        }
        let Some(row) = read_last_row(&dir.metrics_path())? else {
            skipped.push((path.clone(), "no evaluations".into()));
            continue;
        };
        let get = |name: &str| {
            row.iter()
                .find(|(h, _)| h == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Format(format!("{}: missing column {name}", dir.metrics_path().display())))
        };
        let values = [get("p_am")?, get("q_am")?, get("q_gm")?, get("q_hm")?];
        groups.entry(manifest.scheduler).or_default().push(values);
    }
    let Some((name, _, _)) = instance else {
        return Err(Error::Format("no completed runs to compare".into()));
    };
    let rows = groups
        .into_iter()
        .map(|(scheduler, runs)| {
            let mut mean = [0.0; 4];
            let mut std = [0.0; 4];
            for m in 0..4 {
                let xs: Vec<f64> = runs.iter().map(|r| r[m]).collect();
                (mean[m], std[m]) = mean_std(&xs);
            }
            GroupRow {
                scheduler,
                runs: runs.len(),
                mean,
                std,
            }
        })
        .collect();
    Ok(Comparison {
        instance: name,
        rows,
        skipped,
    })
}

impl Comparison {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(sink);
        let mut header = vec!["scheduler".to_string(), "runs".to_string()];
        for m in METRIC_NAMES {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        out.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let mut rec = vec![r.scheduler.to_string(), r.runs.to_string()];
            for m in 0..4 {
                rec.push(r.mean[m].to_string());
                rec.push(r.std[m].to_string());
            }
            out.write_record(&rec).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aligned plain-text table followed by any skipped runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "instance: {}", self.instance);
        let _ = write!(s, "{:<10}{:>5}", "scheduler", "runs");
        for m in METRIC_NAMES {
            let _ = write!(s, "{m:>20}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<10}{:>5}", r.scheduler, r.runs);
            for m in 0..4 {
                let _ = write!(s, "{:>20}", format!("{:.4} ± {:.4}", r.mean[m], r.std[m]));
            }
            s.push('\n');
        }
        for (p, why) in &self.skipped {
            let _ = writeln!(s, "skipped {}: {why}", p.display());
        }
        s
    }
}

/// Convenience for callers holding a directory of run directories.
pub fn run_dirs_under(parent: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(parent)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RunDirectory::MANIFEST).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
