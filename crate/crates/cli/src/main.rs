use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amtl_core::analysis::{
    firing_matrix, sort_neurons, turnoff_matrix, write_firing_csv, write_firing_plot_data, write_turnoff_csv,
};
use amtl_core::config::{load_config_with, RunConfig};
use amtl_core::envs::{preset, MultiTaskInstance, PRESETS};
use amtl_core::harness::{compare_runs, run_dirs_under, run_experiment, RunDirectory};
use amtl_core::metrics::{evaluate, write_csv, EvalReport, EvalSpec};
use amtl_core::{ActorCriticNet, Error, Result};

#[derive(Parser)]
#[command(name = "amtl", version, about = "Multi-task actor-critic training with active task sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with a scheduler and write a run directory.
    Run {
        /// TOML config file; defaults apply to absent keys.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set scheduler.kind=a5c`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory for the run.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate a run's final checkpoint.
    Eval {
        #[command(flatten)]
        eval: EvalArgs,
        /// Also write the report as metrics CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Per-task firing rates of the last hidden layer.
    AnalyzeFiring {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Per-task score sensitivity to clamping each hidden unit.
    AnalyzeTurnoff {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Summarise final metrics of several runs, grouped by scheduler.
    Compare {
        /// Run directories, or directories containing runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a built-in instance as JSON, to edit or to pass via `instance.file`.
    GenInstance {
        /// One of the built-in presets.
        #[arg(long, default_value = "syn6")]
        preset: String,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// List the presets and exit.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory produced by `amtl run`.
    #[arg(long)]
    run: PathBuf,
    /// Episodes per task; defaults to the run's eval setting.
    #[arg(long)]
    episodes: Option<usize>,
    /// Episode length cap; defaults to the run's eval setting.
    #[arg(long)]
    cap: Option<usize>,
    /// Evaluation seed; defaults to the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `<run>/analysis`.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    dir: RunDirectory,
    instance: MultiTaskInstance,
    net: ActorCriticNet,
    spec: EvalSpec,
    steps: u64,
}

impl EvalArgs {
    fn load(&self, default_episodes: impl Fn(&RunConfig) -> usize) -> Result<Loaded> {
        let dir = RunDirectory::open(&self.run)?;
        let config = dir.config()?;
        let instance = dir.instance()?;
        let learner = dir.final_checkpoint()?.restore()?;
        let spec = EvalSpec {
            episodes: self.episodes.unwrap_or_else(|| default_episodes(&config)),
            episode_cap: self.cap.unwrap_or(config.eval.episode_cap),
            seed: self.seed.unwrap_or(config.seed),
        };
        if spec.episodes == 0 || spec.episode_cap == 0 {
            return Err(Error::validation("episodes", "episodes and cap must be positive"));
        }
        Ok(Loaded {
            steps: learner.steps,
            net: learner.net,
            dir,
            instance,
            spec,
        })
    }

    fn out_dir(&self, dir: &RunDirectory) -> Result<PathBuf> {
        let out = self.out.clone().unwrap_or_else(|| dir.analysis_dir());
        std::fs::create_dir_all(&out)?;
        Ok(out)
    }
}

fn print_report(stdout: &mut impl Write, instance: &MultiTaskInstance, r: &EvalReport) -> Result<()> {
    writeln!(stdout, "step {}", r.step)?;
    for ((t, raw), ratio) in instance.tasks.iter().zip(&r.raw).zip(&r.ratios) {
        writeln!(stdout, "  {:<20} raw {:>10.4}  ratio {:>7.4}", t.name, raw, ratio)?;
    }
    let m = r.metrics;
    writeln!(stdout, "p_am {:.4}  q_am {:.4}  q_gm {:.4}  q_hm {:.4}", m.p_am, m.q_am, m.q_gm, m.q_hm)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn execute(command: Command, stdout: &mut impl Write) -> Result<()> {
    match command {
        Command::Run { config, overrides, out } => {
            let cfg = match &config {
                Some(path) => load_config_with(path, &overrides)?,
                None => RunConfig::from_toml_with("", "defaults", &overrides)?,
            };
            let (dir, outcome) = run_experiment(&cfg, &out)?;
            writeln!(
                stdout,
                "{} on {}: {} steps, {} decisions",
                cfg.scheduler.kind,
                dir.manifest()?.instance,
                outcome.learner.steps,
                outcome.decisions
            )?;
            print_report(stdout, &dir.instance()?, outcome.final_report())?;
            writeln!(stdout, "wrote {}", dir.root().display())?;
        }
        Command::Eval { eval, csv } => {
            let l = eval.load(|c| c.eval.episodes)?;
            let report = evaluate(&l.net, &l.instance, l.spec, l.steps)?;
            print_report(stdout, &l.instance, &report)?;
            if let Some(path) = csv {
                write_csv(create(&path)?, &l.instance, &[report])?;
            }
        }
        Command::AnalyzeFiring { eval } => {
            let l = eval.load(|_| 10)?;
            let f = firing_matrix(&l.net, &l.instance, l.spec, None)?;
            let order = sort_neurons(&f);
            let out = eval.out_dir(&l.dir)?;
            write_firing_csv(create(&out.join("firing.csv"))?, &l.instance, &f)?;
            write_firing_plot_data(create(&out.join("firing_plot.csv"))?, &f, &order)?;
            let shared = order.counts.iter().filter(|&&c| c == l.instance.k()).count();
            let silent = order.counts.iter().filter(|&&c| c == 0).count();
            writeln!(
                stdout,
                "{} units: {shared} fire on every task, {silent} on none; wrote {}",
                order.order.len(),
                out.display()
            )?;
        }
        Command::AnalyzeTurnoff { eval } => {
            let l = eval.load(|c| c.eval.episodes)?;
            let t = turnoff_matrix(&l.net, &l.instance, l.spec)?;
            let out = eval.out_dir(&l.dir)?;
            write_turnoff_csv(create(&out.join("turnoff.csv"))?, &l.instance, &t)?;
            let first = t.order.first().copied().unwrap_or(0);
            let last = t.order.last().copied().unwrap_or(0);
            writeln!(
                stdout,
                "lowest variance: unit {first} ({:.4}); highest: unit {last} ({:.4}); wrote {}",
                t.variance[first],
                t.variance[last],
                out.display()
            )?;
        }
        Command::Compare { runs, csv } => {
            let mut dirs = Vec::new();
            for p in runs {
                if p.join(RunDirectory::MANIFEST).is_file() {
                    dirs.push(p);
                } else if p.is_dir() {
                    dirs.extend(run_dirs_under(&p)?);
                } else {
                    dirs.push(p);
                }
            }
            let cmp = compare_runs(&dirs)?;
            write!(stdout, "{}", cmp.to_text())?;
            if let Some(path) = csv {
                cmp.write_csv(create(&path)?)?;
            }
        }
        Command::GenInstance { preset: name, out, list } => {
            if list {
                for p in PRESETS {
                    writeln!(stdout, "{p}")?;
                }
                return Ok(());
            }
            let inst = preset(&name)?;
            match out {
                Some(path) => inst.save(&path)?,
                None => writeln!(stdout, "{}", inst.to_json()?)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command, &mut io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
