use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn amtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amtl")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn short_run(dir: &Path, kind: &str, seed: u64) -> Output {
    amtl(&[
        "run",
        "--set",
        "total_steps=1500",
        "--set",
        "eval.interval=500",
        "--set",
        "eval.episodes=2",
        "--set",
        &format!("scheduler.kind={kind}"),
        "--set",
        &format!("seed={seed}"),
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn run_writes_a_complete_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    let o = short_run(&run, "a5c", 1);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "instance.json", "manifest.json", "metrics.csv", "decisions.jsonl", "checkpoints/final.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let manifest = fs::read_to_string(run.join("manifest.json")).unwrap();
    assert!(manifest.contains("completed"));
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with("p_am,q_am,q_gm,q_hm"));
    assert!(csv.lines().count() >= 4);
    assert!(stdout(&o).contains("q_am"));
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "total_steps = 800\n[scheduler]\nkind = \"ua4c\"\n[eval]\ninterval = 400\nepisodes = 2\n").unwrap();
    let run = tmp.path().join("r");
    let o = amtl(&["run", "--config", cfg.to_str().unwrap(), "--set", "seed=4", "--out", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("ua4c on syn6"));
    let written = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(written.contains("seed = 4"));
}

#[test]
fn eval_and_analysis_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r");
    assert_eq!(short_run(&run, "ba3c", 2).status.code(), Some(0));
    let r = run.to_str().unwrap();

    let csv = tmp.path().join("eval.csv");
    let a = amtl(&["eval", "--run", r, "--csv", csv.to_str().unwrap()]);
    let b = amtl(&["eval", "--run", r]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2);

    let o = amtl(&["analyze-firing", "--run", r, "--episodes", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(run.join("analysis/firing.csv").is_file());
    assert!(run.join("analysis/firing_plot.csv").is_file());

    let out = tmp.path().join("turnoff");
    let o = amtl(&["analyze-turnoff", "--run", r, "--episodes", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_dir(&out).unwrap().count() > 0);
}

#[test]
fn compare_groups_by_scheduler() {
    let tmp = tempfile::tempdir().unwrap();
    for (kind, seed) in [("ba3c", 1), ("ba3c", 2), ("a5c", 1)] {
        let o = short_run(&tmp.path().join(format!("{kind}-{seed}")), kind, seed);
        assert_eq!(o.status.code(), Some(0));
    }
    let o = amtl(&["compare", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let row = |k: &str| text.lines().find(|l| l.starts_with(k)).unwrap().split_whitespace().nth(1).unwrap().to_string();
    assert_eq!(row("ba3c"), "2");
    assert_eq!(row("a5c"), "1");
}

#[test]
fn gen_instance_round_trips() {
    let o = amtl(&["gen-instance", "--list"]);
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), ["syn6", "syn6-imbalanced", "syn12"]);

    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("i.json");
    let o = amtl(&["gen-instance", "--preset", "syn12", "--out", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let run = tmp.path().join("r");
    let o = amtl(&[
        "run",
        "--set",
        &format!("instance.file=\"{}\"", file.display()),
        "--set",
        "total_steps=500",
        "--set",
        "eval.episodes=1",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("syn12"));

    assert_eq!(amtl(&["gen-instance", "--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = amtl(&["run", "--set", "bogus=1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    let o = amtl(&["run", "--set", "scheduler.kind=zzz", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"tasks\": []}").unwrap();
    let o = amtl(&["run", "--set", &format!("instance.file=\"{}\"", bad.display()), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(amtl(&["frob"]).status.code(), Some(2));
    assert_eq!(amtl(&["run"]).status.code(), Some(2));

    let missing = tmp.path().join("missing");
    let o = amtl(&["eval", "--run", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
