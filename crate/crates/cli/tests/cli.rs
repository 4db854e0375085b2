use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use mirror_shaper::feedback::FeedbackModelConfig;
use mirror_shaper::live::{LineClient, LogEntry, Outbound, SessionLogWriter};
use mirror_shaper::TrialConfig;

const BIN: &str = env!("CARGO_BIN_EXE_mirror-shaper");

fn repo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper.json")
}

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("MIRROR_SHAPER_OUT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT: [&str; 4] = ["--set", "max_steps=400", "--set", "tail_window=200"];

#[test]
fn run_is_reproducible_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["run", "--seed", "7", "--out", out.to_str().unwrap()];
        args.extend(SHORT);
        let o = cli(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("seed 7"));
        csvs.push(std::fs::read(out.join("trial.csv")).unwrap());
        let eff: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("effective_config.json")).unwrap()).unwrap();
        assert_eq!(eff["seed"], 7);
        assert_eq!(eff["max_steps"], 400);
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn run_writes_weights_and_step_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let mut args = vec!["run", "--dump-weights", "--per-step-log", "--out", out.to_str().unwrap()];
    args.extend(SHORT);
    let o = cli(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    assert_eq!(rec["weights"]["w_mu"].as_array().unwrap().len(), 648);
    let steps = mirror_shaper::harness::io::read_step_log_gz(&out.join("steps.csv.gz")).unwrap();
    assert_eq!(steps.len(), 400);
}

#[test]
fn sweep_then_summarize_by_smear() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let cfg = repo_config();
    let mut args = vec!["sweep", "--config", cfg.to_str().unwrap(), "--jobs", "2", "--out", out.to_str().unwrap()];
    args.extend(["--set", "max_steps=200", "--set", "tail_window=100"]);
    args.extend(["--set", "sweep.seeds_per_cell=2", "--set", "sweep.control_seeds=3"]);
    let o = cli(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let cells = summary["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 28);
    assert_eq!(cells[0]["cell"], "control");
    assert!(out.join("comparison.json").is_file() && out.join("marginals.json").is_file());

    let o = cli(&["summarize", out.to_str().unwrap(), "--by", "smear"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip_while(|l| !l.starts_with("by smear")).skip(2).collect();
    assert_eq!(rows.len(), 3, "{text}");
    for (row, level) in rows.iter().zip(["0.2", "0.5", "0.9"]) {
        assert_eq!(row.split_whitespace().next(), Some(level));
    }

    let o = cli(&["summarize", out.join("trials.csv").to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("by pfeedback") && text.contains("by pcorrect") && text.contains("by smear"), "{text}");
}

#[test]
fn extra_pfeedback_level_adds_nine_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = cli(&[
        "sweep",
        "--extra-pfeedback",
        "0.06",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "max_steps=50",
        "--set",
        "tail_window=10",
        "--set",
        "sweep.seeds_per_cell=1",
        "--set",
        "sweep.control_seeds=2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 37);
}

#[test]
fn divergence_dominated_sweep_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = cli(&[
        "sweep",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "learner.alpha_v=1e200",
        "--set",
        "max_steps=50",
        "--set",
        "tail_window=10",
        "--set",
        "sweep.seeds_per_cell=1",
        "--set",
        "sweep.control_seeds=1",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(out.join("trials.csv").is_file());
}

#[test]
fn usage_errors_exit_1() {
    for args in [&["frobnicate"][..], &["run", "--bogus"], &["summarize"], &[]] {
        assert_eq!(cli(args).status.code(), Some(1), "{args:?}");
    }
    let o = cli(&["validate-config", "--config", "/definitely/missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not found"));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(cli(&["--version"]).status.code(), Some(0));
    let o = cli(&["summarize", "x", "--by", "speed"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"learner": {"alpha_v": "fast"}}"#).unwrap();
    let o = cli(&["validate-config", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learner.alpha_v"), "{}", stderr(&o));

    std::fs::write(&p, r#"{"sweep": {"smear": [0.2, 1.5]}}"#).unwrap();
    let o = cli(&["validate-config", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("smear"), "{}", stderr(&o));

    std::fs::write(&p, "{ not json").unwrap();
    assert_eq!(cli(&["validate-config", "--config", p.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn cli_flags_override_config_file() {
    let cfg = repo_config();
    let o = cli(&["validate-config", "--config", cfg.to_str().unwrap(), "--seed", "42", "--set", "learner.gamma=0.95"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eff: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eff["seed"], 42);
    assert_eq!(eff["learner"]["gamma"], 0.95);
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let flag_dir = dir.path().join("from-flag");
    let run = |extra: &[&str]| {
        let mut args = vec!["run"];
        args.extend(SHORT);
        args.extend(extra);
        Command::new(BIN).args(&args).env("MIRROR_SHAPER_OUT", &env_dir).output().unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(env_dir.join("trial.csv").is_file());
    assert!(run(&["--out", flag_dir.to_str().unwrap()]).status.success());
    assert!(flag_dir.join("trial.csv").is_file());
}

#[test]
fn live_replay_from_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("session.jsonl");
    let cfg = TrialConfig { max_steps: 100, tail_window: 50, ..TrialConfig::default() }
        .with_feedback(Some(FeedbackModelConfig::new(0.0, 1.0, 0.5)));
    let mut w = SessionLogWriter::create(&log, &cfg).unwrap();
    w.append(&LogEntry::Feedback { step: 4, sign: 1, client_time: None }).unwrap();
    w.append(&LogEntry::End { steps: 100 }).unwrap();
    drop(w);
    let out = dir.path().join("replay");
    let o = cli(&["live", "--replay", log.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("replayed 100 steps"));
    assert!(out.join("replay_record.json").is_file());

    let mismatched = repo_config();
    let o = cli(&[
        "live",
        "--replay",
        log.to_str().unwrap(),
        "--config",
        mismatched.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("digest"));
}

#[test]
fn live_serves_until_trial_ends() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("live");
    let mut child = Command::new(BIN)
        .args(["live", "--port", "0", "--period-ms", "1", "--out", out.to_str().unwrap()])
        .args(["--set", "max_steps=120", "--set", "tail_window=60"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let addr = first.split_whitespace().nth(2).unwrap().to_string();
    let mut client = LineClient::connect(addr.as_str()).unwrap();
    client.feedback(1).unwrap();
    let done =
        client.recv_until(Duration::from_secs(20), |m| matches!(m, Outbound::Status { finished: true, .. })).unwrap();
    assert!(done.is_some());
    assert!(child.wait().unwrap().success());
    assert!(out.join("session.jsonl").is_file() && out.join("record.json").is_file());

    let o = cli(&["live", "--replay", out.join("session.jsonl").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let live: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    let replayed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("replay_record.json")).unwrap()).unwrap();
    assert_eq!(live["weights"], replayed["weights"]);
}
