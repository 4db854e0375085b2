use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{error::ErrorKind, Args, Parser, Subcommand};
use log::info;
use mirror_shaper::config::ExperimentConfig;
use mirror_shaper::harness::io::{read_rows, write_json, write_rows_csv, write_step_log_gz};
use mirror_shaper::harness::{
    compare_to_control, marginals, run_sweep, run_trial_with, CellKey, Param, RunOptions, SweepSummary, TrialRecord,
    TrialRow,
};
use mirror_shaper::live::{replay, LiveSession};

const OUT_ENV: &str = "MIRROR_SHAPER_OUT";
const DEFAULT_OUT: &str = "results";

#[derive(Parser)]
#[command(name = "mirror-shaper", version, about = "Human-shaped actor-critic workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the final learner weights into record.json.
        #[arg(long)]
        dump_weights: bool,
        /// Write every step to steps.csv.gz.
        #[arg(long)]
        per_step_log: bool,
    },
    /// Run the full feedback grid plus the control condition.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Append one more P(feedback) level to the grid.
        #[arg(long)]
        extra_pfeedback: Option<f64>,
    },
    /// Summarize trial CSVs (a file or a directory of them).
    Summarize {
        path: PathBuf,
        /// Show one marginal view instead of all three.
        #[arg(long, value_parser = parse_param)]
        by: Option<Param>,
    },
    /// Serve a live session, or replay a session log.
    Live {
        #[command(flatten)]
        common: Common,
        /// Replay this session log offline instead of serving.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        period_ms: Option<u64>,
        /// Session log path (default: <out>/session.jsonl).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Parse, apply overrides, validate and print the effective config.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set learner.gamma=0.95`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_param(s: &str) -> Result<Param, String> {
    s.parse()
}

impl Common {
    /// Loads the config with flags applied as overrides after `--set`.
    fn load(&self, extra: &[(&str, Option<String>)]) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output.dir={}", serde_json::Value::String(out.display().to_string())));
        }
        for (key, value) in extra {
            if let Some(v) = value {
                overrides.push(format!("{key}={v}"));
            }
        }
        let cfg = match &self.config {
            Some(path) => {
                if !path.is_file() {
                    anyhow::bail!("config file {} not found", path.display());
                }
                ExperimentConfig::load_path(path, &overrides)
            }
            None => ExperimentConfig::load("{}", &overrides),
        };
        cfg.context("invalid configuration")
    }

    /// `--out`, then the environment, then the config file, then `results`.
    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        if let Some(env) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(env);
        }
        cfg.output.dir.as_deref().map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
    }

    fn prepare(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let dir = self.out_dir(cfg);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("effective_config.json"), cfg.to_pretty_json() + "\n")?;
        Ok(dir)
    }
}

enum Status {
    Ok,
    Diverged,
}

fn flag(on: bool) -> Option<String> {
    on.then(|| "true".to_string())
}

fn write_trial(dir: &Path, record: &TrialRecord) -> Result<()> {
    let cell = record.config.feedback.as_ref().map_or(CellKey::Control, |f| CellKey::Feedback {
        p_feedback: f.p_feedback,
        p_correct: f.p_correct,
        smear: f.smear,
    });
    write_rows_csv(&dir.join("trial.csv"), &[TrialRow::from_record(cell, record)])?;
    if let Some(steps) = &record.per_step {
        write_step_log_gz(&dir.join("steps.csv.gz"), steps)?;
    }
    let compact = TrialRecord { per_step: None, ..record.clone() };
    write_json(&dir.join("record.json"), &compact)?;
    Ok(())
}

fn cmd_run(common: &Common, dump_weights: bool, per_step_log: bool) -> Result<Status> {
    let cfg =
        common.load(&[("output.dump_weights", flag(dump_weights)), ("output.per_step_log", flag(per_step_log))])?;
    let dir = common.prepare(&cfg)?;
    let options = RunOptions {
        per_step_log: cfg.output.per_step_log,
        dump_weights: cfg.output.dump_weights,
        ..Default::default()
    };
    let record = run_trial_with(&cfg.trial(), &options)?;
    write_trial(&dir, &record)?;
    match &record.divergence {
        Some(why) => {
            println!("seed {}: diverged after {} steps ({why})", cfg.seed, record.steps_completed);
            Ok(Status::Diverged)
        }
        None => {
            println!("seed {}: tail_mae {:.6} over {} steps", cfg.seed, record.tail_mae, record.steps_completed);
            Ok(Status::Ok)
        }
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

fn print_marginals(summary: &SweepSummary, by: Param) {
    println!("by {}:", by.name());
    println!("  {:>8}  {:>8}  {:>8}  {:>5}  {:>4}", "level", "mean", "sem", "cells", "n");
    for m in marginals(summary, by) {
        println!("  {:>8}  {:>8.4}  {:>8}  {:>5}  {:>4}", m.level, m.mean, fmt_opt(m.sem, 4), m.cells, m.n);
    }
}

fn print_control(summary: &SweepSummary) {
    if let Some(c) = summary.control() {
        println!("control: {} ± {} (n={}, diverged {})", fmt_opt(c.mean, 4), fmt_opt(c.sem, 4), c.n, c.diverged);
    }
}

fn divergence_dominated(summary: &SweepSummary) -> bool {
    2 * summary.total_diverged() > summary.total_trials()
}

fn cmd_sweep(common: &Common, jobs: Option<usize>, extra: Option<f64>) -> Result<Status> {
    let cfg = common.load(&[
        ("sweep.jobs", jobs.map(|j| j.to_string())),
        ("sweep.extra_p_feedback", extra.map(|p| p.to_string())),
    ])?;
    let dir = common.prepare(&cfg)?;
    info!("sweeping {} cells", mirror_shaper::harness::grid_cells(&cfg.sweep).len());
    let out = run_sweep(&cfg.trial(), &cfg.sweep, cfg.sweep.jobs)?;
    write_rows_csv(&dir.join("trials.csv"), &out.rows)?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    let comparison = compare_to_control(&out.summary)?;
    write_json(&dir.join("comparison.json"), &comparison)?;
    let all: Vec<_> = Param::ALL.iter().flat_map(|&p| marginals(&out.summary, p)).collect();
    write_json(&dir.join("marginals.json"), &all)?;

    println!("{:>4}  {:<40}  {:>8}  {:>8}  {:>3}  {:>9}", "rank", "cell", "mean", "sem", "n", "p");
    for c in &comparison {
        println!(
            "{:>4}  {:<40}  {:>8}  {:>8}  {:>3}  {:>9}{}",
            c.rank,
            c.cell,
            fmt_opt(c.mean, 4),
            fmt_opt(c.sem, 4),
            c.n,
            c.p_value.map_or_else(|| "-".into(), |p| format!("{p:.3e}")),
            if c.significant { " *" } else { "" }
        );
    }
    println!(
        "{} trials, {} diverged; results in {}",
        out.summary.total_trials(),
        out.summary.total_diverged(),
        dir.display()
    );
    Ok(if divergence_dominated(&out.summary) { Status::Diverged } else { Status::Ok })
}

fn cmd_summarize(path: &Path, by: Option<Param>) -> Result<Status> {
    let rows = read_rows(path).with_context(|| format!("reading trial CSVs from {}", path.display()))?;
    let summary = SweepSummary::from_rows(&rows)?;
    print_control(&summary);
    match by {
        Some(p) => print_marginals(&summary, p),
        None => Param::ALL.iter().for_each(|&p| print_marginals(&summary, p)),
    }
    Ok(Status::Ok)
}

fn cmd_live(
    common: &Common,
    replay_log: Option<&Path>,
    bind: Option<String>,
    port: Option<u16>,
    period_ms: Option<u64>,
    log: Option<&Path>,
) -> Result<Status> {
    let cfg = common.load(&[
        ("live.bind", bind.map(|b| serde_json::Value::String(b).to_string())),
        ("live.port", port.map(|p| p.to_string())),
        ("live.period_ms", period_ms.map(|p| p.to_string())),
        ("live.log_path", log.map(|l| serde_json::Value::String(l.display().to_string()).to_string())),
    ])?;
    let dir = common.prepare(&cfg)?;
    if let Some(path) = replay_log {
        let expected = common.config.is_some().then(|| cfg.trial());
        let record = replay(path, expected.as_ref())?;
        write_json(&dir.join("replay_record.json"), &TrialRecord { per_step: None, ..record.clone() })?;
        if let Some(steps) = &record.per_step {
            write_step_log_gz(&dir.join("replay_steps.csv.gz"), steps)?;
        }
        println!("replayed {} steps: tail_mae {:.6}", record.steps_completed, record.tail_mae);
        return Ok(if record.diverged { Status::Diverged } else { Status::Ok });
    }
    let log_path = cfg.live.log_path.as_deref().map_or_else(|| dir.join("session.jsonl"), PathBuf::from);
    let session = LiveSession::bind(cfg.trial(), &cfg.live, &log_path)?;
    println!(
        "listening on {} (config {}); session log {}",
        session.local_addr()?,
        cfg.trial().digest(),
        log_path.display()
    );
    let outcome = session.spawn()?.wait()?;
    write_trial(&dir, &outcome.record)?;
    println!("session ended after {} steps: tail_mae {:.6}", outcome.record.steps_completed, outcome.record.tail_mae);
    Ok(if outcome.record.diverged { Status::Diverged } else { Status::Ok })
}

fn dispatch(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Run { common, dump_weights, per_step_log } => cmd_run(&common, dump_weights, per_step_log),
        Command::Sweep { common, jobs, extra_pfeedback } => cmd_sweep(&common, jobs, extra_pfeedback),
        Command::Summarize { path, by } => cmd_summarize(&path, by),
        Command::Live { common, replay, bind, port, period_ms, log } => {
            cmd_live(&common, replay.as_deref(), bind, port, period_ms, log.as_deref())
        }
        Command::ValidateConfig { common } => {
            let cfg = common.load(&[])?;
            println!("{}", cfg.to_pretty_json());
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Diverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
