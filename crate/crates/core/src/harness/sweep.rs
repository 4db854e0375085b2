//! Grid sweep over (P(feedback), P(correct), smear) plus a no-feedback control.
//!
//! Replicate `i` of every cell runs with seed `base_seed + i`, so cells are
//! compared under common random numbers and a silent-trainer cell reproduces
//! the control seed for seed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stats::{mean_sem, welch_lower, MeanSem};
use super::trial::{run_trial, TrialRecord};
use crate::config::{SweepConfig, TrialConfig};
use crate::error::{Error, Result};
use crate::exec::map_jobs;
use crate::feedback::FeedbackModelConfig;

/// Significance level for flagging an improvement over control.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellKey {
    Control,
    Feedback { p_feedback: f64, p_correct: f64, smear: f64 },
}

impl CellKey {
    pub fn feedback(&self) -> Option<FeedbackModelConfig> {
        match *self {
            CellKey::Control => None,
            CellKey::Feedback { p_feedback, p_correct, smear } => {
                Some(FeedbackModelConfig::new(p_feedback, p_correct, smear))
            }
        }
    }

    pub fn param(&self, p: Param) -> Option<f64> {
        match (*self, p) {
            (CellKey::Control, _) => None,
            (CellKey::Feedback { p_feedback, .. }, Param::PFeedback) => Some(p_feedback),
            (CellKey::Feedback { p_correct, .. }, Param::PCorrect) => Some(p_correct),
            (CellKey::Feedback { smear, .. }, Param::Smear) => Some(smear),
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self, CellKey::Control)
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellKey::Control => write!(f, "control"),
            CellKey::Feedback { p_feedback, p_correct, smear } => {
                write!(f, "pf={p_feedback} pc={p_correct} smear={smear}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    PFeedback,
    PCorrect,
    Smear,
}

impl Param {
    pub fn name(&self) -> &'static str {
        match self {
            Param::PFeedback => "pfeedback",
            Param::PCorrect => "pcorrect",
            Param::Smear => "smear",
        }
    }

    pub const ALL: [Param; 3] = [Param::PFeedback, Param::PCorrect, Param::Smear];
}

impl FromStr for Param {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pfeedback" | "p_feedback" => Ok(Param::PFeedback),
            "pcorrect" | "p_correct" => Ok(Param::PCorrect),
            "smear" => Ok(Param::Smear),
            other => Err(format!("unknown parameter `{other}` (expected pfeedback, pcorrect or smear)")),
        }
    }
}

/// Control first, then every grid combination in (p_feedback, p_correct,
/// smear) nesting order.
pub fn grid_cells(sweep: &SweepConfig) -> Vec<CellKey> {
    let mut cells = vec![CellKey::Control];
    for p_feedback in sweep.p_feedback_levels() {
        for &p_correct in &sweep.p_correct {
            for &smear in &sweep.smear {
                cells.push(CellKey::Feedback { p_feedback, p_correct, smear });
            }
        }
    }
    cells
}

pub fn replicate_seed(base_seed: u64, replicate: usize) -> u64 {
    base_seed.wrapping_add(replicate as u64)
}

#[derive(Debug, Clone)]
pub struct TrialJob {
    pub cell: CellKey,
    pub replicate: usize,
    pub config: TrialConfig,
}

pub fn plan_sweep(base: &TrialConfig, sweep: &SweepConfig) -> Vec<TrialJob> {
    grid_cells(sweep)
        .into_iter()
        .flat_map(|cell| {
            let reps = if cell.is_control() { sweep.control_seeds } else { sweep.seeds_per_cell };
            (0..reps).map(move |replicate| TrialJob {
                cell,
                replicate,
                config: base
                    .clone()
                    .with_seed(replicate_seed(sweep.base_seed, replicate))
                    .with_feedback(cell.feedback()),
            })
        })
        .collect()
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub cell: String,
    pub p_feedback: Option<f64>,
    pub p_correct: Option<f64>,
    pub smear: Option<f64>,
    pub seed: u64,
    pub tail_mae: f64,
    pub diverged: bool,
}

impl TrialRow {
    pub fn from_record(cell: CellKey, record: &TrialRecord) -> Self {
        Self {
            cell: if cell.is_control() { "control" } else { "feedback" }.into(),
            p_feedback: cell.param(Param::PFeedback),
            p_correct: cell.param(Param::PCorrect),
            smear: cell.param(Param::Smear),
            seed: record.config.seed,
            tail_mae: record.tail_mae,
            diverged: record.diverged,
        }
    }

    pub fn cell_key(&self) -> Result<CellKey> {
        match (self.cell.as_str(), self.p_feedback, self.p_correct, self.smear) {
            ("control", ..) => Ok(CellKey::Control),
            ("feedback", Some(p_feedback), Some(p_correct), Some(smear)) => {
                Ok(CellKey::Feedback { p_feedback, p_correct, smear })
            }
            _ => Err(Error::Config(format!("malformed trial row for seed {}", self.seed))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub p_feedback: Option<f64>,
    pub p_correct: Option<f64>,
    pub smear: Option<f64>,
    /// Absent when every trial in the cell diverged.
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    pub n: usize,
    pub diverged: usize,
}

impl CellSummary {
    pub fn key(&self) -> CellKey {
        match (self.p_feedback, self.p_correct, self.smear) {
            (Some(p_feedback), Some(p_correct), Some(smear)) => CellKey::Feedback { p_feedback, p_correct, smear },
            _ => CellKey::Control,
        }
    }

    pub fn stats(&self) -> Option<MeanSem> {
        self.mean.map(|mean| MeanSem { mean, sem: self.sem, n: self.n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<CellSummary>,
}

impl SweepSummary {
    pub fn control(&self) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.key().is_control())
    }

    pub fn cell(&self, key: CellKey) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.key() == key)
    }

    pub fn total_trials(&self) -> usize {
        self.cells.iter().map(|c| c.n + c.diverged).sum()
    }

    pub fn total_diverged(&self) -> usize {
        self.cells.iter().map(|c| c.diverged).sum()
    }

    /// Groups rows by cell in order of first appearance (control first) and
    /// summarizes each, excluding diverged trials.
    pub fn from_rows(rows: &[TrialRow]) -> Result<Self> {
        let mut keys: Vec<CellKey> = Vec::new();
        let mut groups: Vec<Vec<&TrialRow>> = Vec::new();
        for row in rows {
            let key = row.cell_key()?;
            match keys.iter().position(|k| *k == key) {
                Some(i) => groups[i].push(row),
                None => {
                    keys.push(key);
                    groups.push(vec![row]);
                }
            }
        }
        let mut cells: Vec<CellSummary> = keys
            .iter()
            .zip(&groups)
            .map(|(key, rows)| {
                let ok: Vec<f64> = rows.iter().filter(|r| !r.diverged).map(|r| r.tail_mae).collect();
                let stats = mean_sem(&ok).ok();
                CellSummary {
                    cell: key.to_string(),
                    p_feedback: key.param(Param::PFeedback),
                    p_correct: key.param(Param::PCorrect),
                    smear: key.param(Param::Smear),
                    mean: stats.map(|s| s.mean),
                    sem: stats.and_then(|s| s.sem),
                    n: ok.len(),
                    diverged: rows.len() - ok.len(),
                }
            })
            .collect();
        cells.sort_by_key(|c| !c.key().is_control());
        Ok(Self { cells })
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<TrialRow>,
    pub summary: SweepSummary,
}

/// Runs every planned trial on `jobs` workers and reduces in plan order.
pub fn run_sweep(base: &TrialConfig, sweep: &SweepConfig, jobs: usize) -> Result<SweepOutcome> {
    base.validate()?;
    sweep.validate()?;
    let plan = plan_sweep(base, sweep);
    let results = map_jobs(&plan, jobs, |job| run_trial(&job.config).map(|r| TrialRow::from_record(job.cell, &r)));
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = SweepSummary::from_rows(&rows)?;
    Ok(SweepOutcome { rows, summary })
}

/// Mean ± SEM over the non-diverged records.
pub fn summarize(records: &[TrialRecord]) -> Result<MeanSem> {
    let ok: Vec<f64> = records.iter().filter(|r| !r.diverged).map(|r| r.tail_mae).collect();
    mean_sem(&ok)
}

/// One level of a marginal view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub param: Param,
    pub level: f64,
    /// Unweighted mean of the cell means at this level.
    pub mean: f64,
    /// `sqrt(sum sem_i^2) / k`: the standard error of that average.
    pub sem: Option<f64>,
    pub cells: usize,
    pub n: usize,
}

/// Averages feedback cells over the other two parameters, one row per level
/// of `by`, levels ascending.
pub fn marginals(summary: &SweepSummary, by: Param) -> Vec<Marginal> {
    let mut levels: Vec<f64> = summary.cells.iter().filter_map(|c| c.key().param(by)).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
        .into_iter()
        .filter_map(|level| {
            let cells: Vec<&CellSummary> =
                summary.cells.iter().filter(|c| c.key().param(by) == Some(level) && c.mean.is_some()).collect();
            if cells.is_empty() {
                return None;
            }
            let k = cells.len() as f64;
            let mean = cells.iter().filter_map(|c| c.mean).sum::<f64>() / k;
            let sem = cells.iter().map(|c| c.sem.map(|s| s * s)).sum::<Option<f64>>().map(|v| v.sqrt() / k);
            Some(Marginal { param: by, level, mean, sem, cells: cells.len(), n: cells.iter().map(|c| c.n).sum() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Better,
    Worse,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rank: usize,
    pub cell: String,
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    pub n: usize,
    pub t: Option<f64>,
    pub df: Option<f64>,
    /// One-sided p-value for "lower error than control".
    pub p_value: Option<f64>,
    pub significant: bool,
    pub direction: Direction,
}

/// Ranks every cell by mean tail error (lowest first; cells with no
/// surviving trials last) and tests each against control.
pub fn compare_to_control(summary: &SweepSummary) -> Result<Vec<Comparison>> {
    let control = summary.control().ok_or_else(|| Error::Config("summary has no control cell".into()))?.stats();
    let mut order: Vec<usize> = (0..summary.cells.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| summary.cells[i].mean.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            let c = &summary.cells[i];
            let test = match (c.key().is_control(), c.stats(), control) {
                (false, Some(s), Some(ctrl)) => welch_lower(&s, &ctrl),
                _ => None,
            };
            let direction = match (c.mean, control.map(|s| s.mean)) {
                (Some(m), Some(cm)) if !c.key().is_control() && m < cm => Direction::Better,
                (Some(m), Some(cm)) if !c.key().is_control() && m > cm => Direction::Worse,
                _ => Direction::Same,
            };
            let p_value = test.map(|t| t.p_lower);
            Comparison {
                rank: rank + 1,
                cell: c.cell.clone(),
                mean: c.mean,
                sem: c.sem,
                n: c.n,
                t: test.map(|t| t.t),
                df: test.map(|t| t.df),
                p_value,
                significant: direction == Direction::Better && p_value.is_some_and(|p| p < SIGNIFICANCE),
                direction,
            }
        })
        .collect())
}
