//! Seeded trials, the parameter sweep and its summaries.

pub mod io;
pub mod stats;
pub mod sweep;
pub mod trial;

pub use stats::{mean_sem, paired_t, welch_lower, MeanSem, PairedTest, WelchTest};
pub use sweep::{
    compare_to_control, grid_cells, marginals, plan_sweep, replicate_seed, run_sweep, summarize, CellKey, CellSummary,
    Comparison, Marginal, Param, SweepOutcome, SweepSummary, TrialJob, TrialRow,
};
pub use trial::{drive, run_trial, run_trial_with, HumanChannel, RunOptions, StepLog, Trial, TrialRecord};
