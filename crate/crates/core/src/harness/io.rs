//! Result files: trial CSVs, JSON summaries and gzipped per-step logs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::Serialize;

use super::sweep::TrialRow;
use super::trial::StepLog;
use crate::error::{Error, Result};

pub const TRIAL_HEADER: [&str; 7] = ["cell", "p_feedback", "p_correct", "smear", "seed", "tail_mae", "diverged"];

pub fn rows_to_csv_bytes(rows: &[TrialRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(TRIAL_HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_rows_csv(path: &Path, rows: &[TrialRow]) -> Result<()> {
    std::fs::write(path, rows_to_csv_bytes(rows)?)?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn is_trial_csv(path: &Path) -> bool {
    csv::Reader::from_path(path)
        .and_then(|mut r| r.headers().cloned())
        .is_ok_and(|h| h.iter().eq(TRIAL_HEADER.iter().copied()))
}

/// Reads one trial CSV, or every trial CSV in a directory in name order.
/// Other CSV files in the directory are skipped.
pub fn read_rows(path: &Path) -> Result<Vec<TrialRow>> {
    if path.is_file() {
        return read_rows_csv(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv") && is_trial_csv(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no trial CSV files under {}", path.display())));
    }
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_rows_csv(&f)?);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `log` as gzipped CSV.
pub fn write_step_log_gz(path: &Path, log: &[StepLog]) -> Result<()> {
    let gz = GzEncoder::new(BufWriter::new(File::create(path)?), Compression::default());
    let mut w = csv::Writer::from_writer(gz);
    for row in log {
        w.serialize(row)?;
    }
    let gz = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    gz.finish()?.flush()?;
    Ok(())
}

pub fn read_step_log_gz(path: &Path) -> Result<Vec<StepLog>> {
    let gz = GzDecoder::new(BufReader::new(File::open(path)?));
    let mut r = csv::Reader::from_reader(gz);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
