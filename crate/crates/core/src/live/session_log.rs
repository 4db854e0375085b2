//! JSON-lines session event log and offline replay.
//!
//! The first line is a header carrying the full trial config and its
//! digest. Each feedback line records the step it was applied to. A reset
//! line restarts the trial; replay reproduces the segment after the last
//! reset. An end line records how many steps that segment completed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::protocol::ControlVerb;
use crate::config::TrialConfig;
use crate::error::{Error, Result};
use crate::harness::trial::{drive, RunOptions, Trial, TrialRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Header {
        seed: u64,
        config_digest: String,
        config: Box<TrialConfig>,
    },
    Feedback {
        step: usize,
        sign: i8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_time: Option<f64>,
    },
    Control {
        step: usize,
        verb: ControlVerb,
    },
    End {
        steps: usize,
    },
}

pub struct SessionLogWriter {
    out: BufWriter<File>,
}

impl SessionLogWriter {
    pub fn create(path: &Path, config: &TrialConfig) -> Result<Self> {
        let mut w = Self { out: BufWriter::new(File::create(path)?) };
        w.append(&LogEntry::Header {
            seed: config.seed,
            config_digest: config.digest(),
            config: Box::new(config.clone()),
        })?;
        Ok(w)
    }

    pub fn append(&mut self, entry: &LogEntry) -> Result<()> {
        serde_json::to_writer(&mut self.out, entry)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub config: TrialConfig,
    pub config_digest: String,
    pub entries: Vec<LogEntry>,
}

impl SessionLog {
    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry =
                serde_json::from_str(&line).map_err(|e| Error::SessionLog(format!("line {}: {e}", i + 1)))?;
            lines.push(entry);
        }
        let mut iter = lines.into_iter();
        match iter.next() {
            Some(LogEntry::Header { config, config_digest, seed }) => {
                if config.digest() != config_digest {
                    return Err(Error::SessionLog("header digest does not match its config".into()));
                }
                if config.seed != seed {
                    return Err(Error::SessionLog("header seed does not match its config".into()));
                }
                Ok(Self { config: *config, config_digest, entries: iter.collect() })
            }
            _ => Err(Error::SessionLog("missing header line".into())),
        }
    }

    /// Entries after the last reset.
    pub fn final_segment(&self) -> &[LogEntry] {
        let start = self
            .entries
            .iter()
            .rposition(|e| matches!(e, LogEntry::Control { verb: ControlVerb::Reset, .. }))
            .map_or(0, |i| i + 1);
        &self.entries[start..]
    }

    /// Summed feedback per step index for the final segment.
    pub fn feedback_by_step(&self) -> BTreeMap<usize, f64> {
        let mut map = BTreeMap::new();
        for e in self.final_segment() {
            if let LogEntry::Feedback { step, sign, .. } = e {
                *map.entry(*step).or_insert(0.0) += f64::from(*sign);
            }
        }
        map
    }

    /// Steps completed by the final segment, when the session ended cleanly.
    pub fn completed_steps(&self) -> Option<usize> {
        self.final_segment().iter().rev().find_map(|e| match e {
            LogEntry::End { steps } => Some(*steps),
            _ => None,
        })
    }
}

/// Re-runs a logged session offline. When `expected` is given its digest must
/// match the log header.
pub fn replay(log_path: &Path, expected: Option<&TrialConfig>) -> Result<TrialRecord> {
    let log = SessionLog::read(log_path)?;
    if let Some(cfg) = expected {
        if cfg.digest() != log.config_digest {
            return Err(Error::SessionLog(format!(
                "config digest {} does not match session log digest {}",
                cfg.digest(),
                log.config_digest
            )));
        }
    }
    replay_log(&log)
}

pub fn replay_log(log: &SessionLog) -> Result<TrialRecord> {
    let mut config = log.config.clone();
    if let Some(steps) = log.completed_steps() {
        config.max_steps = steps.max(1);
        config.tail_window = config.tail_window.min(config.max_steps);
    }
    let feedback = log.feedback_by_step();
    let options = RunOptions { per_step_log: true, dump_weights: true, ..Default::default() };
    let trial = Trial::new_external(config)?;
    drive(trial, &options, |step| feedback.get(&step).copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::FeedbackModelConfig;
    use crate::harness::trial::run_trial_with;

    fn cfg() -> TrialConfig {
        TrialConfig { max_steps: 300, tail_window: 100, seed: 5, ..TrialConfig::default() }
            .with_feedback(Some(FeedbackModelConfig::new(0.0, 1.0, 0.5)))
    }

    fn write(path: &Path, config: &TrialConfig, entries: &[LogEntry]) {
        let mut w = SessionLogWriter::create(path, config).unwrap();
        for e in entries {
            w.append(e).unwrap();
        }
    }

    #[test]
    fn empty_log_equals_silent_control() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let c = cfg();
        write(&p, &c, &[LogEntry::End { steps: 300 }]);
        let replayed = replay(&p, Some(&c)).unwrap();
        let control =
            run_trial_with(&c.clone().with_feedback(None), &RunOptions { dump_weights: true, ..Default::default() })
                .unwrap();
        assert_eq!(replayed.weights, control.weights);
        assert_eq!(replayed.tail_mae.to_bits(), control.tail_mae.to_bits());
    }

    #[test]
    fn one_event_per_step_is_geometric_sum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let c = cfg();
        let mut entries: Vec<LogEntry> =
            (0..300).map(|step| LogEntry::Feedback { step, sign: 1, client_time: None }).collect();
        entries.push(LogEntry::End { steps: 300 });
        write(&p, &c, &entries);
        let rec = replay(&p, None).unwrap();
        for (t, row) in rec.per_step.unwrap().iter().enumerate() {
            let want: f64 = (0..=t).map(|k| 0.5f64.powi((t - k) as i32)).sum();
            assert!((row.h_accumulator - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reset_discards_earlier_events() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let c = cfg();
        write(
            &p,
            &c,
            &[
                LogEntry::Feedback { step: 3, sign: -1, client_time: None },
                LogEntry::Control { step: 10, verb: ControlVerb::Reset },
                LogEntry::Feedback { step: 2, sign: 1, client_time: Some(1.0) },
                LogEntry::Feedback { step: 2, sign: 1, client_time: Some(1.5) },
                LogEntry::End { steps: 50 },
            ],
        );
        let log = SessionLog::read(&p).unwrap();
        assert_eq!(log.feedback_by_step().into_iter().collect::<Vec<_>>(), vec![(2, 2.0)]);
        let rec = replay_log(&log).unwrap();
        assert_eq!(rec.steps_completed, 50);
        assert_eq!(rec.per_step.unwrap()[2].h_accumulator, 2.0);
    }

    #[test]
    fn digest_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        write(&p, &cfg(), &[]);
        let other = cfg().with_seed(6);
        assert!(matches!(replay(&p, Some(&other)), Err(Error::SessionLog(_))));
    }

    #[test]
    fn tampered_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        write(&p, &cfg(), &[]);
        let text = std::fs::read_to_string(&p).unwrap().replace("\"max_steps\":300", "\"max_steps\":301");
        std::fs::write(&p, text).unwrap();
        assert!(SessionLog::read(&p).is_err());
    }
}
