//! Mean, standard error, a one-sided Welch test and a paired t test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    /// Absent for a single observation.
    pub sem: Option<f64>,
    pub n: usize,
}

impl MeanSem {
    pub fn sample_std(&self) -> Option<f64> {
        self.sem.map(|s| s * (self.n as f64).sqrt())
    }
}

/// Mean and `sd / sqrt(n)` with the `n - 1` denominator.
pub fn mean_sem(values: &[f64]) -> Result<MeanSem> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sem = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    });
    Ok(MeanSem { mean, sem, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// P(T <= t) under the null: small when the first sample's mean is lower.
    pub p_lower: f64,
}

/// Unequal-variance two-sample t test of `H1: mean(a) < mean(b)`, from
/// summary statistics. `None` when either side lacks a standard error.
pub fn welch_lower(a: &MeanSem, b: &MeanSem) -> Option<WelchTest> {
    let (sa, sb) = (a.sem?, b.sem?);
    let (va, vb) = (sa * sa, sb * sb);
    let diff = a.mean - b.mean;
    let pooled = va + vb;
    if pooled == 0.0 {
        let (t, p_lower) = if diff < 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else if diff > 0.0 {
            (f64::INFINITY, 1.0)
        } else {
            (0.0, 1.0)
        };
        return Some(WelchTest { t, df: (a.n + b.n - 2) as f64, p_lower });
    }
    let t = diff / pooled.sqrt();
    let df = pooled * pooled / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(WelchTest { t, df, p_lower: dist.cdf(t) })
}

/// Welch test straight from two samples.
pub fn welch_lower_samples(a: &[f64], b: &[f64]) -> Result<Option<WelchTest>> {
    Ok(welch_lower(&mean_sem(a)?, &mean_sem(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Two-sided paired t test on `a[i] - b[i]`. `None` with fewer than two
/// pairs. Identical samples give `p = 1`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<Option<PairedTest>> {
    if a.len() != b.len() {
        return Err(Error::Config(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = mean_sem(&diffs)?;
    let Some(sem) = s.sem else { return Ok(None) };
    let df = (s.n - 1) as f64;
    if sem == 0.0 {
        let p = if s.mean == 0.0 { 1.0 } else { 0.0 };
        let t = if s.mean == 0.0 { 0.0 } else { s.mean.signum() * f64::INFINITY };
        return Ok(Some(PairedTest { mean_diff: s.mean, t, df, p_two_sided: p }));
    }
    let t = s.mean / sem;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    Ok(Some(PairedTest { mean_diff: s.mean, t, df, p_two_sided: 2.0 * dist.cdf(-t.abs()) }))
}
