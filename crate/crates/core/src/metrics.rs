//! Forecast verification: RMSE, anomaly correlation, useful time and the
//! five-way outcome classification used in the sweep tallies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Useful-time threshold on the anomaly correlation.
pub const AC_THRESHOLD: f64 = 0.6;
/// Relative threshold (of the average useful time) for success and failure.
pub const SUCCESS_FRACTION: f64 = 0.05;

/// Un-normalised Euclidean error ||forecast - truth||.
pub fn rmse(forecast_mean: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(forecast_mean.len(), truth.len());
    forecast_mean.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Cosine between forecast and truth anomalies about the climatological mean.
pub fn anomaly_correlation(forecast_mean: &[f64], truth: &[f64], clim_mean: &[f64]) -> Result<f64> {
    let (mut num, mut nf, mut nt) = (0.0, 0.0, 0.0);
    for ((f, t), c) in forecast_mean.iter().zip(truth).zip(clim_mean) {
        let (af, at) = (f - c, t - c);
        num += af * at;
        nf += af * af;
        nt += at * at;
    }
    if nf == 0.0 || nt == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((num / (nf.sqrt() * nt.sqrt())).clamp(-1.0, 1.0))
}

/// Index of the first sample strictly below `threshold`, if any. NaN samples never cross.
pub fn first_crossing(ac_series: &[f64], threshold: f64) -> Option<usize> {
    ac_series.iter().position(|&v| v < threshold)
}

/// Time of the first recorded sample below `threshold`, or `horizon_days` if none.
pub fn useful_time(ac_series: &[f64], times_days: &[f64], threshold: f64, horizon_days: f64) -> f64 {
    match first_crossing(ac_series, threshold) {
        Some(k) => times_days[k],
        None => horizon_days,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Improved by more than 5% of the average useful time.
    Succeeded,
    /// Improved by more than one recording step, but not enough to succeed.
    Helped,
    Indistinguishable,
    /// Degraded by more than one recording step, but not enough to fail.
    Hurt,
    /// Degraded by more than 5% of the average useful time.
    Failed,
}

impl Outcome {
    pub const ALL: [Outcome; 5] =
        [Outcome::Succeeded, Outcome::Helped, Outcome::Indistinguishable, Outcome::Hurt, Outcome::Failed];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Succeeded => "succeeded",
            Outcome::Helped => "helped",
            Outcome::Indistinguishable => "indistinguishable",
            Outcome::Hurt => "hurt",
            Outcome::Failed => "failed",
        }
    }

    pub fn is_improvement(self) -> bool {
        matches!(self, Outcome::Succeeded | Outcome::Helped)
    }

    pub fn is_degradation(self) -> bool {
        matches!(self, Outcome::Hurt | Outcome::Failed)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown outcome category {s:?}")))
    }
}

/// Classifies the change in useful time caused by inflation.
///
/// Durations are in days; `dt_step` is the recording stride. A change of at
/// most one stride (including zero) is indistinguishable. Success and failure
/// require both the 5% threshold and more than one stride, so they nest inside
/// helped and hurt.
pub fn classify_outcome(useful_inflated: f64, useful_baseline: f64, avg_useful: f64, dt_step: f64) -> Outcome {
    let delta = useful_inflated - useful_baseline;
    // useful times are whole strides apart; the slack absorbs day conversion rounding
    let step = dt_step * (1.0 + 1e-6);
    let big = (SUCCESS_FRACTION * avg_useful).max(step);
    if delta > big {
        Outcome::Succeeded
    } else if delta < -big {
        Outcome::Failed
    } else if delta > step {
        Outcome::Helped
    } else if delta < -step {
        Outcome::Hurt
    } else {
        Outcome::Indistinguishable
    }
}

/// Per-cell outcome counts. `helped` and `hurt` are inclusive of
/// `succeeded` and `failed` respectively, matching nested bar charts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub slow: usize,
    pub fast: usize,
    pub phi: f64,
    pub mu: f64,
    pub succeeded: usize,
    pub failed: usize,
    pub helped: usize,
    pub hurt: usize,
    pub indistinguishable: usize,
    /// Baseline average useful (or shadowing) time in days.
    pub avg_useful_days: f64,
    /// Hyperspheres that could not be evaluated and were quarantined.
    pub quarantined: usize,
}

impl OutcomeTally {
    pub fn new(slow: usize, fast: usize, phi: f64, mu: f64, avg_useful_days: f64) -> Self {
        Self { slow, fast, phi, mu, avg_useful_days, ..Default::default() }
    }

    pub fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Succeeded => {
                self.succeeded += 1;
                self.helped += 1;
            }
            Outcome::Helped => self.helped += 1,
            Outcome::Indistinguishable => self.indistinguishable += 1,
            Outcome::Hurt => self.hurt += 1,
            Outcome::Failed => {
                self.failed += 1;
                self.hurt += 1;
            }
        }
    }

    pub fn helped_only(&self) -> usize {
        self.helped - self.succeeded
    }

    pub fn hurt_only(&self) -> usize {
        self.hurt - self.failed
    }

    /// Number of classified hyperspheres.
    pub fn total(&self) -> usize {
        self.helped + self.hurt + self.indistinguishable
    }

    /// Commutative merge of counts from the same cell.
    pub fn merge(&mut self, other: &OutcomeTally) {
        self.succeeded += other.succeeded;
        self.failed += other.failed;
        self.helped += other.helped;
        self.hurt += other.hurt;
        self.indistinguishable += other.indistinguishable;
        self.quarantined += other.quarantined;
    }
}
