use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_cdf, shifted_chi2_1_cdf};

/// Limit laws the standardized statistic is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum TargetLaw {
    StandardNormal,
    /// `W^2 - 1` for standard normal `W`.
    Chi1Shifted,
}

impl TargetLaw {
    pub fn cdf(self, t: f64) -> f64 {
        match self {
            TargetLaw::StandardNormal => normal_cdf(t),
            TargetLaw::Chi1Shifted => shifted_chi2_1_cdf(t),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TargetLaw::StandardNormal => "standard_normal",
            TargetLaw::Chi1Shifted => "chi1_shifted",
        }
    }
}

/// One-sample Kolmogorov-Smirnov statistic `sup_t |F_R(t) - F(t)|`.
///
/// On the sorted sample `x_(1) <= ... <= x_(R)` this is
/// `max_i max(i/R - F(x_(i)), F(x_(i)) - (i-1)/R)`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("KS distance of a sample containing NaN"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = sorted.len() as f64;
    let d = sorted.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = cdf(x);
        let above = (i + 1) as f64 / r - f;
        let below = f - i as f64 / r;
        acc.max(above).max(below)
    });
    Ok(d)
}

pub fn ks_against(samples: &[f64], target: TargetLaw) -> Result<f64> {
    ks_distance(samples, |t| target.cdf(t))
}
