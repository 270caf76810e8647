//! Small numerical helpers shared by the estimators: compensated sums,
//! Monte Carlo means with standard errors, and the two target CDFs.

use serde::{Deserialize, Serialize};

/// Neumaier (improved Kahan) compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// A Monte Carlo point estimate together with its standard error.
///
/// Closed-form and enumerated quantities carry `se = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, se: 0.0 }
    }

    /// Sample mean and `sd / sqrt(m)` of a slice of i.i.d. replicate values.
    pub fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len();
        if m == 0 {
            return Estimate {
                value: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = samples.iter().copied().collect::<NeumaierSum>().total() / m as f64;
        if m == 1 {
            return Estimate { value: mean, se: 0.0 };
        }
        let ss = samples
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .collect::<NeumaierSum>()
            .total();
        let var = ss / (m - 1) as f64;
        Estimate {
            value: mean,
            se: (var / m as f64).sqrt(),
        }
    }

    /// `|value - target| <= k * se`, with `se = 0` demanding exact equality.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }
}

/// Unbiased sample variance together with an approximate standard error of that
/// variance, `sqrt((m4 - s^4) / m)`, the usual large-sample formula.
pub fn sample_variance_with_se(samples: &[f64]) -> Estimate {
    let m = samples.len();
    if m < 2 {
        return Estimate {
            value: f64::NAN,
            se: f64::NAN,
        };
    }
    let mf = m as f64;
    let mean = samples.iter().copied().collect::<NeumaierSum>().total() / mf;
    let mut s2 = NeumaierSum::new();
    let mut s4 = NeumaierSum::new();
    for v in samples {
        let d = v - mean;
        s2.add(d * d);
        s4.add(d * d * d * d);
    }
    let var = s2.total() / (mf - 1.0);
    let m2 = s2.total() / mf;
    let m4 = s4.total() / mf;
    Estimate {
        value: var,
        se: ((m4 - m2 * m2).max(0.0) / mf).sqrt(),
    }
}

/// Standard normal CDF, `0.5 * erfc(-x / sqrt 2)`.
///
/// `libm::erfc` is the FreeBSD msun implementation (error below 1 ulp),
/// comfortably inside the 1e-10 absolute error required of the KS instrument.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of `W^2 - 1` for standard normal `W`: `P(W^2 <= t + 1) = erf(sqrt((t + 1) / 2))`.
pub fn shifted_chi2_1_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else {
        libm::erf(((t + 1.0) / 2.0).sqrt())
    }
}

/// `n choose 2` as a float.
pub fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_small_terms() {
        let mut s = NeumaierSum::new();
        s.add(1e16);
        s.add(1.0);
        s.add(-1e16);
        assert_eq!(s.total(), 1.0);
    }

    #[test]
    fn estimate_of_constant_sample_has_zero_se() {
        let e = Estimate::from_samples(&[2.5; 10]);
        assert_eq!(e.value, 2.5);
        assert_eq!(e.se, 0.0);
        assert!(e.within(2.5, 4.0));
        assert!(!e.within(2.6, 4.0));
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        // Phi(1.959963984540054) = 0.975
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-14);
    }

    #[test]
    fn shifted_chi2_cdf_matches_normal_identity() {
        // P(W^2 - 1 <= t) = 2 Phi(sqrt(t+1)) - 1
        for &t in &[-0.9, -0.5, 0.0, 0.7, 3.0, 10.0] {
            let via_normal = 2.0 * normal_cdf((t + 1.0f64).sqrt()) - 1.0;
            assert!((shifted_chi2_1_cdf(t) - via_normal).abs() < 1e-14);
        }
        assert_eq!(shifted_chi2_1_cdf(-1.0), 0.0);
        assert_eq!(shifted_chi2_1_cdf(-3.0), 0.0);
    }

    #[test]
    fn variance_se_is_finite() {
        let v: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let e = sample_variance_with_se(&v);
        assert!(e.value > 0.0 && e.se > 0.0);
    }
}
