//! Monte Carlo estimators for the Lindeberg-type and conditional-variance
//! conditions of the martingale CLT, evaluated along an `n` grid with trend
//! verdicts.
//!
//! Every estimator is a plain mean over `m` independent replicates. Replicate
//! `r` of condition `C` draws from `seeds.rng(C, r)`, so the same random numbers
//! are reused across grid points and thresholds and the trends are not masked by
//! independent noise at each cell.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::decomposition::hoeffding_parts_with;
use crate::error::{Error, Result};
use crate::kernels::{centered_view, BoundKernel, InnerMcPolicy, KernelSpec, UnaryFn};
use crate::moments::{moments_auto, MomentSet};
use crate::sampling::{sample_replicate, DilutionGraph, DistributionSpec, SeedPolicy};
use crate::stats::{sample_variance_with_se, Estimate, NeumaierSum};

pub const DEFAULT_EPS_GRID: [f64; 4] = [0.01, 0.05, 0.1, 0.5];
pub const DEFAULT_N_GRID: [usize; 5] = [50, 100, 200, 400, 800];

/// Largest `n` for the general (non-factorized) `eta_2` path, whose cost is
/// `O(n^3 p^2)` per replicate.
pub const ETA2_GENERIC_MAX_N: usize = 400;

/// Floor below which a grid value counts as zero in trend verdicts.
pub const TREND_FLOOR: f64 = 1e-3;

/// Replications used for moment estimation when no closed form is available.
const MOMENT_MC: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditionId {
    C1,
    C2,
    C3,
    C4,
    C4Prime,
    C1Pp,
    C2Pp,
    C3Pp,
    Eta1,
    Eta2,
}

impl ConditionId {
    pub const ALL: [ConditionId; 10] = [
        ConditionId::C1,
        ConditionId::C2,
        ConditionId::C3,
        ConditionId::C4,
        ConditionId::C4Prime,
        ConditionId::C1Pp,
        ConditionId::C2Pp,
        ConditionId::C3Pp,
        ConditionId::Eta1,
        ConditionId::Eta2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionId::C1 => "C1",
            ConditionId::C2 => "C2",
            ConditionId::C3 => "C3",
            ConditionId::C4 => "C4",
            ConditionId::C4Prime => "C4'",
            ConditionId::C1Pp => "C1''",
            ConditionId::C2Pp => "C2''",
            ConditionId::C3Pp => "C3''",
            ConditionId::Eta1 => "ETA1",
            ConditionId::Eta2 => "ETA2",
        }
    }

    /// Whether the quantity depends on a truncation level.
    pub fn uses_eps(self) -> bool {
        !matches!(self, ConditionId::C4 | ConditionId::C4Prime | ConditionId::Eta2)
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('"', "''");
        let id = match norm.as_str() {
            "C1" => ConditionId::C1,
            "C2" => ConditionId::C2,
            "C3" => ConditionId::C3,
            "C4" => ConditionId::C4,
            "C4'" | "C4P" | "C4PRIME" => ConditionId::C4Prime,
            "C1''" | "C1PP" => ConditionId::C1Pp,
            "C2''" | "C2PP" => ConditionId::C2Pp,
            "C3''" | "C3PP" => ConditionId::C3Pp,
            "ETA1" => ConditionId::Eta1,
            "ETA2" => ConditionId::Eta2,
            _ => return Err(Error::config(format!("unknown condition {s:?}"))),
        };
        Ok(id)
    }
}

impl Serialize for ConditionId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ConditionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "decreasing-toward-0")]
    DecreasingTowardZero,
    #[serde(rename = "stagnant")]
    Stagnant,
    #[serde(rename = "increasing")]
    Increasing,
    #[serde(rename = "converging-to-1")]
    ConvergingToOne,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::DecreasingTowardZero => "decreasing-toward-0",
            Verdict::Stagnant => "stagnant",
            Verdict::Increasing => "increasing",
            Verdict::ConvergingToOne => "converging-to-1",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "decreasing-toward-0" => Ok(Verdict::DecreasingTowardZero),
            "stagnant" => Ok(Verdict::Stagnant),
            "increasing" => Ok(Verdict::Increasing),
            "converging-to-1" => Ok(Verdict::ConvergingToOne),
            other => Err(Error::config(format!("unknown verdict {other:?}"))),
        }
    }
}

/// `G_k(i, j) = Z_ik Z_jk H(x_i, x_j)` and its centered counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConditionalSample {
    pub g_k_value: f64,
    pub g_tilde_value: f64,
}

impl PairConditionalSample {
    pub fn new(kernel: &BoundKernel, xi: f64, xj: f64, z_ik: bool, z_jk: bool) -> Result<Self> {
        if !(z_ik && z_jk) {
            return Ok(PairConditionalSample {
                g_k_value: 0.0,
                g_tilde_value: 0.0,
            });
        }
        Ok(PairConditionalSample {
            g_k_value: kernel.pair_conditional()?(xi, xj),
            g_tilde_value: kernel.centered_pair_conditional()?(xi, xj),
        })
    }
}

/// A kernel bound at row `n` together with its normalization.
#[derive(Debug, Clone)]
pub struct ConditionSetup {
    pub kernel: BoundKernel,
    pub n: usize,
    pub p: f64,
    pub moments: MomentSet,
    theta: f64,
}

impl ConditionSetup {
    /// Binds `kernel` at row `n`, takes exact moments when available and MC
    /// moments otherwise.
    pub fn new(kernel: &KernelSpec, dist: &DistributionSpec, n: usize, p: f64, seeds: &SeedPolicy) -> Result<Self> {
        let policy = InnerMcPolicy {
            seed: seeds.derive("inner-mc", n as u64),
            ..InnerMcPolicy::default()
        };
        let bound = kernel.at_row(n).bind_with(dist, Some(policy))?;
        let moments = moments_auto(&bound, n, p, MOMENT_MC, seeds.derive("moments", n as u64))?;
        ConditionSetup::with_moments(bound, moments)
    }

    pub fn with_moments(kernel: BoundKernel, moments: MomentSet) -> Result<Self> {
        let theta = moments.theta()?;
        Ok(ConditionSetup {
            kernel,
            n: moments.n,
            p: moments.p,
            moments,
            theta,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta2(&self) -> f64 {
        self.moments.theta2
    }
}

fn check_m(m: usize) -> Result<()> {
    if m < 100 {
        return Err(Error::config(format!("condition estimators need m >= 100, got {m}")));
    }
    Ok(())
}

fn replicate_mean<F>(m: usize, seeds: &SeedPolicy, label: &str, f: F) -> Result<Estimate>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    check_m(m)?;
    let values: Vec<f64> = (0..m as u64)
        .into_par_iter()
        .map(|r| f(&mut seeds.rng(label, r)))
        .collect();
    Ok(Estimate::from_samples(&values))
}

#[inline]
fn truncated(v: f64, weight: f64, threshold: f64) -> f64 {
    if v.abs() >= threshold {
        weight
    } else {
        0.0
    }
}

/// `(1/(n theta^2)) E[S^2 1{|S| >= eps theta n}]` with `S = sum_{j>=2} Psi_j(1)`.
pub fn estimate_c1(setup: &ConditionSetup, eps: f64, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let g = setup.kernel.conditional_mean()?;
    let (n, p, theta) = (setup.n, setup.p, setup.theta);
    let others = Binomial::new((n - 1) as u64, p).map_err(|e| Error::config(e.to_string()))?;
    let dist = setup.kernel.dist();
    let threshold = eps * theta * n as f64;
    let scale = 1.0 / (n as f64 * theta * theta);
    replicate_mean(m, seeds, "C1", |rng| {
        let x = dist.sample(rng);
        let k = others.sample(rng) as f64;
        let s = k * g(x);
        truncated(s, s * s * scale, threshold)
    })
}

/// `theta^-2 E[Phi~(1,2)^2 1{|Phi~(1,2)| >= eps theta n}]`.
pub fn estimate_c2(setup: &ConditionSetup, eps: f64, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let view = centered_view(&setup.kernel)?;
    let (n, p, theta) = (setup.n, setup.p, setup.theta);
    let dist = setup.kernel.dist();
    let threshold = eps * theta * n as f64;
    replicate_mean(m, seeds, "C2", |rng| {
        let (x, y) = (dist.sample(rng), dist.sample(rng));
        let z = rng.random_bool(p);
        let t = if z { view.evaluate_tilde(x, y) } else { 0.0 };
        truncated(t, t * t / (theta * theta), threshold)
    })
}

/// `p theta^-2 E[H~(1,1) 1{|H~(1,1)| >= eps theta^2 n / p}]`.
pub fn estimate_c3(setup: &ConditionSetup, eps: f64, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let ht = setup.kernel.centered_pair_conditional()?;
    diagonal_truncated(setup, eps, m, seeds, "C3", move |x| ht(x, x))
}

/// `p theta^-2 E[H(1,1) 1{|H(1,1)| >= eps theta^2 n / p}]`.
pub fn estimate_c3pp(setup: &ConditionSetup, eps: f64, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let hh = setup.kernel.pair_conditional()?;
    diagonal_truncated(setup, eps, m, seeds, "C3''", move |x| hh(x, x))
}

fn diagonal_truncated(
    setup: &ConditionSetup,
    eps: f64,
    m: usize,
    seeds: &SeedPolicy,
    label: &str,
    diag: impl Fn(f64) -> f64 + Sync,
) -> Result<Estimate> {
    let (n, p) = (setup.n, setup.p);
    let theta2 = setup.theta2();
    let dist = setup.kernel.dist();
    let threshold = eps * theta2 * n as f64 / p;
    replicate_mean(m, seeds, label, |rng| {
        let d = diag(dist.sample(rng));
        truncated(d, p * d / theta2, threshold)
    })
}

/// `theta^-4 E[G_1(2,3)^2]`, with both dilution bits sampled.
pub fn estimate_c4(setup: &ConditionSetup, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let hh = setup.kernel.pair_conditional()?;
    pair_conditional_square(setup, m, seeds, "C4", hh)
}

/// `theta^-4 E[G~_1(2,3)^2]`.
pub fn estimate_c4prime(setup: &ConditionSetup, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let ht = setup.kernel.centered_pair_conditional()?;
    pair_conditional_square(setup, m, seeds, "C4'", ht)
}

fn pair_conditional_square(
    setup: &ConditionSetup,
    m: usize,
    seeds: &SeedPolicy,
    label: &str,
    pair: crate::kernels::PairFn,
) -> Result<Estimate> {
    let p = setup.p;
    let theta4 = setup.theta2() * setup.theta2();
    let dist = setup.kernel.dist();
    replicate_mean(m, seeds, label, |rng| {
        let (x2, x3) = (dist.sample(rng), dist.sample(rng));
        let z12 = rng.random_bool(p);
        let z13 = rng.random_bool(p);
        if z12 && z13 {
            let v = pair(x2, x3);
            v * v / theta4
        } else {
            0.0
        }
    })
}

/// `n^2 theta^-2 E[Psi_2(1)^2 1{|Psi_2(1)| >= eps theta}]`.
pub fn estimate_c1pp(setup: &ConditionSetup, eps: f64, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let g = setup.kernel.conditional_mean()?;
    let (n, p, theta) = (setup.n as f64, setup.p, setup.theta);
    let dist = setup.kernel.dist();
    replicate_mean(m, seeds, "C1''", |rng| {
        let x = dist.sample(rng);
        let z = rng.random_bool(p);
        let psi = if z { g(x) } else { 0.0 };
        truncated(psi, n * n * psi * psi / (theta * theta), eps * theta)
    })
}

/// `theta^-2 E[Phi(1,2)^2 1{|Phi(1,2)| >= eps theta n}]`.
pub fn estimate_c2pp(setup: &ConditionSetup, eps: f64, m: usize, seeds: &SeedPolicy) -> Result<Estimate> {
    let kernel = &setup.kernel;
    let (n, p, theta) = (setup.n, setup.p, setup.theta);
    let threshold = eps * theta * n as f64;
    replicate_mean(m, seeds, "C2''", |rng| {
        let (x, y) = (kernel.dist().sample(rng), kernel.dist().sample(rng));
        let z = rng.random_bool(p);
        let phi = if z { kernel.evaluate(x, y) } else { 0.0 };
        truncated(phi, phi * phi / (theta * theta), threshold)
    })
}

/// Dispatch for the un-tilded conditions.
pub fn estimate_cdoubleprime(
    condition: ConditionId,
    setup: &ConditionSetup,
    eps: f64,
    m: usize,
    seeds: &SeedPolicy,
) -> Result<Estimate> {
    match condition {
        ConditionId::C1Pp => estimate_c1pp(setup, eps, m, seeds),
        ConditionId::C2Pp => estimate_c2pp(setup, eps, m, seeds),
        ConditionId::C3Pp => estimate_c3pp(setup, eps, m, seeds),
        other => Err(Error::config(format!("{other} is not one of C1'', C2'', C3''"))),
    }
}

// ---------------------------------------------------------------------------
// eta_2
// ---------------------------------------------------------------------------

/// Precomputed closed-form pieces of the conditional variance sum.
struct Eta2Forms {
    /// `E[g^2]`
    g2: f64,
    h_tilde: crate::kernels::PairFn,
    rank_one: Option<(f64, UnaryFn)>,
    remainder_cross: UnaryFn,
    has_projection: bool,
}

impl Eta2Forms {
    fn new(setup: &ConditionSetup) -> Result<Self> {
        let k = &setup.kernel;
        if !k.is_exact() {
            return Err(Error::unsupported(format!(
                "eta_2 needs closed-form conditional structure; kernel {} under {} has none",
                k.name(),
                k.dist()
            )));
        }
        let (_, g2) = k.second_moments()?;
        let rank_one = k.centered_rank_one().map(|ro| (ro.coefficient, ro.factor));
        if rank_one.is_none() && setup.n > ETA2_GENERIC_MAX_N {
            return Err(Error::unsupported(format!(
                "eta_2 for a non-factorized H~ is limited to n <= {ETA2_GENERIC_MAX_N} (got {})",
                setup.n
            )));
        }
        Ok(Eta2Forms {
            g2,
            h_tilde: k.centered_pair_conditional()?,
            rank_one,
            remainder_cross: k.projection_remainder_cross()?,
            has_projection: !k.degenerate_flag(),
        })
    }
}

/// `sum_i E[xi_i^2 | past]` for one realization, where the past of index `i`
/// holds `x_1..x_{i-1}` and every dilution bit touching an earlier index.
pub fn eta2_of(setup: &ConditionSetup, x: &[f64], z: &DilutionGraph) -> Result<f64> {
    let forms = Eta2Forms::new(setup)?;
    Ok(eta2_with(&forms, setup, x, z))
}

fn eta2_with(forms: &Eta2Forms, setup: &ConditionSetup, x: &[f64], z: &DilutionGraph) -> f64 {
    let (n, p) = (setup.n, setup.p);
    let lower = z.lower_neighbors();
    let diag: Vec<f64> = x.iter().map(|&v| (forms.h_tilde)(v, v)).collect();
    let factor: Option<Vec<f64>> = forms.rank_one.as_ref().map(|(_, f)| x.iter().map(|&v| f(v)).collect());
    let q: Vec<f64> = if forms.has_projection {
        x.iter().map(|&v| (forms.remainder_cross)(v)).collect()
    } else {
        Vec::new()
    };

    let mut total = NeumaierSum::new();
    for (i, earlier) in lower.iter().enumerate() {
        let k = earlier.len() as f64;
        let later = (n - 1 - i) as f64;
        let later_mean = later * p;
        // squared projection weight
        if forms.g2 != 0.0 {
            total.add(forms.g2 * (k * (k + later_mean) + later_mean * (k + (later - 1.0) * p + 1.0)));
        }
        // diagonal remainder terms
        for &j in earlier {
            total.add(diag[j]);
        }
        // off-diagonal remainder terms
        match (&forms.rank_one, &factor) {
            (Some((c, _)), Some(f)) => {
                if *c != 0.0 {
                    let (mut s, mut s2) = (0.0, 0.0);
                    for &j in earlier {
                        s += f[j];
                        s2 += f[j] * f[j];
                    }
                    total.add(c * (s * s - s2));
                }
            }
            _ => {
                let mut off = 0.0;
                for (a, &j) in earlier.iter().enumerate() {
                    for &l in &earlier[a + 1..] {
                        off += (forms.h_tilde)(x[j], x[l]);
                    }
                }
                total.add(2.0 * off);
            }
        }
        // projection x remainder cross terms
        if forms.has_projection {
            let qs: f64 = earlier.iter().map(|&j| q[j]).sum();
            total.add(2.0 * (k + later_mean) * qs);
        }
    }
    let nt = n as f64 * setup.theta;
    total.total() / (nt * nt)
}

/// `m` independent draws of `eta_2`, one fresh realization each.
pub fn estimate_eta2(setup: &ConditionSetup, m: usize, seeds: &SeedPolicy) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::config("eta_2 sample needs at least 2 replicates"));
    }
    let forms = Eta2Forms::new(setup)?;
    let dist = setup.kernel.dist();
    Ok((0..m as u64)
        .into_par_iter()
        .map(|r| {
            let (x, z) = sample_replicate(setup.n, dist, setup.p, &mut seeds.rng("ETA2", r));
            eta2_with(&forms, setup, &x, &z)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// eta_1
// ---------------------------------------------------------------------------

/// Upper bound `S_1 + T_1` on `E[eta_1]`: the truncated second moments of the
/// projection and remainder parts of each `xi_i` at level `eps / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eta1Bound {
    pub projection: Estimate,
    pub remainder: Estimate,
    pub total: Estimate,
}

pub fn estimate_eta1_mean(setup: &ConditionSetup, eps: f64, m: usize, seeds: &SeedPolicy) -> Result<Eta1Bound> {
    check_m(m)?;
    if !setup.kernel.is_exact() {
        return Err(Error::unsupported(format!(
            "the eta_1 bound needs a closed-form conditional mean; kernel {} has none",
            setup.kernel.name()
        )));
    }
    let view = centered_view(&setup.kernel)?;
    let n = setup.n;
    let nt = n as f64 * setup.theta;
    let threshold = eps * nt / 2.0;
    let scale = 4.0 / (nt * nt);
    let dist = setup.kernel.dist();
    let terms: Vec<(f64, f64)> = (0..m as u64)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let (x, z) = sample_replicate(n, dist, setup.p, &mut seeds.rng("ETA1", r));
            let parts = hoeffding_parts_with(&x, &z, &view)?;
            let sq = |v: &[f64]| -> f64 {
                v.iter()
                    .map(|&s| truncated(s, s * s, threshold))
                    .collect::<NeumaierSum>()
                    .total()
                    * scale
            };
            Ok((sq(&parts.psi_part), sq(&parts.phi_tilde_part)))
        })
        .collect::<Result<_>>()?;
    let (a, b): (Vec<f64>, Vec<f64>) = terms.iter().copied().unzip();
    let sum: Vec<f64> = terms.iter().map(|(s, t)| s + t).collect();
    Ok(Eta1Bound {
        projection: Estimate::from_samples(&a),
        remainder: Estimate::from_samples(&b),
        total: Estimate::from_samples(&sum),
    })
}

// ---------------------------------------------------------------------------
// C4 => C4'
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C4Implication {
    pub c4: Estimate,
    pub c4prime: Estimate,
    /// `25 C4 + 50 / (np)^2 + 50 / (np)`.
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Checks `C4' <= 25 C4 + 50/(np)^2 + 50/(np) + 5 * combined SE`.
pub fn verify_c4_implies_c4prime(c4: Estimate, c4prime: Estimate, n: usize, p: f64) -> C4Implication {
    let np = n as f64 * p;
    let bound = 25.0 * c4.value + 50.0 / (np * np) + 50.0 / np;
    let slack = 5.0 * c4prime.se.hypot(25.0 * c4.se);
    C4Implication {
        c4,
        c4prime,
        bound,
        slack,
        holds: c4prime.value <= bound + slack,
    }
}

// ---------------------------------------------------------------------------
// Trends and reports
// ---------------------------------------------------------------------------

fn combined_se(a: &Estimate, b: &Estimate) -> f64 {
    a.se.hypot(b.se)
}

/// Verdict for a condition sequence along an increasing `n` grid.
pub fn trend_verdict(values: &[Estimate]) -> Verdict {
    let (Some(first), Some(last)) = (values.first(), values.last()) else {
        return Verdict::Stagnant;
    };
    let non_increasing = values
        .windows(2)
        .all(|w| w[1].value <= w[0].value + 2.0 * combined_se(&w[0], &w[1]));
    let small = last.value < TREND_FLOOR;
    let dropped = last.value < first.value / 4.0 || small;
    let resolved = last.value < 4.0 * last.se || small;
    if non_increasing && dropped && resolved {
        Verdict::DecreasingTowardZero
    } else if last.value > first.value + 2.0 * combined_se(first, last) {
        Verdict::Increasing
    } else {
        Verdict::Stagnant
    }
}

/// `eta_2` verdict from per-grid-point sample means and sample variances.
pub fn eta2_verdict(means: &[Estimate], variances: &[Estimate]) -> Verdict {
    let (Some(last_mean), Some(first_var), Some(last_var)) = (means.last(), variances.first(), variances.last()) else {
        return Verdict::Stagnant;
    };
    let centered = (last_mean.value - 1.0).abs() <= 4.0 * last_mean.se;
    let shrinking = last_var.value < first_var.value / 2.0
        && variances.windows(2).all(|w| w[1].value < 1.25 * w[0].value);
    if centered && shrinking {
        Verdict::ConvergingToOne
    } else {
        Verdict::Stagnant
    }
}

/// Estimates of one condition over an `n` grid and (for truncated conditions)
/// an `eps` grid. `estimates[k][e]` is grid point `k`, threshold `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition_id: ConditionId,
    pub n_grid: Vec<usize>,
    pub p_grid: Vec<f64>,
    /// Empty for conditions without a truncation level.
    pub eps_grid: Vec<f64>,
    pub estimates: Vec<Vec<Estimate>>,
    pub verdicts: Vec<Verdict>,
    /// Set when the estimate is an upper bound rather than the quantity itself.
    pub upper_bound: bool,
    /// Sample variances of `eta_2` per grid point.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta2_variance: Option<Vec<Estimate>>,
}

impl ConditionReport {
    pub fn column(&self, e: usize) -> Vec<Estimate> {
        self.estimates.iter().map(|row| row[e]).collect()
    }

    pub fn columns(&self) -> usize {
        self.eps_grid.len().max(1)
    }

    /// Verdict for the column with this threshold (or the single column).
    pub fn verdict_for(&self, eps: Option<f64>) -> Option<Verdict> {
        match eps {
            None => self.verdicts.first().copied(),
            Some(e) => self
                .eps_grid
                .iter()
                .position(|&v| v == e)
                .and_then(|k| self.verdicts.get(k).copied()),
        }
    }
}

/// Sample sizes for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSizes {
    pub m: usize,
    pub eta2_m: usize,
}

impl Default for SweepSizes {
    fn default() -> Self {
        SweepSizes {
            m: 100_000,
            eta2_m: 400,
        }
    }
}

/// Runs the requested conditions over pre-built grid setups (one per `n`, in
/// increasing order). Reports come back in request order.
pub fn sweep_conditions(
    ids: &[ConditionId],
    setups: &[ConditionSetup],
    eps_grid: &[f64],
    sizes: SweepSizes,
    seeds: &SeedPolicy,
) -> Result<Vec<ConditionReport>> {
    if setups.windows(2).any(|w| w[1].n <= w[0].n) {
        return Err(Error::config("n grid must be strictly increasing"));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::config("eps grid values must be positive"));
    }
    ids.iter().map(|&id| sweep_one(id, setups, eps_grid, sizes, seeds)).collect()
}

fn sweep_one(
    id: ConditionId,
    setups: &[ConditionSetup],
    eps_grid: &[f64],
    sizes: SweepSizes,
    seeds: &SeedPolicy,
) -> Result<ConditionReport> {
    let cell_seeds = seeds.child(id.as_str(), 0);
    let eps_used: Vec<f64> = if id.uses_eps() { eps_grid.to_vec() } else { Vec::new() };
    let mut estimates = Vec::with_capacity(setups.len());
    let mut eta2_variance = Vec::new();
    for setup in setups {
        let row = match id {
            ConditionId::C4 => vec![estimate_c4(setup, sizes.m, &cell_seeds)?],
            ConditionId::C4Prime => vec![estimate_c4prime(setup, sizes.m, &cell_seeds)?],
            ConditionId::Eta2 => {
                let sample = estimate_eta2(setup, sizes.eta2_m, &cell_seeds)?;
                eta2_variance.push(sample_variance_with_se(&sample));
                vec![Estimate::from_samples(&sample)]
            }
            _ => eps_used
                .iter()
                .map(|&eps| match id {
                    ConditionId::C1 => estimate_c1(setup, eps, sizes.m, &cell_seeds),
                    ConditionId::C2 => estimate_c2(setup, eps, sizes.m, &cell_seeds),
                    ConditionId::C3 => estimate_c3(setup, eps, sizes.m, &cell_seeds),
                    ConditionId::C1Pp | ConditionId::C2Pp | ConditionId::C3Pp => {
                        estimate_cdoubleprime(id, setup, eps, sizes.m, &cell_seeds)
                    }
                    ConditionId::Eta1 => {
                        // realizations are O(n^2); scale the replicate count down
                        let m = (sizes.m / setup.n).max(100);
                        estimate_eta1_mean(setup, eps, m, &cell_seeds).map(|b| b.total)
                    }
                    _ => unreachable!("eps-free conditions handled above"),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        log::debug!("{id} n={} -> {:?}", setup.n, row);
        estimates.push(row);
    }
    let columns = eps_used.len().max(1);
    let verdicts = (0..columns)
        .map(|e| {
            let col: Vec<Estimate> = estimates.iter().map(|row| row[e]).collect();
            if id == ConditionId::Eta2 {
                eta2_verdict(&col, &eta2_variance)
            } else {
                trend_verdict(&col)
            }
        })
        .collect();
    Ok(ConditionReport {
        condition_id: id,
        n_grid: setups.iter().map(|s| s.n).collect(),
        p_grid: setups.iter().map(|s| s.p).collect(),
        eps_grid: eps_used,
        estimates,
        verdicts,
        upper_bound: id == ConditionId::Eta1,
        eta2_variance: (id == ConditionId::Eta2).then_some(eta2_variance),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{additive_kernel, product_kernel, sign_kernel, zero_kernel};

    fn setup(k: &KernelSpec, d: &DistributionSpec, n: usize, p: f64) -> ConditionSetup {
        ConditionSetup::new(k, d, n, p, &SeedPolicy::new(1)).unwrap()
    }

    fn est(v: f64, se: f64) -> Estimate {
        Estimate { value: v, se }
    }

    #[test]
    fn condition_ids_roundtrip() {
        for id in ConditionId::ALL {
            assert_eq!(id.as_str().parse::<ConditionId>().unwrap(), id);
        }
        assert_eq!("c4p".parse::<ConditionId>().unwrap(), ConditionId::C4Prime);
        assert!("C5".parse::<ConditionId>().is_err());
    }

    #[test]
    fn zero_kernel_is_degenerate_normalization() {
        let r = ConditionSetup::new(&zero_kernel(), &DistributionSpec::Rademacher, 10, 0.5, &SeedPolicy::new(1));
        assert!(matches!(r, Err(Error::DegenerateNormalization { .. })));
    }

    #[test]
    fn degenerate_and_cutoff_cases_are_exactly_zero() {
        let seeds = SeedPolicy::new(2);
        let s = setup(&sign_kernel(), &DistributionSpec::Rademacher, 200, 0.5);
        assert_eq!(estimate_c1(&s, 0.01, 1000, &seeds).unwrap().value, 0.0);
        assert_eq!(estimate_c1pp(&s, 0.01, 1000, &seeds).unwrap().value, 0.0);
        // |h~| <= 1 < eps theta n
        assert_eq!(estimate_c2(&s, 0.5, 1000, &seeds).unwrap(), Estimate::exact(0.0));
        assert_eq!(estimate_c2pp(&s, 0.5, 1000, &seeds).unwrap(), Estimate::exact(0.0));
        assert_eq!(estimate_c3(&s, 0.5, 1000, &seeds).unwrap(), Estimate::exact(0.0));

        let a = setup(&additive_kernel(), &DistributionSpec::Rademacher, 50, 0.5);
        assert_eq!(estimate_c4prime(&a, 1000, &seeds).unwrap(), Estimate::exact(0.0));
        type Truncated = fn(&ConditionSetup, f64, usize, &SeedPolicy) -> Result<Estimate>;
        let fs: [Truncated; 4] = [estimate_c1, estimate_c2, estimate_c1pp, estimate_c2pp];
        for f in fs {
            assert_eq!(f(&a, 1e9, 500, &seeds).unwrap(), Estimate::exact(0.0));
        }
        assert!(estimate_c4(&a, 50, &seeds).is_err());
    }

    #[test]
    fn c4_additive_rademacher_matches_closed_value() {
        let (n, p) = (40, 0.3);
        let s = setup(&additive_kernel(), &DistributionSpec::Rademacher, n, p);
        let exact = 2.0 / (n as f64 * p + 1.0).powi(2);
        let e = estimate_c4(&s, 200_000, &SeedPolicy::new(3)).unwrap();
        assert!(e.within(exact, 4.0), "{e:?} vs {exact}");
    }

    #[test]
    fn c4prime_equals_c4_for_degenerate_kernels() {
        let seeds = SeedPolicy::new(4);
        let s = setup(&product_kernel(), &DistributionSpec::StandardNormal, 30, 0.7);
        let a = estimate_c4(&s, 20_000, &seeds).unwrap();
        let b = estimate_c4prime(&s, 20_000, &seeds).unwrap();
        assert!((a.value - b.value).abs() <= 4.0 * a.se.max(b.se) + 1e-12);
    }

    #[test]
    fn eta2_of_sign_kernel_is_scaled_sum_of_squares() {
        // for the sign kernel on Rademacher rows eta_2 = sum_i S_i^2 / (n^2 theta^2)
        // with S_i the signed count over earlier neighbors
        let s = setup(&sign_kernel(), &DistributionSpec::Rademacher, 30, 0.4);
        let seeds = SeedPolicy::new(5);
        for r in 0..5 {
            let (x, z) = sample_replicate(30, &DistributionSpec::Rademacher, 0.4, &mut seeds.rng("e", r));
            let mut direct = 0.0;
            for i in 0..30 {
                let si: f64 = (0..i).filter(|&j| z.get(i, j)).map(|j| x[j]).sum();
                direct += si * si;
            }
            direct /= 900.0 * s.theta2();
            assert!((eta2_of(&s, &x, &z).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn eta2_needs_exact_forms() {
        let opaque = KernelSpec::new("opaque", |x, y| x * y);
        let policy = InnerMcPolicy { m_inner: 64, seed: 1 };
        let b = opaque.bind_with(&DistributionSpec::StandardNormal, Some(policy)).unwrap();
        let m = crate::moments::moments_mc_bound(&b, 10, 1.0, 1000, 2).unwrap();
        let s = ConditionSetup::with_moments(b, m).unwrap();
        assert!(matches!(estimate_eta2(&s, 10, &SeedPolicy::new(1)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn verdict_rules() {
        let dec = [est(2.0, 0.01), est(1.0, 0.01), est(0.2, 0.01), est(0.0, 0.0)];
        assert_eq!(trend_verdict(&dec), Verdict::DecreasingTowardZero);
        assert_eq!(trend_verdict(&[Estimate::exact(0.0); 5]), Verdict::DecreasingTowardZero);
        let flat = [est(4.0, 0.05), est(4.02, 0.05), est(3.97, 0.05)];
        assert_eq!(trend_verdict(&flat), Verdict::Stagnant);
        let up = [est(1.0, 0.01), est(2.0, 0.01), est(3.0, 0.01)];
        assert_eq!(trend_verdict(&up), Verdict::Increasing);
        // a bump beyond the slack breaks monotonicity
        let bump = [est(2.0, 0.01), est(2.5, 0.01), est(0.0, 0.0)];
        assert_eq!(trend_verdict(&bump), Verdict::Stagnant);

        let means = [est(0.98, 0.01), est(0.995, 0.005)];
        let vars = [est(0.02, 0.001), est(0.005, 0.0005)];
        assert_eq!(eta2_verdict(&means, &vars), Verdict::ConvergingToOne);
        let vars = [est(0.5, 0.01), est(0.5, 0.01)];
        assert_eq!(eta2_verdict(&means, &vars), Verdict::Stagnant);
    }

    #[test]
    fn c4_implication_examples() {
        let r = verify_c4_implies_c4prime(est(0.01, 0.001), Estimate::exact(0.0), 100, 0.5);
        assert!(r.holds);
        let r = verify_c4_implies_c4prime(est(4.0, 0.02), est(4.0, 0.02), 500, 1.0);
        assert!(r.holds && r.bound > 100.0);
    }

    #[test]
    fn pair_conditional_sample_vanishes_without_both_bits() {
        let b = product_kernel().bind(&DistributionSpec::StandardNormal).unwrap();
        let s = PairConditionalSample::new(&b, 1.3, -0.4, true, false).unwrap();
        assert_eq!((s.g_k_value, s.g_tilde_value), (0.0, 0.0));
        let s = PairConditionalSample::new(&b, 1.3, -0.4, true, true).unwrap();
        assert_eq!(s.g_k_value, 1.3 * -0.4);
        assert_eq!(s.g_tilde_value, s.g_k_value);
    }
}
