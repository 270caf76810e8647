//! Replication engine: batches of the (standardized) statistic, distribution
//! tests against the limit laws, condition sweeps and the enumeration oracle.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{sweep_conditions, ConditionReport, ConditionSetup, SweepSizes};
use crate::decomposition::ustat_with_count;
use crate::error::{Error, Result};
use crate::harness::config::{parse_expectation_key, ExperimentConfig, Standardization};
use crate::harness::ks::{ks_against, TargetLaw};
use crate::kernels::{product_kernel, KernelSpec};
use crate::moments::{enumerate_exact, moments_auto, moments_mc_bound, MomentSet, Outcome, Provenance};
use crate::sampling::{sample_replicate, DistributionSpec, SeedPolicy};
use crate::stats::pairs;

/// What each replicate records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `U / sqrt(Var U)` under the given variance source.
    Standardized(Standardization),
    /// `n U`, the scale of the degenerate limit.
    TimesN,
}

impl std::fmt::Display for Statistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Statistic::Standardized(Standardization::Exact) => f.write_str("standardized_exact"),
            Statistic::Standardized(Standardization::Asymptotic) => f.write_str("standardized_asymptotic"),
            Statistic::Standardized(Standardization::Mc) => f.write_str("standardized_mc"),
            Statistic::TimesN => f.write_str("n_times_u"),
        }
    }
}

/// One batch of `R` replicate statistics at fixed `(n, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedSample {
    pub n: usize,
    pub p: f64,
    pub statistic: Statistic,
    /// Each raw `U` is multiplied by this factor.
    pub scale: f64,
    /// Source of the moments behind `scale`, if any were used.
    pub provenance: Option<Provenance>,
    pub values: Vec<f64>,
    /// Total kernel evaluations (active pairs over all replicates).
    pub evaluations: u64,
}

/// Everything a batch needs besides the per-replicate seeds.
#[derive(Debug, Clone)]
pub struct BatchSpec<'a> {
    pub kernel: &'a KernelSpec,
    pub dist: &'a DistributionSpec,
    pub n: usize,
    pub p: f64,
    pub replications: usize,
    pub statistic: Statistic,
    pub budget: f64,
    pub moment_m: usize,
}

/// Expected kernel evaluations of a batch, `R binom(n, 2) p`.
pub fn expected_evaluations(n: usize, p: f64, replications: usize) -> f64 {
    replications as f64 * pairs(n) * p
}

/// `R` independent replicates; replicate `r` draws its row and graph from
/// `seeds.rng("replicate", r)`.
pub fn replicate_batch(spec: &BatchSpec<'_>, seeds: &SeedPolicy) -> Result<StandardizedSample> {
    if spec.replications < 1 {
        return Err(Error::config("replications must be at least 1"));
    }
    let required = expected_evaluations(spec.n, spec.p, spec.replications);
    if required > spec.budget {
        return Err(Error::Budget {
            required,
            budget: spec.budget,
        });
    }
    let row_kernel = spec.kernel.at_row(spec.n);
    let (scale, provenance) = match spec.statistic {
        Statistic::TimesN => (spec.n as f64, None),
        Statistic::Standardized(how) => {
            let bound = row_kernel.bind(spec.dist)?;
            let mseed = seeds.derive("moments", spec.n as u64);
            let m = match how {
                Standardization::Mc => moments_mc_bound(&bound, spec.n, spec.p, spec.moment_m, mseed)?,
                _ => moments_auto(&bound, spec.n, spec.p, spec.moment_m, mseed)?,
            };
            m.theta()?;
            let var = match how {
                Standardization::Asymptotic => m.asymptotic_variance(),
                _ => m.var_u_exact,
            };
            if var.is_nan() || var <= 0.0 {
                return Err(Error::DegenerateNormalization { theta2: m.theta2 });
            }
            (1.0 / var.sqrt(), Some(m.provenance))
        }
    };
    let results: Vec<(f64, usize)> = (0..spec.replications as u64)
        .into_par_iter()
        .map(|r| {
            let (x, z) = sample_replicate(spec.n, spec.dist, spec.p, &mut seeds.rng("replicate", r));
            ustat_with_count(&x, &z, &row_kernel)
        })
        .collect::<Result<_>>()?;
    Ok(StandardizedSample {
        n: spec.n,
        p: spec.p,
        statistic: spec.statistic,
        scale,
        provenance,
        values: results.iter().map(|(u, _)| u * scale).collect(),
        evaluations: results.iter().map(|&(_, e)| e as u64).sum(),
    })
}

fn batch_seeds(cfg: &ExperimentConfig, n: usize) -> SeedPolicy {
    cfg.seeds().child("batch", n as u64)
}

/// Standardized statistics at grid point `n` of the configuration.
pub fn replicate_standardized(cfg: &ExperimentConfig, n: usize) -> Result<StandardizedSample> {
    let kernel = cfg.kernel_spec()?;
    let dist = cfg.distribution_spec()?;
    let spec = BatchSpec {
        kernel: &kernel,
        dist: &dist,
        n,
        p: cfg.dilution.p_at(n)?,
        replications: cfg.replications,
        statistic: Statistic::Standardized(cfg.standardization),
        budget: cfg.budget,
        moment_m: cfg.moment_m,
    };
    replicate_batch(&spec, &batch_seeds(cfg, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistTestResult {
    pub n: usize,
    pub p: f64,
    pub replications: usize,
    pub statistic: Statistic,
    pub target: TargetLaw,
    pub ks_statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub evaluations: u64,
    pub samples: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Wall time, kept out of serialized reports.
    #[serde(skip)]
    pub runtime_ms: u128,
}

pub fn test_sample(sample: &StandardizedSample, target: TargetLaw, threshold: f64, runtime_ms: u128) -> Result<DistTestResult> {
    let ks = ks_against(&sample.values, target)?;
    Ok(DistTestResult {
        n: sample.n,
        p: sample.p,
        replications: sample.values.len(),
        statistic: sample.statistic,
        target,
        ks_statistic: ks,
        threshold,
        pass: ks < threshold,
        evaluations: sample.evaluations,
        samples: sample.values.clone(),
        note: None,
        runtime_ms,
    })
}

/// Standardized batches at every grid point tested against the configured target.
pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<Vec<DistTestResult>> {
    cfg.validate()?;
    cfg.n_grid
        .iter()
        .map(|&n| {
            let start = Instant::now();
            let sample = replicate_standardized(cfg, n)?;
            let res = test_sample(&sample, cfg.target, cfg.ks_threshold, start.elapsed().as_millis())?;
            log::info!(
                "clt n={} p={} ks={:.4} ({}) in {} ms",
                res.n,
                res.p,
                res.ks_statistic,
                if res.pass { "pass" } else { "fail" },
                res.runtime_ms
            );
            Ok(res)
        })
        .collect()
}

pub const COUNTEREXAMPLE_NOTE: &str =
    "E[nU] = 0, so the chi-square(1) limit is read in its centered form W^2 - 1";

/// `n U` for the undiluted product kernel on standard normal rows, tested
/// against the normal law and against `W^2 - 1`.
///
/// With `S = sum X_i` the statistic is exactly `(S^2 - sum X_i^2) / (n - 1)`,
/// which tends to `W^2 - 1`: the centered form of the chi-square(1) limit.
pub fn run_counterexample(cfg: &ExperimentConfig, n: usize) -> Result<(DistTestResult, DistTestResult)> {
    if n < 2 {
        return Err(Error::domain("counterexample needs n >= 2"));
    }
    if cfg.kernel != "product" || cfg.distribution.family != "standard_normal" {
        log::info!("counterexample always uses the product kernel on standard normal rows, p = 1");
    }
    let kernel = product_kernel();
    let dist = DistributionSpec::StandardNormal;
    let start = Instant::now();
    let spec = BatchSpec {
        kernel: &kernel,
        dist: &dist,
        n,
        p: 1.0,
        replications: cfg.replications,
        statistic: Statistic::TimesN,
        budget: cfg.budget,
        moment_m: cfg.moment_m,
    };
    let sample = replicate_batch(&spec, &cfg.seeds().child("counterexample", n as u64))?;
    let ms = start.elapsed().as_millis();
    let normal = test_sample(&sample, TargetLaw::StandardNormal, cfg.ks_threshold, ms)?;
    let mut shifted = test_sample(&sample, TargetLaw::Chi1Shifted, cfg.ks_threshold, ms)?;
    shifted.note = Some(COUNTEREXAMPLE_NOTE.to_string());
    Ok((normal, shifted))
}

/// Condition reports plus any mismatches against the declared expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub reports: Vec<ConditionReport>,
    pub mismatches: Vec<String>,
}

pub fn build_setups(cfg: &ExperimentConfig) -> Result<Vec<ConditionSetup>> {
    let kernel = cfg.kernel_spec()?;
    let dist = cfg.distribution_spec()?;
    let seeds = cfg.seeds().child("setup", 0);
    cfg.grid()?
        .into_iter()
        .map(|(n, p)| ConditionSetup::new(&kernel, &dist, n, p, &seeds))
        .collect()
}

pub fn run_condition_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let setups = build_setups(cfg)?;
    let c = &cfg.conditions;
    let sizes = SweepSizes {
        m: c.m,
        eta2_m: c.eta2_m,
    };
    let reports = sweep_conditions(&c.ids, &setups, &c.eps_grid, sizes, &cfg.seeds().child("conditions", 0))?;
    let mut mismatches = Vec::new();
    for (key, want) in &c.expect {
        let (id, eps) = parse_expectation_key(key)?;
        let got = reports
            .iter()
            .find(|r| r.condition_id == id)
            .and_then(|r| r.verdict_for(eps));
        match got {
            Some(v) if v == *want => {}
            Some(v) => mismatches.push(format!("{key}: expected {want}, got {v}")),
            None => mismatches.push(format!("{key}: not computed")),
        }
    }
    Ok(SweepOutcome { reports, mismatches })
}

/// Moment sets at every grid point.
pub fn run_moments(cfg: &ExperimentConfig) -> Result<Vec<MomentSet>> {
    cfg.validate()?;
    let kernel = cfg.kernel_spec()?;
    let dist = cfg.distribution_spec()?;
    cfg.grid()?
        .into_iter()
        .map(|(n, p)| {
            let bound = kernel.at_row(n).bind(&dist)?;
            let seed = cfg.seeds().derive("moments", n as u64);
            if cfg.standardization == Standardization::Mc {
                moments_mc_bound(&bound, n, p, cfg.moment_m, seed)
            } else {
                moments_auto(&bound, n, p, cfg.moment_m, seed)
            }
        })
        .collect()
}

/// One enumerated identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub quantity: String,
    pub enumerated: f64,
    pub closed_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub kernel: String,
    pub n: usize,
    pub p: f64,
    pub outcomes: f64,
    pub moments: MomentSet,
    pub checks: Vec<OracleCheck>,
}

impl OracleSummary {
    pub fn max_abs_error(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| (c.enumerated - c.closed_form).abs())
            .fold(0.0, f64::max)
    }
}

/// Exhaustive enumeration at `(n, p)` checked against the variance identities:
/// `E[Phi~^2] = beta^2 - 2 gamma^2`, `p E[h^2] = beta^2`, `p E[g^2] = gamma^2`,
/// `E[H~(1,1)] = (beta^2 - 2 gamma^2) / p`, `E[G~_2(1,1)] = beta^2 - 2 gamma^2`
/// and `Var U = binom(n, 2)^-1 (beta^2 + 2 (n - 2) p gamma^2)`.
pub fn run_oracle(kernel: &KernelSpec, dist: &DistributionSpec, n: usize, p: f64) -> Result<OracleSummary> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::config(format!("oracle needs p in (0, 1], got {p}")));
    }
    let bound = kernel.at_row(n).bind(dist)?;
    let phi_tilde_sq = |o: &Outcome<'_>| o.phi_tilde(0, 1).powi(2);
    let h_sq = |o: &Outcome<'_>| o.kernel(0, 1).powi(2);
    let g_sq = |o: &Outcome<'_>| o.g(0).powi(2);
    let h_tilde_diag = |o: &Outcome<'_>| o.h_tilde_diag(0);
    let g_tilde_diag = |o: &Outcome<'_>| o.g_tilde_diag(1, 0);
    let e = enumerate_exact(&bound, n, p, &[&phi_tilde_sq, &h_sq, &g_sq, &h_tilde_diag, &g_tilde_diag])?;
    let m = e.moments;
    let (beta2, gamma2) = (m.beta2, m.gamma2);
    let ex = &e.expectations;
    let check = |q: &str, a: f64, b: f64| OracleCheck {
        quantity: q.to_string(),
        enumerated: a,
        closed_form: b,
    };
    let checks = vec![
        check("E[phi_tilde^2] = beta2 - 2 gamma2", ex[0], beta2 - 2.0 * gamma2),
        check("p E[h^2] = beta2", p * ex[1], beta2),
        check("p E[g^2] = gamma2", p * ex[2], gamma2),
        check("E[H_tilde(1,1)] = (beta2 - 2 gamma2) / p", ex[3], (beta2 - 2.0 * gamma2) / p),
        check("E[G_tilde_2(1,1)] = beta2 - 2 gamma2", ex[4], beta2 - 2.0 * gamma2),
        check("Var U = variance_exact", m.var_u_exact, crate::moments::variance_exact(n, p, beta2, gamma2)?),
        check("E[U] = 0", e.mean_u, 0.0),
    ];
    Ok(OracleSummary {
        kernel: kernel.name().to_string(),
        n,
        p,
        outcomes: e.outcomes,
        moments: m,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::compute_ustat;
    use crate::harness::config::Dilution;
    use crate::kernels::sign_kernel;
    use crate::moments::moments_closed_form;

    fn cfg(kernel: &str, n: usize, p: f64, r: usize) -> ExperimentConfig {
        ExperimentConfig {
            kernel: kernel.to_string(),
            n_grid: vec![n],
            dilution: Dilution::Fixed { p },
            replications: r,
            seed: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_replicate_is_the_composition() {
        let c = cfg("sign", 30, 0.5, 1);
        let s = replicate_standardized(&c, 30).unwrap();
        let (x, z) = sample_replicate(
            30,
            &DistributionSpec::Rademacher,
            0.5,
            &mut batch_seeds(&c, 30).rng("replicate", 0),
        );
        let u = compute_ustat(&x, &z, &sign_kernel()).unwrap();
        let m = moments_closed_form(&sign_kernel(), &DistributionSpec::Rademacher, 30, 0.5).unwrap();
        assert_eq!(s.values, vec![u / m.var_u_exact.sqrt()]);
        assert_eq!(s.evaluations, z.edge_count() as u64);
    }

    #[test]
    fn budget_guard() {
        let mut c = cfg("sign", 100, 1.0, 100);
        c.budget = 1000.0;
        assert!(matches!(replicate_standardized(&c, 100), Err(Error::Budget { .. })));
        assert_eq!(Error::Budget { required: 1.0, budget: 0.0 }.exit_code(), 3);
    }

    #[test]
    fn zero_kernel_cannot_be_standardized() {
        let c = cfg("zero", 20, 0.5, 10);
        assert!(matches!(
            replicate_standardized(&c, 20),
            Err(Error::DegenerateNormalization { .. })
        ));
    }

    #[test]
    fn counterexample_tiny_n_runs() {
        let mut c = cfg("product", 2, 1.0, 50);
        c.distribution.family = "standard_normal".into();
        let (a, b) = run_counterexample(&c, 2).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.target, TargetLaw::StandardNormal);
    }

    #[test]
    fn oracle_identities_hold_exactly() {
        let o = run_oracle(&sign_kernel(), &DistributionSpec::Rademacher, 3, 0.5).unwrap();
        assert!(o.max_abs_error() < 1e-12, "{o:?}");
        assert_eq!(o.outcomes, 64.0);
    }
}
