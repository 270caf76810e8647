//! Experiment configuration: a TOML file with command-line overrides.
//!
//! ```toml
//! kernel = "sign"
//! n_grid = [50, 100, 200, 400, 800]
//! replications = 2000
//! seed = 7
//!
//! [distribution]
//! family = "rademacher"
//!
//! [dilution]
//! exponent = 0.3
//!
//! [conditions]
//! ids = ["C1", "C2", "C4"]
//! eps_grid = [0.01, 0.1]
//! expect = { "C4" = "stagnant" }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditions::{ConditionId, Verdict, DEFAULT_EPS_GRID, DEFAULT_N_GRID};
use crate::error::{Error, Result};
use crate::harness::ks::TargetLaw;
use crate::harness::report::OutputFormat;
use crate::kernels::{builtin_kernel, KernelSpec};
use crate::sampling::{dilution_regime, DiscreteTable, DistributionSpec, SeedPolicy};

/// Default KS decision threshold at `R = 2000`.
pub const DEFAULT_KS_THRESHOLD: f64 = 0.05;

/// Default cap on kernel evaluations per standardized batch.
pub const DEFAULT_BUDGET: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionConfig {
    pub family: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// Two-column `value, probability` table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        DistributionConfig::named("rademacher")
    }
}

impl DistributionConfig {
    pub fn named(family: &str) -> Self {
        DistributionConfig {
            family: family.to_string(),
            params: Vec::new(),
            values: None,
            probs: None,
            file: None,
        }
    }

    pub fn build(&self) -> Result<DistributionSpec> {
        if self.family != "discrete" {
            return DistributionSpec::from_name(&self.family, &self.params);
        }
        match (&self.file, &self.values, &self.probs) {
            (Some(path), None, None) => Ok(DistributionSpec::Discrete(DiscreteTable::from_file(path)?)),
            (None, Some(v), Some(q)) => DistributionSpec::discrete(v.clone(), q.clone()),
            _ => Err(Error::config(
                "discrete distribution needs either `file` or both `values` and `probs`",
            )),
        }
    }
}

/// `p` fixed or `p = n^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DilutionTable", into = "DilutionTable")]
pub enum Dilution {
    Fixed { p: f64 },
    Exponent { exponent: f64 },
}

impl Default for Dilution {
    fn default() -> Self {
        Dilution::Fixed { p: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DilutionTable {
    #[serde(skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exponent: Option<f64>,
}

impl TryFrom<DilutionTable> for Dilution {
    type Error = Error;

    fn try_from(t: DilutionTable) -> Result<Self> {
        match (t.p, t.exponent) {
            (Some(p), None) => Ok(Dilution::Fixed { p }),
            (None, Some(exponent)) => Ok(Dilution::Exponent { exponent }),
            (None, None) => Ok(Dilution::default()),
            _ => Err(Error::config("[dilution] takes either `p` or `exponent`, not both")),
        }
    }
}

impl From<Dilution> for DilutionTable {
    fn from(d: Dilution) -> Self {
        match d {
            Dilution::Fixed { p } => DilutionTable { p: Some(p), exponent: None },
            Dilution::Exponent { exponent } => DilutionTable { p: None, exponent: Some(exponent) },
        }
    }
}

impl Dilution {
    pub fn p_at(&self, n: usize) -> Result<f64> {
        match *self {
            Dilution::Fixed { p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::config(format!("dilution probability {p} outside (0, 1]")));
                }
                Ok(p)
            }
            Dilution::Exponent { exponent } => dilution_regime(n, exponent).map(|r| r.p),
        }
    }
}

/// Normalization of the statistic in standardized batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// `sqrt(var_u_exact)` from exact moments (MC moments when none exist).
    #[default]
    Exact,
    /// `sqrt(2 theta^2 / binom(n, 2))`.
    Asymptotic,
    /// `sqrt(var_u_exact)` from Monte Carlo moments.
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionsConfig {
    pub ids: Vec<ConditionId>,
    pub eps_grid: Vec<f64>,
    pub m: usize,
    pub eta2_m: usize,
    /// Expected verdicts keyed by `"C4"` or `"C2@0.01"`.
    pub expect: BTreeMap<String, Verdict>,
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        ConditionsConfig {
            ids: ConditionId::ALL.to_vec(),
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            m: 100_000,
            eta2_m: 400,
            expect: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            path: None,
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kernel: String,
    pub kernel_table: Option<PathBuf>,
    /// `h_n = n^(-b) h` when nonzero.
    pub kernel_scale_exponent: f64,
    pub distribution: DistributionConfig,
    pub n_grid: Vec<usize>,
    pub dilution: Dilution,
    pub replications: usize,
    pub seed: u64,
    pub standardization: Standardization,
    /// Replications for MC moment estimates.
    pub moment_m: usize,
    /// Maximum kernel evaluations per standardized batch.
    pub budget: f64,
    pub ks_threshold: f64,
    pub target: TargetLaw,
    pub conditions: ConditionsConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kernel: "sign".to_string(),
            kernel_table: None,
            kernel_scale_exponent: 0.0,
            distribution: DistributionConfig::default(),
            n_grid: DEFAULT_N_GRID.to_vec(),
            dilution: Dilution::default(),
            replications: 2000,
            seed: 0,
            standardization: Standardization::Exact,
            moment_m: 100_000,
            budget: DEFAULT_BUDGET,
            ks_threshold: DEFAULT_KS_THRESHOLD,
            target: TargetLaw::StandardNormal,
            conditions: ConditionsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        ExperimentConfig::from_toml_str(&text)
    }

    /// Checks the invariants; warns on slow dilution regimes.
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::config("replications must be at least 1"));
        }
        if self.n_grid.is_empty() {
            return Err(Error::config("n_grid is empty"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(format!("n_grid {:?} is not strictly increasing", self.n_grid)));
        }
        if self.n_grid[0] < 2 {
            return Err(Error::config("every n in the grid must be at least 2"));
        }
        for &n in &self.n_grid {
            let np = n as f64 * self.dilution.p_at(n)?;
            if np < 1.0 {
                return Err(Error::config(format!("n p = {np} < 1 at n = {n}")));
            }
            if np < crate::sampling::SLOW_REGIME_NP {
                log::warn!("n p = {np:.3} at n = {n}: slow regime, convergence will be poor");
            }
        }
        if !(self.ks_threshold > 0.0 && self.ks_threshold < 1.0) {
            return Err(Error::config("ks_threshold must lie in (0, 1)"));
        }
        if self.budget.is_nan() || self.budget <= 0.0 {
            return Err(Error::config("budget must be positive"));
        }
        for key in self.conditions.expect.keys() {
            parse_expectation_key(key)?;
        }
        self.distribution.build()?;
        self.kernel_spec()?;
        Ok(())
    }

    pub fn distribution_spec(&self) -> Result<DistributionSpec> {
        self.distribution.build()
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let base = match &self.kernel_table {
            Some(path) => KernelSpec::from_table_file(path)?,
            None => builtin_kernel(&self.kernel)?,
        };
        let b = self.kernel_scale_exponent;
        Ok(if b == 0.0 {
            base
        } else {
            base.with_scale(move |n| (n as f64).powf(-b))
        })
    }

    pub fn seeds(&self) -> SeedPolicy {
        SeedPolicy::new(self.seed)
    }

    pub fn grid(&self) -> Result<Vec<(usize, f64)>> {
        self.n_grid.iter().map(|&n| Ok((n, self.dilution.p_at(n)?))).collect()
    }

    /// SHA-256 over the canonical JSON form of the configuration, output
    /// settings excluded.
    pub fn config_hash(&self) -> String {
        let experiment = ExperimentConfig {
            output: OutputConfig::default(),
            ..self.clone()
        };
        let canonical = serde_json::to_string(&experiment).expect("config is always serializable");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `"C4"` or `"C2@0.01"`.
pub fn parse_expectation_key(key: &str) -> Result<(ConditionId, Option<f64>)> {
    match key.split_once('@') {
        None => Ok((key.parse()?, None)),
        Some((id, eps)) => {
            let eps: f64 = eps
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad eps in expectation key {key:?}")))?;
            Ok((id.parse()?, Some(eps)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            kernel = "additive"
            n_grid = [50, 100]
            replications = 300
            seed = 9
            standardization = "asymptotic"

            [distribution]
            family = "uniform"
            params = [1.0]

            [dilution]
            exponent = 0.5

            [conditions]
            ids = ["C1", "C4'", "ETA2"]
            eps_grid = [0.1]
            expect = { "C4'" = "decreasing-toward-0", "C1@0.1" = "stagnant" }

            [output]
            format = "json"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dilution, Dilution::Exponent { exponent: 0.5 });
        assert_eq!(cfg.conditions.ids, vec![ConditionId::C1, ConditionId::C4Prime, ConditionId::Eta2]);
        assert_eq!(cfg.distribution_spec().unwrap(), DistributionSpec::uniform(-1.0, 1.0).unwrap());
        assert_eq!(cfg.grid().unwrap()[1], (100, 0.1));
        assert_eq!(cfg.output.format, OutputFormat::Json);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str("nonsense = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[dilution]\np = 0.5\nexponent = 0.2").is_err());
        let bad_grid = ExperimentConfig::from_toml_str("n_grid = [100, 50]").unwrap();
        assert!(matches!(bad_grid.validate(), Err(Error::Config(_))));
        let tiny_np = ExperimentConfig::from_toml_str("n_grid = [10]\n[dilution]\np = 0.05").unwrap();
        assert!(tiny_np.validate().is_err());
        let r0 = ExperimentConfig::from_toml_str("replications = 0").unwrap();
        assert!(r0.validate().is_err());
        let k = ExperimentConfig::from_toml_str("kernel = \"cubic\"").unwrap();
        assert!(k.validate().is_err());
        assert!(parse_expectation_key("C2@x").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }
}
