//! Row distributions of the triangular array, the Bernoulli dilution graph,
//! and the counter-based seeding contract that makes parallel replication
//! reproducible.

use std::fmt;
use std::path::Path;

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of grid points below which `n * p` is considered a slow regime.
pub const SLOW_REGIME_NP: f64 = 10.0;

const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// A finite law given by `(value, probability)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTable {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteTable {
    /// Validates probabilities and recenters the support to mean zero
    /// (with a warning) when the supplied table is not centered.
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::config(
                "discrete table needs equally many values and probabilities (at least one)",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("discrete table values must be finite"));
        }
        if probs.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::config("discrete table probabilities must lie in [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::config(format!(
                "discrete table probabilities sum to {total}, expected 1"
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(Error::config(format!("duplicate support point {v}")));
            }
        }
        let mean: f64 = values.iter().zip(&probs).map(|(v, q)| v * q).sum();
        let values = if mean != 0.0 {
            log::warn!("discrete row law has mean {mean}; recentering support to mean zero");
            values.into_iter().map(|v| v - mean).collect()
        } else {
            values
        };
        Ok(DiscreteTable { values, probs })
    }

    /// Reads a two-column text file (`value, probability`; commas or
    /// whitespace as separators, `#` starts a comment).
    pub fn from_file(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: display.clone(),
            source,
        })?;
        let mut values = Vec::new();
        let mut probs = Vec::new();
        for (lineno, fields) in table_rows(&text) {
            if fields.len() != 2 {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: lineno,
                    message: format!("expected 2 columns, found {}", fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    path: display.clone(),
                    line: lineno,
                    message: format!("{s:?}: {e}"),
                })
            };
            values.push(parse(fields[0])?);
            probs.push(parse(fields[1])?);
        }
        DiscreteTable::new(values, probs)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Splits a comment-aware numeric text table into `(line number, fields)`.
pub(crate) fn table_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        Some((i + 1, fields))
    })
}

/// Row law `F_n` of the triangular array. Every supported family is centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    Rademacher,
    /// Uniform on `[a, b]`; must satisfy `a = -b < b`.
    Uniform { a: f64, b: f64 },
    StandardNormal,
    Discrete(DiscreteTable),
}

/// Moments of a row law that the built-in closed forms need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMoments {
    pub mean: f64,
    pub variance: f64,
    /// `E[sign X]`.
    pub sign_mean: f64,
    /// `P(X != 0) = E[sign(X)^2]`.
    pub nonzero_prob: f64,
}

impl DistributionSpec {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        let d = DistributionSpec::Uniform { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Ok(DistributionSpec::Discrete(DiscreteTable::new(values, probs)?))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::config(format!(
                        "uniform({a}, {b}): need finite a < b"
                    )));
                }
                if a + b != 0.0 {
                    return Err(Error::config(format!(
                        "uniform({a}, {b}) is not centered; row laws must have mean zero (use a = -b)"
                    )));
                }
                Ok(())
            }
            DistributionSpec::Discrete(t) => {
                let total: f64 = t.probs.iter().sum();
                if t.values.is_empty()
                    || t.values.len() != t.probs.len()
                    || (total - 1.0).abs() > PROBABILITY_SUM_TOL
                {
                    return Err(Error::config("malformed discrete table"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Parses a family name with optional numeric parameters.
    pub fn from_name(family: &str, params: &[f64]) -> Result<Self> {
        match (family, params) {
            ("rademacher", []) => Ok(DistributionSpec::Rademacher),
            ("normal" | "standard_normal" | "gaussian", []) => Ok(DistributionSpec::StandardNormal),
            ("uniform", [a, b]) => DistributionSpec::uniform(*a, *b),
            ("uniform", [c]) => DistributionSpec::uniform(-c, *c),
            _ => Err(Error::config(format!(
                "unknown distribution {family:?} with parameters {params:?}"
            ))),
        }
    }

    /// Finite support with probabilities, when the law is discrete.
    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            DistributionSpec::Rademacher => Some(vec![(-1.0, 0.5), (1.0, 0.5)]),
            DistributionSpec::Discrete(t) => {
                Some(t.values.iter().copied().zip(t.probs.iter().copied()).collect())
            }
            _ => None,
        }
    }

    pub fn moments(&self) -> RowMoments {
        match self {
            DistributionSpec::Rademacher | DistributionSpec::StandardNormal => RowMoments {
                mean: 0.0,
                variance: 1.0,
                sign_mean: 0.0,
                nonzero_prob: 1.0,
            },
            DistributionSpec::Uniform { a, b } => RowMoments {
                mean: 0.5 * (a + b),
                variance: (b - a) * (b - a) / 12.0,
                sign_mean: (b.max(0.0) - (-a).max(0.0)) / (b - a),
                nonzero_prob: 1.0,
            },
            DistributionSpec::Discrete(t) => {
                let w = |f: &dyn Fn(f64) -> f64| -> f64 {
                    t.values.iter().zip(&t.probs).map(|(v, q)| q * f(*v)).sum()
                };
                let mean = w(&|v| v);
                RowMoments {
                    mean,
                    variance: w(&|v| (v - mean) * (v - mean)),
                    sign_mean: w(&sign),
                    nonzero_prob: w(&|v| sign(v) * sign(v)),
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DistributionSpec::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            DistributionSpec::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
            DistributionSpec::StandardNormal => rng.sample(StandardNormal),
            DistributionSpec::Discrete(t) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, q) in t.values.iter().zip(&t.probs) {
                    acc += q;
                    if u < acc {
                        return *v;
                    }
                }
                *t.values.last().expect("validated non-empty")
            }
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::Rademacher => write!(f, "rademacher"),
            DistributionSpec::Uniform { a, b } => write!(f, "uniform({a},{b})"),
            DistributionSpec::StandardNormal => write!(f, "standard_normal"),
            DistributionSpec::Discrete(t) => write!(f, "discrete({} points)", t.values.len()),
        }
    }
}

/// `sign(x)` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Counter-based seed derivation: `(master, label, index) -> child seed`.
///
/// A pure function of its inputs, so replications can be generated in any
/// order by any number of workers. For a fixed `(master, label)` the map
/// `index -> child` is injective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub master_seed: u64,
}

impl SeedPolicy {
    pub fn new(master_seed: u64) -> Self {
        SeedPolicy { master_seed }
    }

    pub fn derive(&self, label: &str, index: u64) -> u64 {
        let stream = mix64(self.master_seed ^ mix64(label_hash(label)));
        mix64(stream.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// A child policy for a named sub-experiment.
    pub fn child(&self, label: &str, index: u64) -> SeedPolicy {
        SeedPolicy::new(self.derive(label, index))
    }

    pub fn rng(&self, label: &str, index: u64) -> ChaCha8Rng {
        rng_from_seed(self.derive(label, index))
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Dilution graph
// ---------------------------------------------------------------------------

/// Symmetric 0/1 dilution indicators `Z_ij = Z_ji` over unordered pairs,
/// packed as a bitset of `n (n - 1) / 2` bits in row-major upper-triangle order.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PackedGraph", try_from = "PackedGraph")]
pub struct DilutionGraph {
    n: usize,
    p: f64,
    words: Vec<u64>,
}

impl fmt::Debug for DilutionGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DilutionGraph")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("edges", &self.edge_count())
            .finish()
    }
}

impl DilutionGraph {
    pub fn empty(n: usize, p: f64) -> Self {
        let bits = n * n.saturating_sub(1) / 2;
        DilutionGraph {
            n,
            p,
            words: vec![0; bits.div_ceil(64)],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = DilutionGraph::empty(n, 1.0);
        let bits = g.pair_count();
        for (w, word) in g.words.iter_mut().enumerate() {
            let lo = w * 64;
            let used = (bits - lo).min(64);
            *word = if used == 64 { u64::MAX } else { (1u64 << used) - 1 };
        }
        g
    }

    /// Builds a graph from an explicit edge list (pairs in either order).
    pub fn from_edges(n: usize, p: f64, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = DilutionGraph::empty(n, p);
        for &(i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(Error::domain(format!("invalid pair ({i}, {j}) for n = {n}")));
            }
            g.set(i, j, true);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    #[inline]
    fn pair_index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        debug_assert!(a != b && b < self.n);
        a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    /// `Z_ij`; the diagonal is unused and reads as `false`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let k = self.pair_index(i, j);
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        let k = self.pair_index(i, j);
        if on {
            self.words[k / 64] |= 1 << (k % 64);
        } else {
            self.words[k / 64] &= !(1 << (k % 64));
        }
    }

    pub fn edge_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.edge_count() as f64 / self.pair_count() as f64
    }

    /// Visits every pair `(i, j)` with `i < j` and `Z_ij = 1`, in pair order.
    pub fn for_each_edge(&self, mut f: impl FnMut(usize, usize)) {
        let n = self.n;
        let mut row_start = 0usize;
        for i in 0..n.saturating_sub(1) {
            let row_len = n - i - 1;
            let row_end = row_start + row_len;
            let mut k = row_start;
            while k < row_end {
                let w = k / 64;
                let offset = k % 64;
                let span = (64 - offset).min(row_end - k);
                let mask = if span == 64 { u64::MAX } else { (1u64 << span) - 1 };
                let mut bits = (self.words[w] >> offset) & mask;
                while bits != 0 {
                    let t = bits.trailing_zeros() as usize;
                    f(i, i + 1 + (k - row_start) + t);
                    bits &= bits - 1;
                }
                k += span;
            }
            row_start = row_end;
        }
    }

    /// Adjacency lists; `lower[i]` holds the `j < i` with `Z_ij = 1`, ascending.
    pub fn lower_neighbors(&self) -> Vec<Vec<usize>> {
        let mut lower = vec![Vec::new(); self.n];
        self.for_each_edge(|i, j| lower[j].push(i));
        lower
    }

    /// Vertex degrees `sum_{j != i} Z_ij`.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        self.for_each_edge(|i, j| {
            deg[i] += 1;
            deg[j] += 1;
        });
        deg
    }

    /// Packed words as a lowercase hex string (16 digits per word).
    pub fn to_hex(&self) -> String {
        self.words.iter().map(|w| format!("{w:016x}")).collect()
    }

    pub fn from_hex(n: usize, p: f64, hex: &str) -> Result<Self> {
        let mut g = DilutionGraph::empty(n, p);
        if hex.len() != 16 * g.words.len() || !hex.is_ascii() {
            return Err(Error::domain(format!(
                "packed dilution for n = {n} needs {} hex digits, got {}",
                16 * g.words.len(),
                hex.len()
            )));
        }
        for (w, chunk) in g.words.iter_mut().zip(hex.as_bytes().chunks(16)) {
            let s = std::str::from_utf8(chunk).expect("ascii checked");
            *w = u64::from_str_radix(s, 16)
                .map_err(|e| Error::domain(format!("bad hex word {s:?}: {e}")))?;
        }
        let bits = g.pair_count();
        if !bits.is_multiple_of(64) {
            if let Some(last) = g.words.last() {
                if last >> (bits % 64) != 0 {
                    return Err(Error::domain("packed dilution has bits beyond the last pair"));
                }
            }
        }
        Ok(g)
    }
}

/// JSON form of a dilution graph: size, probability and packed hex bits.
#[derive(Serialize, Deserialize)]
struct PackedGraph {
    n: usize,
    p: f64,
    bits: String,
}

impl From<DilutionGraph> for PackedGraph {
    fn from(g: DilutionGraph) -> Self {
        PackedGraph {
            n: g.n,
            p: g.p,
            bits: g.to_hex(),
        }
    }
}

impl TryFrom<PackedGraph> for DilutionGraph {
    type Error = Error;

    fn try_from(g: PackedGraph) -> Result<Self> {
        DilutionGraph::from_hex(g.n, g.p, &g.bits)
    }
}

// ---------------------------------------------------------------------------
// Sampling operations
// ---------------------------------------------------------------------------

/// `n` i.i.d. draws from `dist`; bit-identical for identical `(n, dist, seed)`.
pub fn sample_row(n: usize, dist: &DistributionSpec, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::domain("row length must be at least 1"));
    }
    dist.validate()?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Samples each unordered pair independently with probability `p`.
pub fn sample_dilution(n: usize, p: f64, seed: u64) -> Result<DilutionGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("dilution probability {p} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::domain("graph size must be at least 1"));
    }
    if p == 0.0 {
        return Ok(DilutionGraph::empty(n, p));
    }
    if p == 1.0 {
        return Ok(DilutionGraph::complete(n));
    }
    let mut rng = rng_from_seed(seed);
    Ok(sample_dilution_with(n, p, &mut rng))
}

pub(crate) fn sample_dilution_with<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> DilutionGraph {
    let mut g = DilutionGraph::empty(n, p);
    if p >= 1.0 {
        return DilutionGraph::complete(n);
    }
    if p <= 0.0 {
        return g;
    }
    let bern = Bernoulli::new(p).expect("p in (0,1)");
    let bits = g.pair_count();
    for k in 0..bits {
        if bern.sample(rng) {
            g.words[k / 64] |= 1 << (k % 64);
        }
    }
    g
}

/// One replicate: the row `X_1..X_n` followed by the dilution graph, both
/// drawn from the same generator.
pub fn sample_replicate<R: Rng + ?Sized>(
    n: usize,
    dist: &DistributionSpec,
    p: f64,
    rng: &mut R,
) -> (Vec<f64>, DilutionGraph) {
    let x: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    let z = sample_dilution_with(n, p, rng);
    (x, z)
}

/// One point `p = n^(-a)` of a polynomial dilution schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimePoint {
    pub n: usize,
    pub p: f64,
    pub np: f64,
    /// Set when `n p < 10`: accepted, but convergence will be slow.
    pub slow: bool,
}

/// `p = n^(-a)` with `a in [0, 1)`, so that `n p = n^(1 - a)` grows along the grid.
pub fn dilution_regime(n: usize, exponent: f64) -> Result<RegimePoint> {
    if !(0.0..1.0).contains(&exponent) {
        return Err(Error::config(format!(
            "dilution exponent {exponent} must lie in [0, 1) so that n p grows"
        )));
    }
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    let p = if exponent == 0.0 {
        1.0
    } else {
        (n as f64).powf(-exponent)
    };
    let np = n as f64 * p;
    Ok(RegimePoint {
        n,
        p,
        np,
        slow: np < SLOW_REGIME_NP,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_row() {
        let d = DistributionSpec::discrete(vec![1.0], vec![1.0]);
        // A point mass at 1 is recentered to 0, so use the raw table sampler.
        let t = DiscreteTable {
            values: vec![1.0],
            probs: vec![1.0],
        };
        let raw = DistributionSpec::Discrete(t);
        assert_eq!(sample_row(1, &raw, 3).unwrap(), vec![1.0]);
        assert_eq!(sample_row(1, &d.unwrap(), 3).unwrap(), vec![0.0]);
    }

    #[test]
    fn rademacher_mean_is_small() {
        let n = 10_000;
        let x = sample_row(n, &DistributionSpec::Rademacher, 11).unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!(x.iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn rows_are_reproducible() {
        for d in [
            DistributionSpec::Rademacher,
            DistributionSpec::StandardNormal,
            DistributionSpec::uniform(-2.0, 2.0).unwrap(),
        ] {
            assert_eq!(sample_row(50, &d, 99).unwrap(), sample_row(50, &d, 99).unwrap());
            assert_ne!(sample_row(50, &d, 99).unwrap(), sample_row(50, &d, 100).unwrap());
        }
    }

    #[test]
    fn invalid_laws_are_config_errors() {
        assert!(matches!(DistributionSpec::uniform(0.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(DistributionSpec::uniform(1.0, -1.0), Err(Error::Config(_))));
        assert!(DistributionSpec::discrete(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(DistributionSpec::discrete(vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        let bad = DistributionSpec::Uniform { a: 0.0, b: 1.0 };
        assert!(matches!(sample_row(3, &bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn discrete_tables_are_recentered() {
        let d = DistributionSpec::discrete(vec![0.0, 3.0], vec![0.5, 0.5]).unwrap();
        let m = d.moments();
        assert!(m.mean.abs() < 1e-15);
        assert!((m.variance - 2.25).abs() < 1e-12);
        assert_eq!(d.support().unwrap()[0].0, -1.5);
    }

    #[test]
    fn dilution_extremes() {
        let z0 = sample_dilution(20, 0.0, 1).unwrap();
        assert_eq!(z0.edge_count(), 0);
        let z1 = sample_dilution(20, 1.0, 1).unwrap();
        assert_eq!(z1.edge_count(), 190);
        for i in 0..20 {
            assert!(!z1.get(i, i));
            for j in 0..20 {
                if i != j {
                    assert!(z1.get(i, j));
                }
            }
        }
        assert!(matches!(sample_dilution(5, 1.5, 0), Err(Error::Config(_))));
        assert!(matches!(sample_dilution(5, -0.1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn dilution_edge_count_is_binomial() {
        let (n, p) = (200, 0.3);
        let c = 19_900.0;
        let z = sample_dilution(n, p, 2024).unwrap();
        let dev = (z.edge_count() as f64 - c * p).abs();
        assert!(dev <= 5.0 * (c * p * (1.0 - p)).sqrt(), "deviation {dev}");
    }

    #[test]
    fn edges_iterate_in_pair_order_and_match_get() {
        for n in [1usize, 2, 3, 9, 12, 70] {
            let z = sample_dilution(n, 0.4, n as u64).unwrap();
            let mut edges = Vec::new();
            z.for_each_edge(|i, j| edges.push((i, j)));
            assert_eq!(edges.len(), z.edge_count());
            let mut expected = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(z.get(i, j), z.get(j, i));
                    if z.get(i, j) {
                        expected.push((i, j));
                    }
                }
            }
            assert_eq!(edges, expected);
            let rebuilt = DilutionGraph::from_edges(n, 0.4, &edges).unwrap();
            assert_eq!(rebuilt, z);
            assert_eq!(DilutionGraph::from_hex(n, 0.4, &z.to_hex()).unwrap(), z);
        }
    }

    #[test]
    fn regime_arithmetic() {
        assert_eq!(dilution_regime(37, 0.0).unwrap().p, 1.0);
        let r = dilution_regime(100, 0.5).unwrap();
        assert!((r.p - 0.1).abs() < 1e-15);
        assert!(!r.slow);
        let slow = dilution_regime(10_000, 0.9).unwrap();
        assert!((slow.np - 10f64.powf(0.4)).abs() < 1e-9);
        assert!(slow.slow);
        assert!(matches!(dilution_regime(10, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s = SeedPolicy::new(42);
        assert_eq!(s.derive("row", 7), SeedPolicy::new(42).derive("row", 7));
        let mut seen = std::collections::HashSet::new();
        for label in ["row", "dilution", "replicate", "C1", "C2"] {
            for i in 0..2000 {
                assert!(seen.insert(s.derive(label, i)), "collision at {label}/{i}");
            }
        }
    }
}
