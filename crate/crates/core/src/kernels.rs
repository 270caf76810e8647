//! Symmetric pair kernels `h_n` and their conditional-moment structure.
//!
//! A [`KernelSpec`] is just the pair function (plus an optional closed-form
//! provider and row scale). Conditional quantities depend on the row law, so
//! they live on a [`BoundKernel`], obtained with [`KernelSpec::bind`]:
//!
//! * `g(x) = E[h(x, X)]`, the conditional mean,
//! * `H(x, y) = E[h(x, X) h(y, X)]`, the pair conditional,
//! * `H~(x, y) = E[h~(x, X) h~(y, X)]` with `h~(x, y) = h(x, y) - g(x) - g(y)`,
//! * `r(x) = E[h(x, X) g(X)]`, the projection cross moment.
//!
//! `H~` is always derived from the others through
//! `H~(x, y) = H(x, y) - g(x) g(y) - r(x) - r(y) + E[g^2]`,
//! which holds for any centered kernel.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sampling::{rng_from_seed, sign, table_rows, DistributionSpec, SeedPolicy};
use crate::stats::{Estimate, NeumaierSum};

pub type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type UnaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScaleFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;
pub type FormsProvider = Arc<dyn Fn(&DistributionSpec) -> Option<ClosedForms> + Send + Sync>;

/// Default inner Monte Carlo size for kernels without closed forms.
pub const DEFAULT_INNER_MC: usize = 2048;

/// Closed-form conditional structure of a kernel under one row law.
#[derive(Clone)]
pub struct ClosedForms {
    pub conditional_mean: UnaryFn,
    pub pair_conditional: PairFn,
    pub projection_cross: UnaryFn,
    /// `E[h(X, Y)]`, zero for an admissible kernel.
    pub kernel_mean: f64,
    /// `E[h(X, Y)^2]`.
    pub kernel_sq_mean: f64,
    /// `E[g(X)^2]`.
    pub projection_sq_mean: f64,
    /// Optional factorization `H~(x, y) = c f(x) f(y)`.
    pub centered_rank_one: Option<RankOne>,
}

#[derive(Clone)]
pub struct RankOne {
    pub coefficient: f64,
    pub factor: UnaryFn,
}

impl ClosedForms {
    fn scaled(self, s: f64) -> ClosedForms {
        if s == 1.0 {
            return self;
        }
        let g = self.conditional_mean;
        let hh = self.pair_conditional;
        let r = self.projection_cross;
        ClosedForms {
            conditional_mean: Arc::new(move |x| s * g(x)),
            pair_conditional: Arc::new(move |x, y| s * s * hh(x, y)),
            projection_cross: Arc::new(move |x| s * s * r(x)),
            kernel_mean: s * self.kernel_mean,
            kernel_sq_mean: s * s * self.kernel_sq_mean,
            projection_sq_mean: s * s * self.projection_sq_mean,
            centered_rank_one: self.centered_rank_one.map(|ro| RankOne {
                coefficient: s * s * ro.coefficient,
                factor: ro.factor,
            }),
        }
    }
}

/// A symmetric real pair kernel.
#[derive(Clone)]
pub struct KernelSpec {
    name: String,
    eval: PairFn,
    sorted_args: bool,
    forms: Option<FormsProvider>,
    scale: Option<ScaleFn>,
    factor: f64,
    table_points: Option<Arc<Vec<f64>>>,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("closed_forms", &self.forms.is_some())
            .field("factor", &self.factor)
            .finish()
    }
}

impl KernelSpec {
    /// Wraps an arbitrary function; symmetry is enforced structurally by
    /// always evaluating on the sorted pair.
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        KernelSpec {
            name: name.into(),
            eval: Arc::new(f),
            sorted_args: true,
            forms: None,
            scale: None,
            factor: 1.0,
            table_points: None,
        }
    }

    /// For functions that are symmetric as written (`x * y`, `x + y`, ...).
    fn symmetric(name: &str, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        KernelSpec {
            sorted_args: false,
            ..KernelSpec::new(name, f)
        }
    }

    pub fn with_closed_forms(
        mut self,
        provider: impl Fn(&DistributionSpec) -> Option<ClosedForms> + Send + Sync + 'static,
    ) -> Self {
        self.forms = Some(Arc::new(provider));
        self
    }

    /// Row-dependent multiplicative scale `h_n = s(n) h`.
    pub fn with_scale(mut self, s: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        self.scale = Some(Arc::new(s));
        self
    }

    /// The kernel of row `n`: the scale function evaluated and baked in.
    pub fn at_row(&self, n: usize) -> KernelSpec {
        let mut k = self.clone();
        k.factor = self.scale.as_ref().map_or(1.0, |s| s(n));
        k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_closed_forms(&self) -> bool {
        self.forms.is_some()
    }

    #[inline]
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let v = if self.sorted_args && y < x {
            (self.eval)(y, x)
        } else {
            (self.eval)(x, y)
        };
        self.factor * v
    }

    /// Binds the kernel to a row law using closed forms, exact enumeration for
    /// discrete laws, or inner Monte Carlo with the default policy.
    pub fn bind(&self, dist: &DistributionSpec) -> Result<BoundKernel> {
        self.bind_with(dist, Some(InnerMcPolicy::default()))
    }

    /// Like [`bind`](Self::bind), with an explicit (or no) inner-MC fallback.
    pub fn bind_with(&self, dist: &DistributionSpec, policy: Option<InnerMcPolicy>) -> Result<BoundKernel> {
        dist.validate()?;
        if let (Some(points), Some(support)) = (&self.table_points, dist.support()) {
            for &(a, _) in &support {
                if !points.contains(&a) {
                    return Err(Error::config(format!(
                        "kernel table {} does not cover support point {a}",
                        self.name
                    )));
                }
            }
            for &(a, _) in &support {
                for &(b, _) in &support {
                    if self.evaluate(a, b).is_nan() {
                        return Err(Error::config(format!(
                            "kernel table {} has no entry for ({a}, {b})",
                            self.name
                        )));
                    }
                }
            }
        }
        let closed = self.forms.as_ref().and_then(|f| f(dist));
        let source = match (closed, dist.support()) {
            (Some(forms), _) => ConditionalSource::ClosedForm(forms.scaled(self.factor)),
            (None, Some(support)) => ConditionalSource::Enumerated(enumerated_forms(self, &support)),
            (None, None) => match policy {
                Some(p) => ConditionalSource::InnerMc(p),
                None => ConditionalSource::Unavailable,
            },
        };
        BoundKernel::new(self.clone(), dist.clone(), source)
    }

    /// Loads a custom kernel from a table of `x, y, h` rows. Each unordered
    /// pair may appear once or twice; when both orders appear they must agree.
    pub fn from_table_file(path: &Path) -> Result<KernelSpec> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: display.clone(),
            source,
        })?;
        let mut rows = Vec::new();
        for (lineno, fields) in table_rows(&text) {
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: lineno,
                    message: format!("expected 3 columns (x, y, h), found {}", fields.len()),
                });
            }
            let mut vals = [0.0; 3];
            for (v, s) in vals.iter_mut().zip(&fields) {
                *v = s.parse::<f64>().map_err(|e| Error::Parse {
                    path: display.clone(),
                    line: lineno,
                    message: format!("{s:?}: {e}"),
                })?;
            }
            rows.push((vals[0], vals[1], vals[2]));
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "table".to_string());
        KernelSpec::from_table(&name, &rows)
    }

    pub fn from_table(name: &str, rows: &[(f64, f64, f64)]) -> Result<KernelSpec> {
        let mut table: HashMap<(u64, u64), f64> = HashMap::new();
        let mut points: Vec<f64> = Vec::new();
        for &(x, y, h) in rows {
            if !(x.is_finite() && y.is_finite() && h.is_finite()) {
                return Err(Error::config(format!("non-finite kernel table row ({x}, {y}, {h})")));
            }
            let key = table_key(x, y);
            if let Some(&prev) = table.get(&key) {
                if prev != h {
                    return Err(Error::config(format!(
                        "kernel table {name} is not symmetric: h({x}, {y}) = {h} but h({y}, {x}) = {prev}"
                    )));
                }
            }
            table.insert(key, h);
            for v in [x, y] {
                if !points.contains(&v) {
                    points.push(v);
                }
            }
        }
        let table = Arc::new(table);
        let mut k = KernelSpec::symmetric(name, move |x, y| {
            table.get(&table_key(x, y)).copied().unwrap_or(f64::NAN)
        });
        k.table_points = Some(Arc::new(points));
        Ok(k)
    }
}

fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 {
        0.0f64.to_bits()
    } else {
        v.to_bits()
    }
}

fn table_key(x: f64, y: f64) -> (u64, u64) {
    if y < x {
        (canonical_bits(y), canonical_bits(x))
    } else {
        (canonical_bits(x), canonical_bits(y))
    }
}

/// Exact conditional structure of any kernel under a finite law.
fn enumerated_forms(kernel: &KernelSpec, support: &[(f64, f64)]) -> ClosedForms {
    let support = Arc::new(support.to_vec());
    let k = kernel.clone();
    let sup = Arc::clone(&support);
    let g: UnaryFn = Arc::new(move |x| {
        sup.iter()
            .map(|&(s, q)| q * k.evaluate(x, s))
            .collect::<NeumaierSum>()
            .total()
    });
    let g_at_support: Arc<Vec<f64>> = Arc::new(support.iter().map(|&(s, _)| g(s)).collect());

    let k = kernel.clone();
    let sup = Arc::clone(&support);
    let pair: PairFn = Arc::new(move |x, y| {
        sup.iter()
            .map(|&(s, q)| q * k.evaluate(x, s) * k.evaluate(y, s))
            .collect::<NeumaierSum>()
            .total()
    });

    let k = kernel.clone();
    let sup = Arc::clone(&support);
    let gs = Arc::clone(&g_at_support);
    let cross: UnaryFn = Arc::new(move |x| {
        sup.iter()
            .zip(gs.iter())
            .map(|(&(s, q), gv)| q * k.evaluate(x, s) * gv)
            .collect::<NeumaierSum>()
            .total()
    });

    let mut mean = NeumaierSum::new();
    let mut sq = NeumaierSum::new();
    for &(a, qa) in support.iter() {
        for &(b, qb) in support.iter() {
            let h = kernel.evaluate(a, b);
            mean.add(qa * qb * h);
            sq.add(qa * qb * h * h);
        }
    }
    let g_sq = support
        .iter()
        .zip(g_at_support.iter())
        .map(|(&(_, q), gv)| q * gv * gv)
        .collect::<NeumaierSum>()
        .total();
    ClosedForms {
        conditional_mean: g,
        pair_conditional: pair,
        projection_cross: cross,
        kernel_mean: mean.total(),
        kernel_sq_mean: sq.total(),
        projection_sq_mean: g_sq,
        centered_rank_one: None,
    }
}

/// Inner Monte Carlo approximation policy for conditional expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InnerMcPolicy {
    pub m_inner: usize,
    pub seed: u64,
}

impl Default for InnerMcPolicy {
    fn default() -> Self {
        InnerMcPolicy {
            m_inner: DEFAULT_INNER_MC,
            seed: 0x5eed_0001,
        }
    }
}

/// How a bound kernel obtains its conditional expectations.
#[derive(Clone)]
pub enum ConditionalSource {
    ClosedForm(ClosedForms),
    /// Exact sums over a finite support.
    Enumerated(ClosedForms),
    InnerMc(InnerMcPolicy),
    Unavailable,
}

impl ConditionalSource {
    pub fn label(&self) -> &'static str {
        match self {
            ConditionalSource::ClosedForm(_) => "closed_form",
            ConditionalSource::Enumerated(_) => "enumerated",
            ConditionalSource::InnerMc(_) => "inner_mc",
            ConditionalSource::Unavailable => "unavailable",
        }
    }
}

/// `(1/m) sum_k h(x, X_k)` over `m` i.i.d. draws `X_k ~ dist`; deterministic in `seed`.
pub fn inner_mc_conditional(kernel: &KernelSpec, x: f64, dist: &DistributionSpec, m: usize, seed: u64) -> f64 {
    inner_mc_conditional_estimate(kernel, x, dist, m, seed).value
}

/// As [`inner_mc_conditional`], also reporting the standard error.
pub fn inner_mc_conditional_estimate(
    kernel: &KernelSpec,
    x: f64,
    dist: &DistributionSpec,
    m: usize,
    seed: u64,
) -> Estimate {
    let m = m.max(1);
    let mut rng = rng_from_seed(seed);
    let draws: Vec<f64> = (0..m).map(|_| kernel.evaluate(x, dist.sample(&mut rng))).collect();
    Estimate::from_samples(&draws)
}

/// A kernel bound to a row law, with its conditional structure resolved.
#[derive(Clone)]
pub struct BoundKernel {
    kernel: KernelSpec,
    dist: DistributionSpec,
    source: ConditionalSource,
    degenerate: bool,
    /// `E[g^2]` as used by `H~`; exact for closed/enumerated sources.
    projection_sq_mean: f64,
}

impl fmt::Debug for BoundKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundKernel")
            .field("kernel", &self.kernel.name())
            .field("dist", &self.dist)
            .field("source", &self.source.label())
            .field("degenerate", &self.degenerate)
            .finish()
    }
}

/// Relative tolerance for exact (closed-form / enumerated) centering and degeneracy checks.
const EXACT_TOL: f64 = 1e-12;

impl BoundKernel {
    fn new(kernel: KernelSpec, dist: DistributionSpec, source: ConditionalSource) -> Result<Self> {
        let (degenerate, projection_sq_mean) = match &source {
            ConditionalSource::ClosedForm(f) | ConditionalSource::Enumerated(f) => {
                let scale = f.kernel_sq_mean.sqrt().max(f64::MIN_POSITIVE);
                if f.kernel_mean.abs() > EXACT_TOL * scale.max(1.0) {
                    return Err(Error::config(format!(
                        "kernel {} is not centered under {dist}: E[h] = {}",
                        kernel.name(),
                        f.kernel_mean
                    )));
                }
                (
                    f.projection_sq_mean <= EXACT_TOL * f.kernel_sq_mean.max(f64::MIN_POSITIVE),
                    f.projection_sq_mean,
                )
            }
            ConditionalSource::InnerMc(policy) => mc_registration_checks(&kernel, &dist, policy)?,
            ConditionalSource::Unavailable => mc_registration_checks(&kernel, &dist, &InnerMcPolicy::default())?,
        };
        Ok(BoundKernel {
            kernel,
            dist,
            source,
            degenerate,
            projection_sq_mean,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn name(&self) -> &str {
        self.kernel.name()
    }

    pub fn dist(&self) -> &DistributionSpec {
        &self.dist
    }

    pub fn source(&self) -> &ConditionalSource {
        &self.source
    }

    /// `true` iff `g = 0` under the bound law.
    pub fn degenerate_flag(&self) -> bool {
        self.degenerate
    }

    #[inline]
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        self.kernel.evaluate(x, y)
    }

    fn forms(&self) -> Option<&ClosedForms> {
        match &self.source {
            ConditionalSource::ClosedForm(f) | ConditionalSource::Enumerated(f) => Some(f),
            _ => None,
        }
    }

    /// Whether the conditional structure is exact (closed form or enumeration).
    pub fn is_exact(&self) -> bool {
        self.forms().is_some()
    }

    /// `(E[h^2], E[g^2])` when known exactly.
    pub fn second_moments(&self) -> Result<(f64, f64)> {
        self.forms()
            .map(|f| (f.kernel_sq_mean, f.projection_sq_mean))
            .ok_or_else(|| {
                Error::unsupported(format!(
                    "kernel {} has no closed-form second moments under {}",
                    self.name(),
                    self.dist
                ))
            })
    }

    /// `g(x) = E[h(x, X)]`.
    pub fn conditional_mean(&self) -> Result<UnaryFn> {
        match &self.source {
            ConditionalSource::ClosedForm(f) | ConditionalSource::Enumerated(f) => {
                Ok(Arc::clone(&f.conditional_mean))
            }
            ConditionalSource::InnerMc(policy) => Ok(mc_conditional_mean(&self.kernel, &self.dist, *policy)),
            ConditionalSource::Unavailable => Err(Error::config(format!(
                "kernel {} has no conditional mean under {} and no approximation policy",
                self.name(),
                self.dist
            ))),
        }
    }

    /// `H(x, y) = E[h(x, X) h(y, X)]`.
    pub fn pair_conditional(&self) -> Result<PairFn> {
        match &self.source {
            ConditionalSource::ClosedForm(f) | ConditionalSource::Enumerated(f) => {
                Ok(Arc::clone(&f.pair_conditional))
            }
            ConditionalSource::InnerMc(policy) => {
                let (k, d, pol) = (self.kernel.clone(), self.dist.clone(), *policy);
                let seeds = SeedPolicy::new(pol.seed);
                Ok(Arc::new(move |x, y| {
                    let (a, b) = if y < x { (y, x) } else { (x, y) };
                    let seed = seeds.derive("H", canonical_bits(a) ^ canonical_bits(b).rotate_left(29));
                    let mut rng = rng_from_seed(seed);
                    (0..pol.m_inner)
                        .map(|_| {
                            let z = d.sample(&mut rng);
                            k.evaluate(a, z) * k.evaluate(b, z)
                        })
                        .collect::<NeumaierSum>()
                        .total()
                        / pol.m_inner as f64
                }))
            }
            ConditionalSource::Unavailable => Err(self.unavailable("pair conditional")),
        }
    }

    /// `r(x) = E[h(x, X) g(X)]`.
    pub fn projection_cross(&self) -> Result<UnaryFn> {
        match &self.source {
            ConditionalSource::ClosedForm(f) | ConditionalSource::Enumerated(f) => {
                Ok(Arc::clone(&f.projection_cross))
            }
            ConditionalSource::InnerMc(policy) => {
                let g = mc_conditional_mean(&self.kernel, &self.dist, *policy);
                let (k, d, pol) = (self.kernel.clone(), self.dist.clone(), *policy);
                let seeds = SeedPolicy::new(pol.seed);
                Ok(Arc::new(move |x| {
                    let mut rng = rng_from_seed(seeds.derive("r", canonical_bits(x)));
                    (0..pol.m_inner)
                        .map(|_| {
                            let z = d.sample(&mut rng);
                            k.evaluate(x, z) * g(z)
                        })
                        .collect::<NeumaierSum>()
                        .total()
                        / pol.m_inner as f64
                }))
            }
            ConditionalSource::Unavailable => Err(self.unavailable("projection cross moment")),
        }
    }

    /// `H~(x, y)`, derived from `H`, `g`, `r` and `E[g^2]`.
    pub fn centered_pair_conditional(&self) -> Result<PairFn> {
        if let Some(ro) = self.forms().and_then(|f| f.centered_rank_one.clone()) {
            return Ok(Arc::new(move |x, y| ro.coefficient * (ro.factor)(x) * (ro.factor)(y)));
        }
        let hh = self.pair_conditional()?;
        let g = self.conditional_mean()?;
        let r = self.projection_cross()?;
        let eg2 = self.projection_sq_mean;
        Ok(Arc::new(move |x, y| hh(x, y) - g(x) * g(y) - r(x) - r(y) + eg2))
    }

    /// `q(y) = E[g(X) h~(X, y)] = r(y) - E[g^2]`.
    pub fn projection_remainder_cross(&self) -> Result<UnaryFn> {
        let r = self.projection_cross()?;
        let eg2 = self.projection_sq_mean;
        Ok(Arc::new(move |y| r(y) - eg2))
    }

    /// The factorization `H~(x, y) = c f(x) f(y)` if the kernel declares one.
    pub fn centered_rank_one(&self) -> Option<RankOne> {
        self.forms().and_then(|f| f.centered_rank_one.clone())
    }

    fn unavailable(&self, what: &str) -> Error {
        Error::config(format!(
            "kernel {} has no {what} under {} and no approximation policy",
            self.name(),
            self.dist
        ))
    }
}

fn mc_conditional_mean(kernel: &KernelSpec, dist: &DistributionSpec, policy: InnerMcPolicy) -> UnaryFn {
    let (k, d) = (kernel.clone(), dist.clone());
    let seeds = SeedPolicy::new(policy.seed);
    Arc::new(move |x| inner_mc_conditional(&k, x, &d, policy.m_inner, seeds.derive("g", canonical_bits(x))))
}

/// MC centering and degeneracy checks at `4 SE`, returning `(degenerate, E[g^2] estimate)`.
///
/// `E[g^2]` is estimated without inner-sample bias as the mean of `g_a(X) g_b(X)`,
/// two independent half-size inner means.
fn mc_registration_checks(kernel: &KernelSpec, dist: &DistributionSpec, policy: &InnerMcPolicy) -> Result<(bool, f64)> {
    const OUTER: usize = 512;
    let seeds = SeedPolicy::new(policy.seed).child("registration", 0);
    let mut rng = seeds.rng("centering", 0);
    let h: Vec<f64> = (0..OUTER * 8)
        .map(|_| kernel.evaluate(dist.sample(&mut rng), dist.sample(&mut rng)))
        .collect();
    let centering = Estimate::from_samples(&h);
    if !centering.within(0.0, 4.0) {
        return Err(Error::config(format!(
            "kernel {} does not look centered under {dist}: E[h] = {} +/- {}",
            kernel.name(),
            centering.value,
            centering.se
        )));
    }
    let half = (policy.m_inner / 2).max(1);
    let mut rng = seeds.rng("degeneracy", 0);
    let prods: Vec<f64> = (0..OUTER)
        .map(|i| {
            let x = dist.sample(&mut rng);
            let a = inner_mc_conditional(kernel, x, dist, half, seeds.derive("ga", i as u64));
            let b = inner_mc_conditional(kernel, x, dist, half, seeds.derive("gb", i as u64));
            a * b
        })
        .collect();
    let eg2 = Estimate::from_samples(&prods);
    Ok((eg2.within(0.0, 4.0), eg2.value.max(0.0)))
}

/// `h~(x, y) = h(x, y) - g(x) - g(y)`.
#[derive(Clone)]
pub struct CenteredKernelView {
    base: BoundKernel,
    g: UnaryFn,
}

impl CenteredKernelView {
    pub fn base(&self) -> &BoundKernel {
        &self.base
    }

    pub fn conditional_mean(&self) -> &UnaryFn {
        &self.g
    }

    #[inline]
    pub fn evaluate_tilde(&self, x: f64, y: f64) -> f64 {
        self.base.evaluate(x, y) - (self.g)(x) - (self.g)(y)
    }
}

pub fn centered_view(kernel: &BoundKernel) -> Result<CenteredKernelView> {
    Ok(CenteredKernelView {
        g: kernel.conditional_mean()?,
        base: kernel.clone(),
    })
}

// ---------------------------------------------------------------------------
// Built-in kernels
// ---------------------------------------------------------------------------

fn zero_fn() -> UnaryFn {
    Arc::new(|_| 0.0)
}

/// `h(x, y) = x y`; degenerate under any centered law.
pub fn product_kernel() -> KernelSpec {
    KernelSpec::symmetric("product", |x, y| x * y).with_closed_forms(|d| {
        let m = d.moments();
        if m.mean != 0.0 {
            return None;
        }
        let var = m.variance;
        Some(ClosedForms {
            conditional_mean: zero_fn(),
            pair_conditional: Arc::new(move |x, y| var * x * y),
            projection_cross: zero_fn(),
            kernel_mean: 0.0,
            kernel_sq_mean: var * var,
            projection_sq_mean: 0.0,
            centered_rank_one: Some(RankOne {
                coefficient: var,
                factor: Arc::new(|x| x),
            }),
        })
    })
}

/// `h(x, y) = x + y`; purely linear, so `h~ = 0`.
pub fn additive_kernel() -> KernelSpec {
    KernelSpec::symmetric("additive", |x, y| x + y).with_closed_forms(|d| {
        let m = d.moments();
        if m.mean != 0.0 {
            return None;
        }
        let var = m.variance;
        Some(ClosedForms {
            conditional_mean: Arc::new(|x| x),
            pair_conditional: Arc::new(move |x, y| x * y + var),
            projection_cross: Arc::new(move |_| var),
            kernel_mean: 0.0,
            kernel_sq_mean: 2.0 * var,
            projection_sq_mean: var,
            centered_rank_one: Some(RankOne {
                coefficient: 0.0,
                factor: zero_fn(),
            }),
        })
    })
}

/// `h(x, y) = sign(x) sign(y)`; bounded, centered iff `E[sign X] = 0`.
pub fn sign_kernel() -> KernelSpec {
    KernelSpec::symmetric("sign", |x, y| sign(x) * sign(y)).with_closed_forms(|d| {
        let m = d.moments();
        let (s1, s0) = (m.sign_mean, m.nonzero_prob);
        Some(ClosedForms {
            conditional_mean: Arc::new(move |x| s1 * sign(x)),
            pair_conditional: Arc::new(move |x, y| s0 * sign(x) * sign(y)),
            projection_cross: Arc::new(move |x| s1 * s0 * sign(x)),
            kernel_mean: s1 * s1,
            kernel_sq_mean: s0 * s0,
            projection_sq_mean: s1 * s1 * s0,
            centered_rank_one: (s1 == 0.0).then(|| RankOne {
                coefficient: s0,
                factor: Arc::new(sign),
            }),
        })
    })
}

/// `h = 0`.
pub fn zero_kernel() -> KernelSpec {
    KernelSpec::symmetric("zero", |_, _| 0.0).with_closed_forms(|_| {
        Some(ClosedForms {
            conditional_mean: zero_fn(),
            pair_conditional: Arc::new(|_, _| 0.0),
            projection_cross: zero_fn(),
            kernel_mean: 0.0,
            kernel_sq_mean: 0.0,
            projection_sq_mean: 0.0,
            centered_rank_one: Some(RankOne {
                coefficient: 0.0,
                factor: zero_fn(),
            }),
        })
    })
}

pub fn register_builtin_kernels() -> Vec<KernelSpec> {
    vec![product_kernel(), additive_kernel(), sign_kernel(), zero_kernel()]
}

pub fn builtin_kernel(name: &str) -> Result<KernelSpec> {
    register_builtin_kernels()
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| Error::config(format!("unknown kernel {name:?} (built-ins: product, additive, sign, zero)")))
}
