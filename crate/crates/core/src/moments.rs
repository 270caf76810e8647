//! Variance constants of the diluted statistic and an exhaustive enumeration
//! oracle for tiny discrete instances.
//!
//! `beta^2 = p E[h^2]`, `gamma^2 = p E[g^2]`, `theta^2 = n p gamma^2 + beta^2 / 2`
//! and the finite-n variance `binom(n, 2)^-1 (beta^2 + 2 (n - 2) p gamma^2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{BoundKernel, KernelSpec};
use crate::sampling::{DilutionGraph, DistributionSpec, SeedPolicy};
use crate::stats::{pairs, Estimate, NeumaierSum};

/// Largest number of `(X, Z)` outcomes [`enumerate_exact`] will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Minimum Monte Carlo size accepted by [`moments_mc`].
pub const MIN_MC_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Mc,
    Enumerated,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::ClosedForm => "closed_form",
            Provenance::Mc => "mc",
            Provenance::Enumerated => "enumerated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentErrors {
    pub beta2: f64,
    pub gamma2: f64,
    pub theta2: f64,
    pub var_u_exact: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub n: usize,
    pub p: f64,
    pub beta2: f64,
    pub gamma2: f64,
    pub theta2: f64,
    pub var_u_exact: f64,
    pub standard_errors: MomentErrors,
    pub provenance: Provenance,
}

impl MomentSet {
    fn from_constants(n: usize, p: f64, beta2: f64, gamma2: f64, se: (f64, f64), provenance: Provenance) -> Result<Self> {
        let nf = n as f64;
        let theta2 = nf * p * gamma2 + beta2 / 2.0;
        let var_u_exact = variance_exact(n, p, beta2, gamma2)?;
        let (se_b, se_g) = se;
        let var_coeff = 2.0 * (nf - 2.0) * p;
        Ok(MomentSet {
            n,
            p,
            beta2,
            gamma2,
            theta2,
            var_u_exact,
            standard_errors: MomentErrors {
                beta2: se_b,
                gamma2: se_g,
                theta2: (nf * p * se_g).hypot(se_b / 2.0),
                var_u_exact: se_b.hypot(var_coeff * se_g) / pairs(n),
            },
            provenance,
        })
    }

    /// `theta = sqrt(theta^2)`, rejecting a vanishing normalization.
    pub fn theta(&self) -> Result<f64> {
        if !(self.theta2 > 0.0 && self.theta2.is_finite()) {
            return Err(Error::DegenerateNormalization { theta2: self.theta2 });
        }
        Ok(self.theta2.sqrt())
    }

    /// The asymptotic variance form `binom(n, 2)^-1 2 theta^2`.
    pub fn asymptotic_variance(&self) -> f64 {
        2.0 * self.theta2 / pairs(self.n)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("dilution probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// `binom(n, 2)^-1 (beta^2 + 2 (n - 2) p gamma^2)`.
pub fn variance_exact(n: usize, p: f64, beta2: f64, gamma2: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("variance of the U-statistic needs n >= 2"));
    }
    Ok((beta2 + 2.0 * (n as f64 - 2.0) * p * gamma2) / pairs(n))
}

/// Exact moments of an already bound kernel (closed form or enumerated).
pub fn moments_of_bound(kernel: &BoundKernel, n: usize, p: f64) -> Result<MomentSet> {
    check_p(p)?;
    let (h2, g2) = kernel.second_moments()?;
    let provenance = match kernel.source().label() {
        "enumerated" => Provenance::Enumerated,
        _ => Provenance::ClosedForm,
    };
    MomentSet::from_constants(n, p, p * h2, p * g2, (0.0, 0.0), provenance)
}

/// Exact `MomentSet` from the kernel's closed-form second moments. Kernels
/// without one (under this law) give [`Error::Unsupported`].
pub fn moments_closed_form(kernel: &KernelSpec, dist: &DistributionSpec, n: usize, p: f64) -> Result<MomentSet> {
    let bound = kernel.at_row(n).bind_with(dist, None)?;
    moments_of_bound(&bound, n, p)
}

/// Monte Carlo moments from `m` independent pairs `(X, Y)` and `m` draws of `X`.
pub fn moments_mc(kernel: &KernelSpec, dist: &DistributionSpec, n: usize, p: f64, m: usize, seed: u64) -> Result<MomentSet> {
    let bound = kernel.at_row(n).bind(dist)?;
    moments_mc_bound(&bound, n, p, m, seed)
}

pub fn moments_mc_bound(kernel: &BoundKernel, n: usize, p: f64, m: usize, seed: u64) -> Result<MomentSet> {
    check_p(p)?;
    if m < MIN_MC_REPLICATIONS {
        return Err(Error::config(format!(
            "moment estimation needs at least {MIN_MC_REPLICATIONS} replications, got {m}"
        )));
    }
    let g = kernel.conditional_mean()?;
    let seeds = SeedPolicy::new(seed);
    let dist = kernel.dist();
    let (h2, g2): (Vec<f64>, Vec<f64>) = (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeds.rng("moments", r);
            let x = dist.sample(&mut rng);
            let y = dist.sample(&mut rng);
            let h = kernel.evaluate(x, y);
            let gx = g(dist.sample(&mut rng));
            (p * h * h, p * gx * gx)
        })
        .unzip();
    let b = Estimate::from_samples(&h2);
    let c = Estimate::from_samples(&g2);
    MomentSet::from_constants(n, p, b.value, c.value, (b.se, c.se), Provenance::Mc)
}

/// Exact moments when available, Monte Carlo otherwise.
pub fn moments_auto(kernel: &BoundKernel, n: usize, p: f64, m: usize, seed: u64) -> Result<MomentSet> {
    if kernel.is_exact() {
        moments_of_bound(kernel, n, p)
    } else {
        moments_mc_bound(kernel, n, p, m, seed)
    }
}

// ---------------------------------------------------------------------------
// Enumeration oracle
// ---------------------------------------------------------------------------

/// One joint outcome of the row and the dilution graph, with the decomposition
/// terms available by 0-based index.
///
/// `g` and `H~(x, x)` are computed here directly from the support, not through
/// the kernel's closed forms.
pub struct Outcome<'a> {
    pub x: &'a [f64],
    pub z: &'a DilutionGraph,
    pub probability: f64,
    h: &'a [f64],
    g: &'a [f64],
    h_tilde_diag: &'a [f64],
}

impl Outcome<'_> {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn bit(&self, i: usize, j: usize) -> f64 {
        if self.z.get(i, j) {
            1.0
        } else {
            0.0
        }
    }

    /// `h(x_i, x_j)` regardless of dilution.
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n() + j]
    }

    pub fn g(&self, i: usize) -> f64 {
        self.g[i]
    }

    /// `Phi(i, j) = Z_ij h(x_i, x_j)`.
    pub fn phi(&self, i: usize, j: usize) -> f64 {
        self.bit(i, j) * self.kernel(i, j)
    }

    /// `Psi_j(i) = Z_ij g(x_i)`.
    pub fn psi(&self, j: usize, i: usize) -> f64 {
        self.bit(i, j) * self.g[i]
    }

    /// `Phi~(i, j) = Z_ij (h(x_i, x_j) - g(x_i) - g(x_j))`.
    pub fn phi_tilde(&self, i: usize, j: usize) -> f64 {
        self.bit(i, j) * (self.kernel(i, j) - self.g[i] - self.g[j])
    }

    /// `H~(x_i, x_i)`.
    pub fn h_tilde_diag(&self, i: usize) -> f64 {
        self.h_tilde_diag[i]
    }

    /// `G~_j(i, i) = Z_ij H~(x_i, x_i)`.
    pub fn g_tilde_diag(&self, j: usize, i: usize) -> f64 {
        self.bit(i, j) * self.h_tilde_diag[i]
    }

    pub fn u_value(&self) -> f64 {
        let n = self.n();
        let mut acc = NeumaierSum::new();
        self.z.for_each_edge(|i, j| acc.add(self.h[i * n + j]));
        acc.total() / pairs(n)
    }
}

pub type Query<'q> = &'q (dyn Fn(&Outcome<'_>) -> f64 + Sync);

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub moments: MomentSet,
    /// `E[U]`, zero for a centered kernel.
    pub mean_u: f64,
    /// One exact expectation per query, in query order.
    pub expectations: Vec<f64>,
    pub outcomes: f64,
}

/// Exact expectations by summing over every `(X, Z)` assignment at size `n`.
///
/// `beta^2 = E[Phi(0,1)^2]`, `gamma^2 = E[Psi_1(0)^2]` and `var_u_exact = Var(U)`
/// are all computed by the same summation.
pub fn enumerate_exact(kernel: &BoundKernel, n: usize, p: f64, queries: &[Query<'_>]) -> Result<Enumeration> {
    check_p(p)?;
    if n < 2 {
        return Err(Error::domain("enumeration needs n >= 2"));
    }
    let support = kernel
        .dist()
        .support()
        .ok_or_else(|| Error::unsupported(format!("enumeration needs a discrete law, got {}", kernel.dist())))?;
    let s = support.len();
    let pc = n * (n - 1) / 2;
    let size = (s as f64).powi(n as i32) * 2f64.powi(pc as i32);
    if size > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            size,
            limit: ENUMERATION_LIMIT,
        });
    }

    let h = |a: f64, b: f64| kernel.evaluate(a, b);
    let g_support: Vec<f64> = support
        .iter()
        .map(|&(a, _)| support.iter().map(|&(b, q)| q * h(a, b)).collect::<NeumaierSum>().total())
        .collect();
    let h_tilde_support: Vec<f64> = support
        .iter()
        .enumerate()
        .map(|(ia, &(a, _))| {
            support
                .iter()
                .enumerate()
                .map(|(ib, &(b, q))| {
                    let t = h(a, b) - g_support[ia] - g_support[ib];
                    q * t * t
                })
                .collect::<NeumaierSum>()
                .total()
        })
        .collect();

    let graphs: Vec<(DilutionGraph, f64)> = (0u64..1 << pc)
        .filter_map(|mask| {
            let mut z = DilutionGraph::empty(n, p);
            let mut k = 0usize;
            let mut bit = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if mask >> bit & 1 == 1 {
                        z.set(i, j, true);
                        k += 1;
                    }
                    bit += 1;
                }
            }
            let w = p.powi(k as i32) * (1.0 - p).powi((pc - k) as i32);
            (w > 0.0).then_some((z, w))
        })
        .collect();

    // columns: E[Phi(0,1)^2], E[Psi_1(0)^2], E[U], E[U^2], then the queries
    let columns = 4 + queries.len();
    let partitions: Vec<Vec<NeumaierSum>> = (0..s.pow(n as u32))
        .into_par_iter()
        .map(|code| {
            let mut idx = vec![0usize; n];
            let mut c = code;
            for slot in idx.iter_mut() {
                *slot = c % s;
                c /= s;
            }
            let x: Vec<f64> = idx.iter().map(|&k| support[k].0).collect();
            let px: f64 = idx.iter().map(|&k| support[k].1).product();
            let g: Vec<f64> = idx.iter().map(|&k| g_support[k]).collect();
            let ht: Vec<f64> = idx.iter().map(|&k| h_tilde_support[k]).collect();
            let mut hm = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    hm[i * n + j] = h(x[i], x[j]);
                }
            }
            let mut acc = vec![NeumaierSum::new(); columns];
            for (z, pz) in &graphs {
                let o = Outcome {
                    x: &x,
                    z,
                    probability: px * pz,
                    h: &hm,
                    g: &g,
                    h_tilde_diag: &ht,
                };
                let w = o.probability;
                let u = o.u_value();
                acc[0].add(w * o.phi(0, 1).powi(2));
                acc[1].add(w * o.psi(1, 0).powi(2));
                acc[2].add(w * u);
                acc[3].add(w * u * u);
                for (a, q) in acc[4..].iter_mut().zip(queries) {
                    a.add(w * q(&o));
                }
            }
            acc
        })
        .collect();

    let mut totals = vec![NeumaierSum::new(); columns];
    for part in &partitions {
        for (t, v) in totals.iter_mut().zip(part) {
            t.merge(v);
        }
    }
    let t: Vec<f64> = totals.iter().map(NeumaierSum::total).collect();
    let (beta2, gamma2, mean_u, second_u) = (t[0], t[1], t[2], t[3]);
    let nf = n as f64;
    Ok(Enumeration {
        moments: MomentSet {
            n,
            p,
            beta2,
            gamma2,
            theta2: nf * p * gamma2 + beta2 / 2.0,
            var_u_exact: second_u - mean_u * mean_u,
            standard_errors: MomentErrors::default(),
            provenance: Provenance::Enumerated,
        },
        mean_u,
        expectations: t[4..].to_vec(),
        outcomes: size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{additive_kernel, product_kernel, register_builtin_kernels, sign_kernel, zero_kernel};

    #[test]
    fn product_normal_constants() {
        let m = moments_closed_form(&product_kernel(), &DistributionSpec::StandardNormal, 100, 1.0).unwrap();
        assert_eq!((m.beta2, m.gamma2, m.theta2), (1.0, 0.0, 0.5));
        assert_eq!(m.provenance, Provenance::ClosedForm);
    }

    #[test]
    fn additive_rademacher_small_n() {
        let m = moments_closed_form(&additive_kernel(), &DistributionSpec::Rademacher, 3, 0.5).unwrap();
        assert_eq!(m.beta2, 1.0);
        assert_eq!(m.gamma2, 0.5);
        assert_eq!(m.theta2, 1.25);
        assert!((m.var_u_exact - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_kernel_constants_and_degenerate_theta() {
        let m = moments_closed_form(&zero_kernel(), &DistributionSpec::Rademacher, 10, 0.5).unwrap();
        assert_eq!((m.beta2, m.gamma2, m.theta2, m.var_u_exact), (0.0, 0.0, 0.0, 0.0));
        assert!(matches!(m.theta(), Err(Error::DegenerateNormalization { .. })));
    }

    #[test]
    fn variance_exact_edges() {
        assert_eq!(variance_exact(2, 0.3, 1.7, 0.4).unwrap(), 1.7);
        assert!((variance_exact(3, 0.5, 1.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!(variance_exact(1, 0.5, 1.0, 0.5).is_err());
    }

    #[test]
    fn opaque_kernel_has_no_closed_form() {
        let k = KernelSpec::new("opaque", |x, y| x * y);
        assert!(matches!(
            moments_closed_form(&k, &DistributionSpec::StandardNormal, 10, 1.0),
            Err(Error::Config(_)) | Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mc_requires_enough_replications() {
        assert!(matches!(
            moments_mc(&sign_kernel(), &DistributionSpec::Rademacher, 10, 0.5, 99, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mc_agrees_with_closed_forms() {
        let laws = [
            DistributionSpec::Rademacher,
            DistributionSpec::StandardNormal,
            DistributionSpec::uniform(-1.0, 1.0).unwrap(),
        ];
        for d in &laws {
            for k in register_builtin_kernels() {
                let exact = moments_closed_form(&k, d, 20, 0.5).unwrap();
                let mc = moments_mc(&k, d, 20, 0.5, 20_000, 11).unwrap();
                let ok = |a: f64, b: f64, se: f64| (a - b).abs() <= 4.0 * se + 1e-15;
                assert!(ok(mc.beta2, exact.beta2, mc.standard_errors.beta2), "{} {d}", k.name());
                assert!(ok(mc.gamma2, exact.gamma2, mc.standard_errors.gamma2), "{} {d}", k.name());
            }
        }
    }

    #[test]
    fn moment_set_invariants() {
        for k in register_builtin_kernels() {
            for &(n, p) in &[(10, 0.1), (50, 0.5), (400, 1.0)] {
                let m = moments_closed_form(&k, &DistributionSpec::StandardNormal, n, p).unwrap();
                assert_eq!(m.theta2, n as f64 * p * m.gamma2 + m.beta2 / 2.0);
                assert!(2.0 * m.gamma2 <= m.beta2 + 1e-15);
                assert!(m.theta2 >= m.beta2 / 2.0 && m.theta2 >= n as f64 * p * m.gamma2);
            }
        }
    }

    #[test]
    fn enumeration_reproduces_small_additive_case() {
        let b = additive_kernel().bind(&DistributionSpec::Rademacher).unwrap();
        let e = enumerate_exact(&b, 3, 0.5, &[]).unwrap();
        assert_eq!(e.outcomes, 64.0);
        assert!((e.moments.beta2 - 1.0).abs() < 1e-15);
        assert!((e.moments.gamma2 - 0.5).abs() < 1e-15);
        assert!((e.moments.var_u_exact - 0.5).abs() < 1e-15);
        assert_eq!(e.mean_u, 0.0);
    }

    #[test]
    fn enumeration_size_guard() {
        let d = DistributionSpec::discrete(vec![-2.0, -1.0, 1.0, 2.0], vec![0.25; 4]).unwrap();
        let b = zero_kernel().bind(&d).unwrap();
        match enumerate_exact(&b, 7, 0.5, &[]) {
            Err(Error::EnumerationTooLarge { size, .. }) => assert_eq!(size, 4f64.powi(7) * 2f64.powi(21)),
            other => panic!("expected size error, got {other:?}"),
        }
        let b = zero_kernel().bind(&DistributionSpec::StandardNormal).unwrap();
        assert!(matches!(enumerate_exact(&b, 3, 0.5, &[]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn zero_kernel_enumerates_to_zero() {
        let b = zero_kernel().bind(&DistributionSpec::Rademacher).unwrap();
        let q = |o: &Outcome<'_>| o.phi_tilde(0, 1) * o.phi_tilde(0, 2) + o.g_tilde_diag(1, 0);
        let e = enumerate_exact(&b, 4, 0.5, &[&q]).unwrap();
        assert_eq!(e.expectations, vec![0.0]);
        assert_eq!(e.moments.var_u_exact, 0.0);
    }
}
