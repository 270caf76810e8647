//! The diluted U-statistic, its split into a linear projection part and a
//! fully centered remainder, and the martingale differences built from them.
//!
//! Indices are 0-based here; the pair `(i, j)` with `i < j` carries one dilution
//! bit that is shared by `Psi_j(i)` and `Psi_i(j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{centered_view, BoundKernel, CenteredKernelView, KernelSpec};
use crate::sampling::{rng_from_seed, sample_replicate, DilutionGraph, SeedPolicy};
use crate::stats::{pairs, Estimate, NeumaierSum};

/// One sampled instance with its statistic and decomposition parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub x: Vec<f64>,
    pub z: DilutionGraph,
    pub u_value: f64,
    /// `sum_{j != i} Z_ij g(x_i)`.
    pub psi_part: Vec<f64>,
    /// `sum_{j < i} Z_ij (h(x_i, x_j) - g(x_i) - g(x_j))`.
    pub phi_tilde_part: Vec<f64>,
}

impl Realization {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// The statistic rebuilt from its parts.
    pub fn reconstructed(&self) -> f64 {
        let total: NeumaierSum = self
            .psi_part
            .iter()
            .chain(&self.phi_tilde_part)
            .copied()
            .collect();
        total.total() / pairs(self.n())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serialize(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleDifferences {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    pub theta: f64,
}

impl MartingaleDifferences {
    pub fn xi(&self, i: usize) -> f64 {
        self.xi1[i] + self.xi2[i]
    }

    pub fn total(&self) -> f64 {
        self.xi1.iter().chain(&self.xi2).copied().collect::<NeumaierSum>().total()
    }
}

fn check_shape(x: &[f64], z: &DilutionGraph) -> Result<()> {
    if x.len() != z.n() {
        return Err(Error::domain(format!(
            "row has {} entries but the dilution graph is over {} indices",
            x.len(),
            z.n()
        )));
    }
    if x.len() < 2 {
        return Err(Error::domain("the U-statistic needs n >= 2"));
    }
    Ok(())
}

/// `binom(n, 2)^-1 sum_{i<j} Z_ij h(x_i, x_j)`.
pub fn compute_ustat(x: &[f64], z: &DilutionGraph, kernel: &KernelSpec) -> Result<f64> {
    ustat_with_count(x, z, kernel).map(|(u, _)| u)
}

/// As [`compute_ustat`], also returning the number of kernel evaluations
/// (one per active pair).
pub fn ustat_with_count(x: &[f64], z: &DilutionGraph, kernel: &KernelSpec) -> Result<(f64, usize)> {
    check_shape(x, z)?;
    let mut acc = NeumaierSum::new();
    let mut evals = 0usize;
    z.for_each_edge(|i, j| {
        acc.add(kernel.evaluate(x[i], x[j]));
        evals += 1;
    });
    Ok((acc.total() / pairs(x.len()), evals))
}

pub fn hoeffding_parts(x: &[f64], z: &DilutionGraph, kernel: &BoundKernel) -> Result<Realization> {
    let view = centered_view(kernel)?;
    hoeffding_parts_with(x, z, &view)
}

/// Same as [`hoeffding_parts`] with an already-resolved centered view; `g` is
/// evaluated once per index.
pub fn hoeffding_parts_with(x: &[f64], z: &DilutionGraph, view: &CenteredKernelView) -> Result<Realization> {
    check_shape(x, z)?;
    let n = x.len();
    let g_fn = view.conditional_mean();
    let g: Vec<f64> = x.iter().map(|&v| g_fn(v)).collect();
    let kernel = view.base();
    let mut u = NeumaierSum::new();
    let mut psi = vec![0.0; n];
    let mut phi = vec![NeumaierSum::new(); n];
    z.for_each_edge(|i, j| {
        let h = kernel.evaluate(x[i], x[j]);
        u.add(h);
        psi[i] += 1.0;
        psi[j] += 1.0;
        // stored under the larger index
        phi[j].add(h - g[i] - g[j]);
    });
    for (d, gv) in psi.iter_mut().zip(&g) {
        *d *= gv;
    }
    Ok(Realization {
        x: x.to_vec(),
        z: z.clone(),
        u_value: u.total() / pairs(n),
        psi_part: psi,
        phi_tilde_part: phi.iter().map(NeumaierSum::total).collect(),
    })
}

/// `xi1_i = psi_part_i / (n theta)`, `xi2_i = phi_tilde_part_i / (n theta)`.
pub fn martingale_differences(r: &Realization, theta: f64) -> Result<MartingaleDifferences> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::DegenerateNormalization { theta2: theta * theta });
    }
    let scale = 1.0 / (r.n() as f64 * theta);
    Ok(MartingaleDifferences {
        xi1: r.psi_part.iter().map(|v| v * scale).collect(),
        xi2: r.phi_tilde_part.iter().map(|v| v * scale).collect(),
        theta,
    })
}

/// Monte Carlo estimates of three cross moments that vanish by orthogonality of
/// the decomposition terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrthogonalityCheck {
    /// `E[Phi~(1,2) Phi~(1,3)]`
    pub shared_index: Estimate,
    /// `E[Phi~(1,2) Phi~(3,4)]`
    pub disjoint: Estimate,
    /// `E[Phi~(1,2) Psi_2(1)]`
    pub with_projection: Estimate,
}

impl OrthogonalityCheck {
    pub fn all_within(&self, k: f64) -> bool {
        [self.shared_index, self.disjoint, self.with_projection]
            .iter()
            .all(|e| e.within(0.0, k))
    }
}

pub fn orthogonality_check(
    kernel: &BoundKernel,
    p: f64,
    replications: usize,
    seeds: &SeedPolicy,
) -> Result<OrthogonalityCheck> {
    if replications < 2 {
        return Err(Error::config("orthogonality check needs at least 2 replications"));
    }
    let view = centered_view(kernel)?;
    let g = view.conditional_mean();
    let dist = kernel.dist();
    let mut a = Vec::with_capacity(replications);
    let mut b = Vec::with_capacity(replications);
    let mut c = Vec::with_capacity(replications);
    for r in 0..replications {
        let (x, z) = sample_replicate(4, dist, p, &mut seeds.rng("orthogonality", r as u64));
        let bit = |i, j| if z.get(i, j) { 1.0 } else { 0.0 };
        let t12 = bit(0, 1) * view.evaluate_tilde(x[0], x[1]);
        let t13 = bit(0, 2) * view.evaluate_tilde(x[0], x[2]);
        let t34 = bit(2, 3) * view.evaluate_tilde(x[2], x[3]);
        let psi = bit(0, 1) * g(x[0]);
        a.push(t12 * t13);
        b.push(t12 * t34);
        c.push(t12 * psi);
    }
    Ok(OrthogonalityCheck {
        shared_index: Estimate::from_samples(&a),
        disjoint: Estimate::from_samples(&b),
        with_projection: Estimate::from_samples(&c),
    })
}

/// `E[xi_i xi_k]` for the requested index pairs, one fresh realization per replicate.
pub fn xi_cross_moments(
    kernel: &BoundKernel,
    n: usize,
    p: f64,
    theta: f64,
    index_pairs: &[(usize, usize)],
    replications: usize,
    seeds: &SeedPolicy,
) -> Result<Vec<Estimate>> {
    if let Some(&(i, k)) = index_pairs.iter().find(|&&(i, k)| i >= n || k >= n) {
        return Err(Error::domain(format!("index pair ({i}, {k}) out of range for n = {n}")));
    }
    let view = centered_view(kernel)?;
    let mut products = vec![Vec::with_capacity(replications); index_pairs.len()];
    for r in 0..replications {
        let (x, z) = sample_replicate(n, kernel.dist(), p, &mut seeds.rng("xi-cross", r as u64));
        let md = martingale_differences(&hoeffding_parts_with(&x, &z, &view)?, theta)?;
        for (out, &(i, k)) in products.iter_mut().zip(index_pairs) {
            out.push(md.xi(i) * md.xi(k));
        }
    }
    Ok(products.iter().map(|v| Estimate::from_samples(v)).collect())
}

/// Per-index sample means of `xi_i` over fresh realizations.
pub fn xi_means(
    kernel: &BoundKernel,
    n: usize,
    p: f64,
    theta: f64,
    replications: usize,
    seeds: &SeedPolicy,
) -> Result<Vec<Estimate>> {
    let view = centered_view(kernel)?;
    let mut per_index = vec![Vec::with_capacity(replications); n];
    for r in 0..replications {
        let (x, z) = sample_replicate(n, kernel.dist(), p, &mut seeds.rng("xi-mean", r as u64));
        let md = martingale_differences(&hoeffding_parts_with(&x, &z, &view)?, theta)?;
        for (i, v) in per_index.iter_mut().enumerate() {
            v.push(md.xi(i));
        }
    }
    Ok(per_index.iter().map(|v| Estimate::from_samples(v)).collect())
}

/// Draws one realization for the bound kernel.
pub fn sample_realization(
    kernel: &BoundKernel,
    n: usize,
    p: f64,
    seed: u64,
) -> Result<Realization> {
    let mut rng = rng_from_seed(seed);
    let (x, z) = sample_replicate(n, kernel.dist(), p, &mut rng);
    hoeffding_parts(&x, &z, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::DistributionSpec;
    use crate::kernels::{additive_kernel, product_kernel, sign_kernel, zero_kernel};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn small_examples() {
        let z = DilutionGraph::complete(2);
        assert_eq!(compute_ustat(&[1.5, -2.0], &z, &product_kernel()).unwrap(), -3.0);

        let z = DilutionGraph::from_edges(3, 0.5, &[(0, 1), (1, 2)]).unwrap();
        let u = compute_ustat(&[1.0, -1.0, 1.0], &z, &product_kernel()).unwrap();
        assert_eq!(u, -2.0 / 3.0);

        let z = DilutionGraph::empty(3, 0.5);
        assert_eq!(compute_ustat(&[0.3, 1.0, 7.0], &z, &product_kernel()).unwrap(), 0.0);
    }

    #[test]
    fn short_rows_are_domain_errors() {
        let z = DilutionGraph::complete(1);
        assert!(matches!(compute_ustat(&[1.0], &z, &zero_kernel()), Err(Error::Domain(_))));
        let z = DilutionGraph::complete(3);
        assert!(matches!(compute_ustat(&[1.0, 2.0], &z, &zero_kernel()), Err(Error::Domain(_))));
    }

    #[test]
    fn evaluations_equal_active_pairs() {
        let counter = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&counter);
        let k = KernelSpec::new("counting", move |x, y| {
            c.fetch_add(1, Ordering::Relaxed);
            x * y
        });
        let seeds = SeedPolicy::new(4);
        for r in 0..10 {
            let (x, z) = sample_replicate(40, &DistributionSpec::StandardNormal, 0.3, &mut seeds.rng("c", r));
            counter.store(0, Ordering::Relaxed);
            let (_, evals) = ustat_with_count(&x, &z, &k).unwrap();
            assert_eq!(evals, z.edge_count());
            assert_eq!(counter.load(Ordering::Relaxed), z.edge_count());
        }
    }

    #[test]
    fn degenerate_and_linear_parts() {
        let rad = DistributionSpec::Rademacher;
        let seeds = SeedPolicy::new(8);
        let (x, z) = sample_replicate(12, &rad, 0.5, &mut seeds.rng("d", 0));

        let r = hoeffding_parts(&x, &z, &product_kernel().bind(&rad).unwrap()).unwrap();
        assert!(r.psi_part.iter().all(|&v| v == 0.0));
        let from_phi: f64 = r.phi_tilde_part.iter().sum::<f64>() / pairs(12);
        assert!((from_phi - r.u_value).abs() < 1e-14);

        let r = hoeffding_parts(&x, &z, &additive_kernel().bind(&rad).unwrap()).unwrap();
        assert!(r.phi_tilde_part.iter().all(|&v| v == 0.0));
        let from_psi: f64 = r.psi_part.iter().sum::<f64>() / pairs(12);
        assert!((from_psi - r.u_value).abs() < 1e-14);
    }

    #[test]
    fn martingale_differences_scale_and_reject_degenerate_theta() {
        let rad = DistributionSpec::Rademacher;
        let b = zero_kernel().bind(&rad).unwrap();
        let r = sample_realization(&b, 10, 0.5, 1).unwrap();
        let md = martingale_differences(&r, 1.0).unwrap();
        assert!(md.xi1.iter().chain(&md.xi2).all(|&v| v == 0.0));
        assert!(matches!(
            martingale_differences(&r, 0.0),
            Err(Error::DegenerateNormalization { .. })
        ));

        // additive kernel: theta^2 = n p var + p E[h^2] / 2 = p (n + 1) for unit variance
        let (n, p) = (25, 0.4);
        let b = additive_kernel().bind(&rad).unwrap();
        let theta = (p * (n as f64 + 1.0)).sqrt();
        let r = sample_realization(&b, n, p, 2).unwrap();
        let md = martingale_differences(&r, theta).unwrap();
        let expected = r.u_value * pairs(n) / (n as f64 * theta);
        assert!((md.total() - expected).abs() < 1e-10);
    }

    #[test]
    fn realization_json_roundtrip() {
        let b = sign_kernel().bind(&DistributionSpec::Rademacher).unwrap();
        let r = sample_realization(&b, 70, 0.3, 99).unwrap();
        let s = r.to_json().unwrap();
        let back = Realization::from_json(&s).unwrap();
        assert_eq!(back, r);
        assert!(s.contains("\"bits\""));
    }
}
