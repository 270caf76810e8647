use incomplete_ustat::conditions::{eta2_of, ConditionSetup};
use incomplete_ustat::decomposition::{compute_ustat, hoeffding_parts, martingale_differences, xi_means};
use incomplete_ustat::harness::{replicate_standardized, Dilution, ExperimentConfig, Standardization};
use incomplete_ustat::harness::{ks_against, TargetLaw};
use incomplete_ustat::kernels::{additive_kernel, product_kernel, register_builtin_kernels, sign_kernel, KernelSpec};
use incomplete_ustat::moments::{enumerate_exact, moments_closed_form, moments_of_bound, Outcome};
use incomplete_ustat::sampling::{sample_replicate, DilutionGraph, DistributionSpec, SeedPolicy};
use incomplete_ustat::stats::{sample_variance_with_se, Estimate};

use proptest::prelude::*;

fn mixed_kernel() -> KernelSpec {
    KernelSpec::new("mixed", |x, y| x * y + x + y + x * x * y * y - 4.0)
}

fn mixed_law() -> DistributionSpec {
    DistributionSpec::discrete(vec![-2.0, 1.0], vec![1.0 / 3.0, 2.0 / 3.0]).unwrap()
}

/// `E[h(x, X)]` straight from the support.
fn g_brute(h: &KernelSpec, law: &[(f64, f64)], x: f64) -> f64 {
    law.iter().map(|&(v, w)| w * h.evaluate(x, v)).sum()
}

/// `sum_i E[xi_i^2 | x_<i, bits into i from earlier indices]` by enumerating
/// `X_i` and every later bit of row `i`.
fn eta2_brute(h: &KernelSpec, law: &[(f64, f64)], x: &[f64], z: &DilutionGraph, p: f64, theta: f64) -> f64 {
    let n = x.len();
    let nt = n as f64 * theta;
    let mut total = 0.0;
    for i in 0..n {
        let later = n - 1 - i;
        let earlier: Vec<usize> = (0..i).filter(|&j| z.get(j, i)).collect();
        for &(xi, wx) in law {
            let gi = g_brute(h, law, xi);
            let phi: f64 = earlier
                .iter()
                .map(|&j| h.evaluate(x[j], xi) - g_brute(h, law, x[j]) - gi)
                .sum();
            for bits in 0u32..(1 << later) {
                let on = bits.count_ones() as i32;
                let w = p.powi(on) * (1.0 - p).powi(later as i32 - on);
                let deg = (earlier.len() as i32 + on) as f64;
                let xi_val = (deg * gi + phi) / nt;
                total += wx * w * xi_val * xi_val;
            }
        }
    }
    total
}

fn eta2_case(kernel: &KernelSpec, dist: &DistributionSpec, n: usize, p: f64, seed: u64) {
    let seeds = SeedPolicy::new(seed);
    let setup = ConditionSetup::new(kernel, dist, n, p, &seeds).unwrap();
    let law = dist.support().unwrap();
    for r in 0..20 {
        let (x, z) = sample_replicate(n, dist, p, &mut seeds.rng("eta2-oracle", r));
        let fast = eta2_of(&setup, &x, &z).unwrap();
        let slow = eta2_brute(kernel, &law, &x, &z, p, setup.theta());
        assert!((fast - slow).abs() < 1e-12 * slow.abs().max(1.0), "{} r={r}: {fast} vs {slow}", kernel.name());
    }
}

#[test]
fn eta2_matches_brute_force_conditional_expectations() {
    eta2_case(&sign_kernel(), &DistributionSpec::Rademacher, 6, 0.5, 1);
    eta2_case(&additive_kernel(), &DistributionSpec::Rademacher, 6, 0.4, 2);
    eta2_case(&product_kernel(), &DistributionSpec::Rademacher, 5, 1.0, 3);
    eta2_case(&mixed_kernel(), &mixed_law(), 6, 0.5, 4);
    eta2_case(&mixed_kernel(), &mixed_law(), 7, 0.3, 5);
}

#[test]
fn eta2_mean_matches_enumerated_variance() {
    // E[eta_2] = E[sum xi_i^2] = Var(sum xi) = binom(n,2) Var U / (n theta)^2
    let (n, p) = (5, 0.5);
    let law = mixed_law();
    let setup = ConditionSetup::new(&mixed_kernel(), &law, n, p, &SeedPolicy::new(0)).unwrap();
    let bound = mixed_kernel().bind(&law).unwrap();
    let eta2 = |o: &Outcome<'_>| eta2_of(&setup, o.x, o.z).unwrap();
    let e = enumerate_exact(&bound, n, p, &[&eta2]).unwrap();
    let m = &e.moments;
    let c = (n * (n - 1) / 2) as f64;
    let expected = c * c * m.var_u_exact / (n as f64 * n as f64 * m.theta2);
    assert!((e.expectations[0] - expected).abs() < 1e-12, "{} vs {expected}", e.expectations[0]);
}

#[test]
fn mixed_kernel_enumerated_moments() {
    // g(x) = 2x^2 + x - 4: g(-2) = 2, g(1) = -1, so E[g^2] = 4/3 + 2/3 = 2
    // E[h^2] by hand over the four support pairs
    let law = mixed_law();
    let h = mixed_kernel();
    let support = law.support().unwrap();
    let eh2: f64 = support
        .iter()
        .flat_map(|&(a, wa)| support.iter().map(move |&(b, wb)| wa * wb * (a * b + a + b + a * a * b * b - 4.0).powi(2)))
        .sum();
    let bound = h.bind(&law).unwrap();
    let (kh2, kg2) = bound.second_moments().unwrap();
    assert!((kg2 - 2.0).abs() < 1e-12);
    assert!((kh2 - eh2).abs() < 1e-12);
    let m = moments_of_bound(&bound, 10, 0.5).unwrap();
    assert!((m.gamma2 - 1.0).abs() < 1e-12);
    assert!((m.beta2 - 0.5 * eh2).abs() < 1e-12);
    let o = incomplete_ustat::harness::run_oracle(&h, &law, 4, 0.5).unwrap();
    assert!(o.max_abs_error() < 1e-12, "{o:?}");
}

#[test]
fn x_and_z_are_independent() {
    let seeds = SeedPolicy::new(8);
    let (n, p, reps) = (30, 0.3, 5000);
    let mut prod = Vec::with_capacity(reps);
    for r in 0..reps {
        let (x, z) = sample_replicate(n, &DistributionSpec::StandardNormal, p, &mut seeds.rng("indep", r as u64));
        let s: f64 = x.iter().sum::<f64>() / (n as f64).sqrt();
        let e = z.edge_count() as f64;
        let mean_e = p * (n * (n - 1) / 2) as f64;
        let sd_e = (mean_e * (1.0 - p)).sqrt();
        prod.push(s * (e - mean_e) / sd_e);
    }
    assert!(Estimate::from_samples(&prod).within(0.0, 4.0));
}

#[test]
fn xi_means_vanish() {
    let kernel = additive_kernel().bind(&DistributionSpec::StandardNormal).unwrap();
    let m = moments_closed_form(&additive_kernel(), &DistributionSpec::StandardNormal, 50, 0.3).unwrap();
    let means = xi_means(&kernel, 50, 0.3, m.theta().unwrap(), 5000, &SeedPolicy::new(21)).unwrap();
    assert_eq!(means.len(), 50);
    for (i, e) in means.iter().enumerate() {
        assert!(e.within(0.0, 4.5), "xi_{i}: {e:?}");
    }
}

#[test]
fn standardized_sample_has_zero_mean_and_unit_variance() {
    let cfg = ExperimentConfig {
        kernel: "additive".into(),
        n_grid: vec![30],
        dilution: Dilution::Fixed { p: 0.5 },
        replications: 20000,
        seed: 3,
        ..ExperimentConfig::default()
    };
    let s = replicate_standardized(&cfg, 30).unwrap();
    let mean = Estimate::from_samples(&s.values);
    assert!(mean.within(0.0, 4.0), "{mean:?}");
    let var = sample_variance_with_se(&s.values);
    assert!(var.within(1.0, 5.0), "{var:?}");
}

#[test]
fn asymptotic_and_exact_standardization_agree_at_large_n() {
    for (kernel, dist) in [("sign", "rademacher"), ("additive", "standard_normal")] {
        let mut cfg = ExperimentConfig {
            kernel: kernel.into(),
            n_grid: vec![400],
            dilution: Dilution::Fixed { p: 0.1 },
            replications: 2000,
            seed: 17,
            ..ExperimentConfig::default()
        };
        cfg.distribution.family = dist.into();
        let exact = replicate_standardized(&cfg, 400).unwrap();
        cfg.standardization = Standardization::Asymptotic;
        let asym = replicate_standardized(&cfg, 400).unwrap();
        let d = (ks_against(&exact.values, TargetLaw::StandardNormal).unwrap()
            - ks_against(&asym.values, TargetLaw::StandardNormal).unwrap())
        .abs();
        assert!(d < 0.01, "{kernel}: {d}");
    }
}

#[test]
fn evaluation_count_is_sum_of_edge_counts() {
    let cfg = ExperimentConfig {
        kernel: "sign".into(),
        n_grid: vec![40],
        dilution: Dilution::Fixed { p: 0.25 },
        replications: 50,
        seed: 4,
        ..ExperimentConfig::default()
    };
    let s = replicate_standardized(&cfg, 40).unwrap();
    let seeds = cfg.seeds().child("batch", 40);
    let total: usize = (0..50)
        .map(|r| sample_replicate(40, &DistributionSpec::Rademacher, 0.25, &mut seeds.rng("replicate", r)).1.edge_count())
        .sum();
    assert_eq!(s.evaluations, total as u64);
}

fn law_strategy() -> impl Strategy<Value = DistributionSpec> {
    prop_oneof![
        Just(DistributionSpec::Rademacher),
        Just(DistributionSpec::StandardNormal),
        Just(DistributionSpec::uniform(-1.0, 1.0).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hoeffding_reconstruction(
        k in 0usize..4,
        law in law_strategy(),
        n in 3usize..=20,
        p in prop::sample::select(vec![0.2, 0.5, 1.0]),
        seed in any::<u64>(),
    ) {
        let kernel = &register_builtin_kernels()[k];
        let bound = kernel.bind(&law).unwrap();
        let (x, z) = sample_replicate(n, &law, p, &mut SeedPolicy::new(seed).rng("prop", 0));
        let direct = compute_ustat(&x, &z, kernel).unwrap();
        let r = hoeffding_parts(&x, &z, &bound).unwrap();
        prop_assert!((r.reconstructed() - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        prop_assert_eq!(r.u_value, direct);
    }

    #[test]
    fn xi_sum_is_scaled_ustat(n in 3usize..=15, seed in any::<u64>()) {
        let law = DistributionSpec::StandardNormal;
        let bound = additive_kernel().bind(&law).unwrap();
        let (x, z) = sample_replicate(n, &law, 0.5, &mut SeedPolicy::new(seed).rng("prop", 1));
        let r = hoeffding_parts(&x, &z, &bound).unwrap();
        let md = martingale_differences(&r, 0.7).unwrap();
        let scaled = r.u_value * (n * (n - 1) / 2) as f64 / (n as f64 * 0.7);
        prop_assert!((md.total() - scaled).abs() <= 1e-10 * scaled.abs().max(1.0));
    }

    #[test]
    fn graph_hex_round_trip(n in 2usize..=40, p in 0.05f64..=1.0, seed in any::<u64>()) {
        let z = incomplete_ustat::sampling::sample_dilution(n, p, seed).unwrap();
        let back = DilutionGraph::from_hex(n, p, &z.to_hex()).unwrap();
        prop_assert_eq!(back, z);
    }
}
