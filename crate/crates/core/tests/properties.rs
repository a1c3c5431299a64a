use std::sync::Arc;

use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use volterra_core::asymptotics::{self, LilConfig};
use volterra_core::covariance;
use volterra_core::grid_hilbert::{self as gh, GridFunction, TimeGrid};
use volterra_core::kernels::{BumpShape, KernelSpec};
use volterra_core::localtime;
use volterra_core::silt::{self, SimplexConfig};
use volterra_core::simulate;
use volterra_core::Seed;

fn grid(m: usize) -> Arc<TimeGrid> {
    TimeGrid::uniform(m).unwrap().shared()
}

fn function(g: &Arc<TimeGrid>, values: &[f64]) -> GridFunction {
    GridFunction::new(g.clone(), values[..g.len()].to_vec()).unwrap()
}

fn builtin(which: u8, rate: f64) -> KernelSpec {
    match which % 3 {
        0 => KernelSpec::wiener(),
        1 => KernelSpec::ornstein_uhlenbeck(rate).unwrap(),
        _ => KernelSpec::brownian_bridge(),
    }
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_product_symmetric_and_bounded(a in values(33), b in values(33)) {
        let g = grid(32);
        let (f, h) = (function(&g, &a), function(&g, &b));
        let fh = gh::inner_product(&f, &h).unwrap();
        prop_assert_eq!(fh, gh::inner_product(&h, &f).unwrap());
        prop_assert!(fh.abs() <= f.norm() * h.norm() + 1e-12);
        prop_assert!(f.norm_sq() >= 0.0);
    }

    #[test]
    fn gram_determinant_is_product_of_schmidt_norms(
        raw in prop::collection::vec(values(17), 1..6),
    ) {
        let g = grid(16);
        let fs: Vec<GridFunction> = raw.iter().map(|v| function(&g, v)).collect();
        let gram = gh::gram(&fs).unwrap();
        let eig = SymmetricEigen::new(gram.matrix.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
        prop_assume!(lo > 0.0 && hi / lo <= 1e6);
        let basis = gh::gram_schmidt(&fs).unwrap();
        let product: f64 = basis.iter().map(|e| e.norm_sq()).product();
        prop_assert!((gram.determinant - product).abs() <= 1e-10 * product, "{} vs {}", gram.determinant, product);
        prop_assert!(gram.determinant >= 0.0);
    }

    #[test]
    fn projection_identities(
        raw in prop::collection::vec(values(25), 1..7),
        hv in values(25),
    ) {
        let g = grid(24);
        let fs: Vec<GridFunction> = raw.iter().map(|v| function(&g, v)).collect();
        let gram = gh::gram(&fs).unwrap();
        let eig = SymmetricEigen::new(gram.matrix.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
        prop_assume!(lo > 0.0 && hi / lo <= 1e6);
        let h = function(&g, &hv);
        let (p, p_sq) = gh::project(&h, &fs).unwrap();
        let (pp, _) = gh::project(&p, &fs).unwrap();
        let drift = pp.sub(&p).unwrap().norm();
        prop_assert!(drift <= 1e-10 * (1.0 + p.norm()));
        let rest = h.sub(&p).unwrap().norm_sq();
        prop_assert!((h.norm_sq() - p_sq - rest).abs() <= 1e-10 * h.norm_sq().max(1e-300));
        let quad = gh::gram_quadratic_form(&h, &fs).unwrap();
        prop_assert!((quad - p_sq).abs() <= 1e-8 * p_sq.max(1e-12), "{} vs {}", quad, p_sq);
    }

    #[test]
    fn builtin_kernels_vanish_above_diagonal(which in 0u8..3, rate in 0.1..4.0f64, t in 0.0..1.0f64, gap in 1e-9..1.0f64) {
        let spec = builtin(which, rate);
        let s = t + gap;
        prop_assume!(s <= 1.0);
        prop_assert_eq!(spec.eval(t, s), 0.0);
        let fbm = KernelSpec::fractional_bm(0.7).unwrap();
        prop_assert_eq!(fbm.eval(t, s), 0.0);
    }

    #[test]
    fn stationary_flag_is_honest(rate in 0.1..4.0f64, s in 0.0..0.5f64, lag in 0.0..0.4f64, shift in 0.0..0.1f64) {
        let spec = KernelSpec::ornstein_uhlenbeck(rate).unwrap();
        prop_assert!(spec.stationary);
        let t = s + lag;
        prop_assert!((spec.eval(t, s) - spec.eval(t + shift, s + shift)).abs() <= 1e-10);
    }

    #[test]
    fn perturbation_stays_within_amplitude(a in 0.0..0.5f64, lag in any::<bool>(), t in 0.0..1.0f64, u in 0.0..1.0f64) {
        let shape = if lag { BumpShape::Lag } else { BumpShape::Smooth };
        let base = KernelSpec::ornstein_uhlenbeck(1.0).unwrap();
        let pert = KernelSpec::perturbed(base.clone(), a, shape).unwrap();
        let s = u * t;
        prop_assert!((pert.eval(t, s) - base.eval(t, s)).abs() <= a + 1e-12);
    }

    #[test]
    fn pair_stats_identity(which in 0u8..3, rate in 0.2..3.0f64, s in 0.0..0.9f64, gap in 0.01..0.5f64) {
        let spec = builtin(which, rate);
        let t = (s + gap).min(0.99);
        prop_assume!(t > s);
        let p = covariance::pair_stats(&spec, s, t).unwrap();
        let lhs = p.var_t - 2.0 * p.cov + p.var_s;
        prop_assert!((lhs - p.inc_var).abs() <= 1e-10 * p.var_t.max(p.inc_var) + 1e-14, "{} vs {}", lhs, p.inc_var);
    }

    #[test]
    fn expected_local_time_decays_in_level(eps in 0.005..0.2f64, y in 0.0..2.0f64, dy in 0.01..1.0f64) {
        let w = KernelSpec::wiener();
        let near = localtime::expected_local_time(&w, 1.0, y, eps).unwrap();
        let far = localtime::expected_local_time(&w, 1.0, y + dy, eps).unwrap();
        prop_assert!(far < near);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn covariance_symmetric_psd(which in 0u8..3, rate in 0.2..3.0f64, m in prop::sample::select(vec![16usize, 32, 64])) {
        let spec = builtin(which, rate);
        let cov = covariance::cov_matrix(&spec, &grid(m)).unwrap();
        let v = cov.values();
        prop_assert_eq!(v, &v.transpose());
        prop_assert_eq!(v[(0, 0)], 0.0);
        let trace = v.trace();
        let min = SymmetricEigen::new(v.clone()).eigenvalues.min();
        prop_assert!(min >= -1e-10 * trace, "{}", min);
        prop_assert!(cov.factor().unwrap().jitter <= 1e-10 * cov.max_diagonal());
    }

    #[test]
    fn sampling_is_a_function_of_the_seed(master in any::<u64>(), stream in 0u64..1000, which in 0u8..3) {
        let spec = builtin(which, 1.0);
        let g = grid(16);
        let seed = Seed::with_stream(master, stream);
        let a = simulate::sample_volterra(&spec, &g, 8, seed).unwrap();
        let b = simulate::sample_volterra(&spec, &g, 8, seed).unwrap();
        prop_assert_eq!(a.content_hash(), b.content_hash());
        let cov = covariance::cov_matrix(&spec, &g).unwrap();
        let e = simulate::sample_exact(&cov, 8, seed).unwrap();
        for p in 0..8 {
            prop_assert_eq!(a.path(p)[0], 0.0);
            prop_assert_eq!(e.path(p)[0], 0.0);
        }
    }

    #[test]
    fn wiener_paths_are_noise_partial_sums(master in any::<u64>()) {
        let ens = simulate::sample_volterra(&KernelSpec::wiener(), &grid(32), 4, Seed::new(master)).unwrap();
        for p in 0..4 {
            let mut acc = 0.0;
            let x = ens.path(p);
            for (i, dw) in ens.noise(p).unwrap().iter().enumerate() {
                acc += dw;
                prop_assert_eq!(x[i + 1], acc);
            }
        }
    }

    #[test]
    fn occupation_identity_and_monotone_local_time(master in any::<u64>(), eps in prop::sample::select(vec![0.01, 0.04, 0.16]), y in -1.0..1.0f64) {
        let g = grid(64);
        let ens = simulate::sample_volterra(&KernelSpec::ornstein_uhlenbeck(1.0).unwrap(), &g, 2, Seed::new(master)).unwrap();
        for p in 0..2 {
            let mass = localtime::occupation_mass(ens.times(), ens.path(p), eps).unwrap();
            prop_assert!((mass - 1.0).abs() <= 1e-8, "{}", mass);
            let curve = localtime::mollified_local_time(ens.times(), ens.path(p), eps, y).unwrap();
            prop_assert!(curve.values.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn exceedance_nonincreasing_in_epsilon(master in any::<u64>(), ou in any::<bool>()) {
        let spec = if ou { KernelSpec::ornstein_uhlenbeck(1.0).unwrap() } else { KernelSpec::wiener() };
        let mut cfg = LilConfig::new(0.5, 3, 12, 200, Seed::new(master));
        cfg.epsilons = vec![0.0, 0.1, 0.5, 1.0];
        let r = asymptotics::lil_ratios(&spec, &cfg).unwrap();
        for i in 0..r.times.len() {
            for e in 1..cfg.epsilons.len() {
                prop_assert!(r.exceedance_freq[e][i] <= r.exceedance_freq[e - 1][i]);
            }
        }
        prop_assert!(r.envelope.iter().all(|&h| h > 0.0 && h.is_finite()));
    }

    #[test]
    fn tail_probabilities_nonincreasing(master in any::<u64>(), mut lambdas in prop::collection::vec(0.0..1.5f64, 2..6)) {
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        prop_assume!(lambdas.len() >= 2);
        let cov = covariance::cov_matrix(&KernelSpec::wiener(), &grid(16)).unwrap();
        let r = asymptotics::tail_decay_from(&cov, &lambdas, 1000, Seed::new(master)).unwrap();
        prop_assert!(r.rows.windows(2).all(|w| w[1].probability <= w[0].probability));
    }

    #[test]
    fn plain_silt_nonnegative_and_rosen_k2_centered(master in any::<u64>(), eps in 0.01..0.5f64) {
        let ens = simulate::sample_planar(&KernelSpec::wiener(), &grid(16), 16, Seed::new(master)).unwrap();
        let (plain, rosen) = silt::silt_both(&ens, eps, &SimplexConfig::nested(2)).unwrap();
        prop_assert!(plain.per_path.iter().all(|&v| v >= 0.0));
        // the k = 2 centering is one constant shared by every path
        let shift = plain.per_path[0] - rosen.per_path[0];
        for (p, r) in plain.per_path.iter().zip(&rosen.per_path) {
            prop_assert!((p - r - shift).abs() <= 1e-9 * p.abs().max(1.0));
        }
    }
}

#[test]
fn l2_moment_scales_inversely_with_kernel() {
    let g = TimeGrid::uniform(64).unwrap();
    let base = KernelSpec::ornstein_uhlenbeck(1.0).unwrap();
    let one = localtime::l2_moment_formula(&base, &g).unwrap();
    for factor in [2.0, 0.5] {
        let scaled = KernelSpec::scaled(base.clone(), factor).unwrap();
        let v = localtime::l2_moment_formula(&scaled, &g).unwrap();
        assert!((v.estimate * factor - one.estimate).abs() <= 1e-10 * one.estimate);
    }
}
