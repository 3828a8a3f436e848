use approx::assert_relative_eq;
use nalgebra::DVector;
use proptest::prelude::*;

use fedlqr::ensemble::{
    common_scalar_gain_feasible, generate_ensemble, generate_ensemble_stabilized, measure_heterogeneity,
    rollout, rollout_cost, sample_initial_state, Ensemble, HeterogeneityParams, InitDist,
};
use fedlqr::harness::presets::{paper_k0, paper_nominal, paper_q, paper_r};
use fedlqr::linalg::{spectral_norm, spectral_radius, Mat};
use fedlqr::lqr::{value_matrix, CostSpec, Gain, LinearSystem};
use fedlqr::rng::substream;
use fedlqr::zo::{
    empirical_variance_probe, estimate_gradient, estimate_gradient_with, sample_frobenius_sphere,
    variance_probe_errors, CostOracle, ZoConfig,
};
use fedlqr::Error;

fn nominal_cost() -> CostSpec {
    CostSpec::with_identity_init(paper_q(), paper_r(), 3f64.sqrt()).unwrap()
}

fn scalar(a: f64, b: f64) -> LinearSystem {
    LinearSystem::new(Mat::from_element(1, 1, a), Mat::from_element(1, 1, b)).unwrap()
}

#[test]
fn paper_sweep_ensembles_are_stabilized_by_k0() {
    let het = HeterogeneityParams::identity_masks(0.5, 0.5, 3, 3);
    for m in [1, 5, 10] {
        let e = generate_ensemble_stabilized(&paper_nominal(), m, &het, 7, &paper_k0(), 10_000).unwrap();
        assert_eq!(e.m(), m);
        assert_eq!(e.systems[0], paper_nominal());
        assert!(e.jointly_stabilizes(&paper_k0()).unwrap());
        let (e1, e2) = measure_heterogeneity(&e);
        assert!(e1 <= 0.5 && e2 <= 0.5);
    }
}

#[test]
fn heterogeneity_of_sign_flipped_scalars() {
    let a = Ensemble::from_systems(vec![scalar(0.7, 1.0), scalar(-0.7, 1.0)]).unwrap();
    assert_relative_eq!(measure_heterogeneity(&a).0, 1.4);
    let b = Ensemble::from_systems(vec![scalar(1.0, 0.3), scalar(1.0, -0.3)]).unwrap();
    assert_eq!(measure_heterogeneity(&b), (0.0, 0.6));
    let one = Ensemble::from_systems(vec![scalar(1.0, 0.3)]).unwrap();
    assert_eq!(measure_heterogeneity(&one), (0.0, 0.0));
}

#[test]
fn ensemble_rejects_mixed_dimensions() {
    let big = LinearSystem::new(Mat::identity(2, 2), Mat::identity(2, 1)).unwrap();
    assert!(Ensemble::from_systems(vec![scalar(1.0, 1.0), big]).is_err());
    assert!(Ensemble::from_systems(vec![]).is_err());
}

#[test]
fn ensemble_file_round_trip() {
    let het = HeterogeneityParams::identity_masks(0.3, 0.2, 3, 3);
    let e = generate_ensemble(&paper_nominal(), 4, &het, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.json");
    e.save(&path).unwrap();
    assert_eq!(Ensemble::load(&path).unwrap(), e);
    assert!(e.to_json().unwrap().contains("\"nominal_index\""));
}

#[test]
fn rollout_states_follow_the_dynamics() {
    let sys = paper_nominal();
    let cost = nominal_cost();
    let x0 = DVector::from_vec(vec![1.0, -0.5, 2.0]);
    let k = paper_k0();
    let tr = rollout(&sys, &cost, &k, &x0, 25).unwrap();
    assert_eq!(tr.states.len(), 26);
    assert_eq!(tr.inputs.len(), 25);
    for t in 0..25 {
        let next = &sys.a * &tr.states[t] + &sys.b * &tr.inputs[t];
        assert_eq!(tr.states[t + 1], next);
        let x = &tr.states[t];
        let w = &cost.q + k.k.transpose() * &cost.r * &k.k;
        assert_relative_eq!(tr.stage_costs[t], x.dot(&(&w * x)), max_relative = 1e-12);
    }
    assert_relative_eq!(tr.total_cost(), rollout_cost(&sys, &cost, &k, &x0, 25).unwrap(), max_relative = 1e-12);
}

#[test]
fn rollout_from_zero_costs_nothing() {
    let x0 = DVector::zeros(3);
    assert_eq!(rollout_cost(&paper_nominal(), &nominal_cost(), &paper_k0(), &x0, 50).unwrap(), 0.0);
}

#[test]
fn rollout_matches_geometric_series() {
    let sys = scalar(0.5, 0.0);
    // With k = 0 the input weight never enters.
    let cost = CostSpec::with_identity_init(Mat::identity(1, 1), Mat::identity(1, 1), 1.0).unwrap();
    let x0 = DVector::from_element(1, 2.0);
    let tau = 30;
    let expected: f64 = (0..tau).map(|t| 0.25f64.powi(t) * 4.0).sum();
    let got = rollout_cost(&sys, &cost, &Gain::zeros(1, 1), &x0, tau as usize).unwrap();
    assert_relative_eq!(got, expected, max_relative = 1e-12);
}

#[test]
fn long_rollout_matches_value_matrix() {
    let sys = paper_nominal();
    let cost = nominal_cost();
    let x0 = DVector::from_vec(vec![0.3, -1.0, 0.5]);
    let p = value_matrix(&sys, &cost, &paper_k0()).unwrap();
    let got = rollout_cost(&sys, &cost, &paper_k0(), &x0, 400).unwrap();
    assert_relative_eq!(got, x0.dot(&(&p * &x0)), max_relative = 1e-6);
}

#[test]
fn diverging_rollout_reports_partial_cost() {
    let sys = scalar(3.0, 1.0);
    let cost = CostSpec::with_identity_init(Mat::identity(1, 1), Mat::identity(1, 1), 1.0).unwrap();
    let r = rollout_cost(&sys, &cost, &Gain::zeros(1, 1), &DVector::from_element(1, 1.0), 1000);
    assert!(matches!(r, Err(Error::TrajectoryDiverged { partial_cost, .. }) if partial_cost > 0.0));
    assert!(matches!(
        rollout_cost(&sys, &cost, &Gain::zeros(1, 1), &DVector::from_element(1, 1.0), 0),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn initial_state_laws() {
    let mut rng = substream(1, &[]);
    let pm = InitDist::PointMass { x0: vec![1.0, 1.0, 1.0] };
    assert_eq!(sample_initial_state(&pm, &mut rng), DVector::from_element(3, 1.0));
    let sphere = InitDist::BoundedSphere { dim: 3, radius: 2.5 };
    for _ in 0..100 {
        assert_relative_eq!(sample_initial_state(&sphere, &mut rng).norm(), 2.5, max_relative = 1e-12);
    }
    let normal = InitDist::StandardNormal { dim: 3 };
    let n = 100_000;
    let mut mean = DVector::zeros(3);
    for _ in 0..n {
        mean += sample_initial_state(&normal, &mut rng);
    }
    assert!((mean / n as f64).norm() <= 0.02 * 3f64.sqrt());
}

#[test]
fn scalar_gain_examples() {
    assert_eq!(common_scalar_gain_feasible(&[(1.5, 1.0), (-1.5, 1.0)]), None);
    assert_eq!(common_scalar_gain_feasible(&[(1.0, 0.3), (1.0, -0.3)]), None);
    assert_eq!(common_scalar_gain_feasible(&[(0.5, 1.0), (-0.5, 1.0)]), Some(0.0));
    assert_eq!(common_scalar_gain_feasible(&[(2.0, 0.0)]), None);
    assert!(common_scalar_gain_feasible(&[(0.5, 0.0), (3.0, 2.0)]).is_some());
}

#[test]
fn sphere_draws_are_centered_with_exact_norm() {
    let mut rng = substream(2, &[]);
    let (nx, nu, r) = (3, 2, 0.7);
    let n = 100_000;
    let mut mean = Mat::zeros(nu, nx);
    for _ in 0..n {
        let u = sample_frobenius_sphere(nx, nu, r, &mut rng);
        assert_relative_eq!(u.norm(), r, max_relative = 1e-14);
        mean += u;
    }
    mean /= n as f64;
    let tol = 5.0 * r / ((n * nx * nu) as f64).sqrt();
    assert!(mean.amax() <= tol, "{} > {tol}", mean.amax());
}

#[test]
fn one_dimensional_sphere_is_a_fair_coin() {
    let mut rng = substream(3, &[]);
    let n = 10_000;
    let plus = (0..n).filter(|_| sample_frobenius_sphere(1, 1, 0.2, &mut rng)[(0, 0)] > 0.0).count() as f64;
    let chi2 = (plus - 5000.0).powi(2) / 5000.0 * 2.0;
    // 1 degree of freedom, 99.9% quantile.
    assert!(chi2 < 10.83, "chi2 {chi2}");
}

#[test]
fn estimator_from_zero_state_is_zero() {
    let mut rng = substream(4, &[]);
    let cfg = ZoConfig { n_s: 8, tau: 10, r: 0.1 };
    let dist = InitDist::PointMass { x0: vec![0.0; 3] };
    let est = estimate_gradient(&paper_nominal(), &nominal_cost(), &paper_k0(), &cfg, &dist, &mut rng).unwrap();
    assert_eq!(est.grad_hat, Mat::zeros(3, 3));
    assert_eq!(est.diverged_count, 0);
}

#[test]
fn estimator_is_deterministic_per_seed() {
    let cfg = ZoConfig { n_s: 5, tau: 15, r: 0.1 };
    let dist = InitDist::StandardNormal { dim: 3 };
    let run = |seed| {
        let mut rng = substream(seed, &[]);
        estimate_gradient(&paper_nominal(), &nominal_cost(), &paper_k0(), &cfg, &dist, &mut rng).unwrap()
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9).grad_hat, run(10).grad_hat);
    assert!(run(9).grad_hat.iter().all(|v| v.is_finite()));
}

#[test]
fn estimator_rejects_bad_config() {
    let mut rng = substream(0, &[]);
    let dist = InitDist::StandardNormal { dim: 3 };
    for cfg in [ZoConfig { n_s: 0, tau: 1, r: 0.1 }, ZoConfig { n_s: 1, tau: 0, r: 0.1 }, ZoConfig { n_s: 1, tau: 1, r: 0.0 }] {
        let r = estimate_gradient(&paper_nominal(), &nominal_cost(), &paper_k0(), &cfg, &dist, &mut rng);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}

#[test]
fn scalar_estimator_mean_is_the_central_difference() {
    // With n_u = n_x = 1 the perturbation is ±r, so E[Ĝ] = (C(k+r) − C(k−r)) / 2r exactly.
    let sys = scalar(0.8, 1.0);
    let cost = CostSpec::with_identity_init(Mat::identity(1, 1), Mat::identity(1, 1), 1.0).unwrap();
    let (k, r, n) = (0.3, 0.1, 400_000);
    let c = |v: f64| fedlqr::lqr::exact_cost(&sys, &cost, &Gain { k: Mat::from_element(1, 1, v) }).unwrap();
    let (cp, cm) = (c(k + r), c(k - r));
    let mean = (cp - cm) / (2.0 * r);
    let sd = ((cp * cp + cm * cm) / (2.0 * r * r) - mean * mean).sqrt() / (n as f64).sqrt();
    let cfg = ZoConfig { n_s: n, tau: 1, r };
    let mut rng = substream(6, &[]);
    let g = Gain { k: Mat::from_element(1, 1, k) };
    let est = estimate_gradient_with(&sys, &cost, &g, &cfg, &InitDist::PointMass { x0: vec![1.0] }, &mut rng, CostOracle::Analytic)
        .unwrap();
    let got = est.grad_hat[(0, 0)];
    assert!((got - mean).abs() <= 5.0 * sd, "{got} vs {mean} ± {sd}");
}

#[test]
fn averaging_over_agents_reduces_error() {
    let sys = paper_nominal();
    let cost = nominal_cost();
    let cfg = ZoConfig { n_s: 5, tau: 15, r: 0.1 };
    let dist = InitDist::StandardNormal { dim: 3 };
    let mut rng = substream(8, &[]);
    let one = empirical_variance_probe(&[(sys.clone(), paper_k0())], &cost, &cfg, &dist, 200, &mut rng).unwrap();
    let four = empirical_variance_probe(&vec![(sys.clone(), paper_k0()); 4], &cost, &cfg, &dist, 200, &mut rng).unwrap();
    let ratio = four / one;
    assert!((0.5 / 1.5..=0.5 * 1.5).contains(&ratio), "ratio {ratio}");
    assert!(empirical_variance_probe(&[(sys, paper_k0())], &cost, &cfg, &dist, 10, &mut rng).is_err());
}

#[test]
fn variance_probe_is_deterministic() {
    let cfg = ZoConfig { n_s: 3, tau: 10, r: 0.1 };
    let dist = InitDist::StandardNormal { dim: 3 };
    let agents = vec![(paper_nominal(), paper_k0())];
    let run = || {
        let mut rng = substream(12, &[]);
        variance_probe_errors(&agents, &nominal_cost(), &cfg, &dist, 40, &mut rng, CostOracle::Rollout).unwrap()
    };
    assert_eq!(run(), run());
}

fn scalar_pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-3.0f64..3.0, prop_oneof![Just(0.0), -2.0f64..2.0]), 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn generated_heterogeneity_is_bounded(eps1 in 0.0f64..1.0, eps2 in 0.0f64..1.0, m in 1usize..8, seed in any::<u64>()) {
        let het = HeterogeneityParams {
            eps1,
            eps2,
            z1: Mat::from_row_slice(3, 3, &[3.5, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.1]),
            z2: Mat::from_row_slice(3, 3, &[1.5, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 1.0]),
        };
        let e = generate_ensemble(&paper_nominal(), m, &het, seed).unwrap();
        let (m1, m2) = measure_heterogeneity(&e);
        prop_assert!(m1 <= eps1 * spectral_norm(&het.z1) * (1.0 + 1e-12));
        prop_assert!(m2 <= eps2 * spectral_norm(&het.z2) * (1.0 + 1e-12));
        prop_assert_eq!(&e, &generate_ensemble(&paper_nominal(), m, &het, seed).unwrap());
    }

    #[test]
    fn scalar_gain_agrees_with_grid(pairs in scalar_pairs()) {
        let feasible = |k: f64| pairs.iter().all(|&(a, b)| (a - b * k).abs() < 1.0);
        let got = common_scalar_gain_feasible(&pairs);
        if let Some(k) = got {
            prop_assert!(feasible(k));
        } else {
            // No grid point in [−100, 100] at step 1e-3 may be feasible.
            prop_assert!(!(-100_000..=100_000).any(|i| feasible(i as f64 * 1e-3)));
        }
    }

    #[test]
    fn truncated_cost_converges_geometrically(seed in any::<u64>()) {
        let mut rng = substream(seed, &[]);
        let sys = fedlqr::harness::suites::random_system(2, 2, &mut rng);
        let cost = fedlqr::harness::suites::random_cost(2, 2, &mut rng);
        let Ok((_, k)) = fedlqr::lqr::optimal_gain(&sys, &cost) else { return Ok(()) };
        let f = sys.closed_loop(&k).unwrap();
        let p = value_matrix(&sys, &cost, &k).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let t = 40;
        let c_t = rollout_cost(&sys, &cost, &k, &x0, t).unwrap();
        let c_2t = rollout_cost(&sys, &cost, &k, &x0, 2 * t).unwrap();
        let c_inf = x0.dot(&(&p * &x0));
        prop_assert!(c_t <= c_2t && c_2t <= c_inf * (1.0 + 1e-12));
        // The tail past T is x_Tᵀ P x_T with x_T = F^T x₀, which shrinks like ρ(F)^{2T}.
        let f_t = f.pow(t as u32);
        let tail = spectral_norm(&f_t).powi(2) * spectral_norm(&p) * x0.norm_squared();
        prop_assert!(c_2t - c_t <= tail * (1.0 + 1e-9) + 1e-12 * c_inf);
        let rho = spectral_radius(&f).unwrap();
        prop_assert!(spectral_norm(&f.pow(4 * t as u32)).powf(1.0 / (4 * t) as f64) <= rho.max(1e-3) * 1.5);
    }
}
