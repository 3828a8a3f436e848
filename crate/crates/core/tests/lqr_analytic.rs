use approx::assert_relative_eq;
use proptest::prelude::*;

use fedlqr::harness::presets::{paper_k0, paper_nominal, paper_q, paper_r};
use fedlqr::harness::suites::{perturb_stabilizing, random_cost, random_system};
use fedlqr::linalg::{spectral_norm, Mat};
use fedlqr::lqr::{
    average_cost_and_gradient, exact_cost, gradient_domination_certificate, is_stabilizing, optimal_gain,
    solve_average_optimal_gain, solve_lqr, CostSpec, Gain, LinearSystem,
};
use fedlqr::rng::substream;
use fedlqr::Error;

fn nominal_cost() -> CostSpec {
    CostSpec::with_identity_init(paper_q(), paper_r(), 3f64.sqrt()).unwrap()
}

fn one(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

#[test]
fn scalar_cost_matches_geometric_series() {
    // x' = (a − bk)x, stage (q + rk²)x², E[x0²] = s: C = s(q + rk²)/(1 − (a − bk)²).
    let (a, b, k, q, r, s) = (0.9, 0.5, 0.6, 2.0, 0.3, 1.7);
    let sys = LinearSystem::new(one(a), one(b)).unwrap();
    let cost = CostSpec::new(one(q), one(r), one(s), s.sqrt()).unwrap();
    let f = a - b * k;
    let expected = s * (q + r * k * k) / (1.0 - f * f);
    assert_relative_eq!(exact_cost(&sys, &cost, &Gain { k: one(k) }).unwrap(), expected, max_relative = 1e-12);
    // dC/dk by the quotient rule.
    let d = s * (2.0 * r * k * (1.0 - f * f) - (q + r * k * k) * 2.0 * f * b) / (1.0 - f * f).powi(2);
    let grad = solve_lqr(&sys, &cost, &Gain { k: one(k) }).unwrap().grad[(0, 0)];
    assert_relative_eq!(grad, d, max_relative = 1e-10);
}

#[test]
fn covariance_matches_truncated_sum() {
    let sys = paper_nominal();
    let cost = nominal_cost();
    let sol = solve_lqr(&sys, &cost, &paper_k0()).unwrap();
    let f = sys.closed_loop(&paper_k0()).unwrap();
    let mut sum = Mat::zeros(3, 3);
    let mut term = cost.sigma0.clone();
    for _ in 0..2000 {
        sum += &term;
        term = &f * term * f.transpose();
    }
    assert_relative_eq!(sol.sigma_k, sum, max_relative = 1e-10);
    assert_relative_eq!(sol.cost, (&sol.p_k * &cost.sigma0).trace(), max_relative = 1e-14);
}

#[test]
fn nominal_costs_at_k0_and_optimum() {
    let sys = paper_nominal();
    let cost = nominal_cost();
    let (_, k_star) = optimal_gain(&sys, &cost).unwrap();
    let c0 = exact_cost(&sys, &cost, &paper_k0()).unwrap();
    let cs = exact_cost(&sys, &cost, &k_star).unwrap();
    assert!(c0 > cs);
    assert!(solve_lqr(&sys, &cost, &k_star).unwrap().grad.norm() < 1e-9);
}

#[test]
fn destabilizing_gain_is_rejected() {
    let sys = paper_nominal();
    let cost = nominal_cost();
    assert_eq!(exact_cost(&sys, &cost, &Gain::zeros(3, 3)), Err(Error::UnstableSystem { index: None }));
    assert!(!is_stabilizing(&sys, &Gain::zeros(3, 3)).unwrap());
    assert!(is_stabilizing(&sys, &paper_k0()).unwrap());
}

#[test]
fn dimension_mismatch_is_invalid_input() {
    let sys = LinearSystem::new(Mat::identity(2, 2) * 0.5, Mat::identity(2, 1)).unwrap();
    assert!(matches!(exact_cost(&sys, &nominal_cost(), &Gain::zeros(1, 2)), Err(Error::InvalidInput(_))));
    assert!(LinearSystem::new(Mat::identity(2, 2), Mat::identity(3, 1)).is_err());
}

#[test]
fn average_optimum_of_identical_systems_is_the_dare_gain() {
    let sys = paper_nominal();
    let cost = nominal_cost();
    let (_, k_star) = optimal_gain(&sys, &cost).unwrap();
    let k = solve_average_optimal_gain(&[sys.clone(), sys], &cost, &paper_k0(), 0.1, 1e-9).unwrap();
    assert!((&k.k - &k_star.k).amax() < 1e-7);
}

#[test]
fn average_optimum_zeroes_the_average_gradient() {
    let a = LinearSystem::new(Mat::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.8]), Mat::identity(2, 2)).unwrap();
    let b = LinearSystem::new(Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.1, 0.9]), Mat::identity(2, 2) * 1.2).unwrap();
    let cost = CostSpec::with_identity_init(Mat::identity(2, 2), Mat::identity(2, 2), 2f64.sqrt()).unwrap();
    let start = Gain { k: Mat::identity(2, 2) * 0.9 };
    let k = solve_average_optimal_gain(&[a.clone(), b.clone()], &cost, &start, 0.1, 1e-10).unwrap();
    let (c, g) = average_cost_and_gradient(&[a.clone(), b.clone()], &cost, &k).unwrap();
    assert!(g.norm() <= 1e-10);
    let (c_start, _) = average_cost_and_gradient(&[a, b], &cost, &start).unwrap();
    assert!(c < c_start);
}

#[test]
fn average_optimum_needs_a_stabilizing_start() {
    let sys = paper_nominal();
    let r = solve_average_optimal_gain(&[sys], &nominal_cost(), &Gain::zeros(3, 3), 0.1, 1e-9);
    assert!(matches!(r, Err(Error::PreconditionFailed(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimum_is_a_global_minimum_and_gradient_dominates(seed in any::<u64>()) {
        let mut rng = substream(seed, &[]);
        let cost = random_cost(2, 2, &mut rng);
        let sys = random_system(2, 2, &mut rng);
        let (_, k_star) = optimal_gain(&sys, &cost).unwrap();
        let g = perturb_stabilizing(std::slice::from_ref(&sys), &k_star, &mut rng);
        let c = exact_cost(&sys, &cost, &g).unwrap();
        let c_star = exact_cost(&sys, &cost, &k_star).unwrap();
        prop_assert!(c >= c_star - 1e-9 * c_star);
        let (gap, bound) = gradient_domination_certificate(&sys, &cost, &g, &k_star).unwrap();
        prop_assert!(gap <= bound * (1.0 + 1e-8) + 1e-10 * c_star);
    }

    #[test]
    fn cost_is_positive_and_sigma_dominates_sigma0(seed in any::<u64>()) {
        let mut rng = substream(seed, &[1]);
        let cost = random_cost(3, 2, &mut rng);
        let sys = random_system(3, 2, &mut rng);
        let (_, k_star) = optimal_gain(&sys, &cost).unwrap();
        let sol = solve_lqr(&sys, &cost, &k_star).unwrap();
        prop_assert!(sol.cost > 0.0);
        prop_assert!(fedlqr::linalg::is_symmetric_psd(&(&sol.sigma_k - &cost.sigma0)));
        prop_assert!(spectral_norm(&sol.sigma_k) >= cost.mu * (1.0 - 1e-12));
    }
}
