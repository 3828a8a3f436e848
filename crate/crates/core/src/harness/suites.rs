//! Randomized inequality suites: each draws small random ensembles and
//! stabilizing gains, evaluates a bound, and compares it with the exact
//! quantity computed from the analytic LQR solution.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bounds::{closeness_bounds_per_agent, het_bound, smoothness_constants, uniform_bounds};
use crate::ensemble::{generate_ensemble, measure_heterogeneity, Ensemble, HeterogeneityParams};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Mat};
use crate::lqr::{
    default_average_tol, optimal_gain, solve_all, solve_average_optimal_gain, CostSpec, Gain,
    LinearSystem,
};
use crate::rng::{substream, Rng};

/// Outcome of one suite. `worst_ratio` is the largest measured/bound ratio seen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub checks: usize,
    pub violations: usize,
    pub worst_ratio: f64,
}

impl SuiteReport {
    pub fn new(name: &str) -> Self {
        Self { name: name.into(), cases: 0, checks: 0, violations: 0, worst_ratio: 0.0 }
    }

    pub fn check(&mut self, measured: f64, bound: f64) {
        self.checks += 1;
        let ratio = if bound > 0.0 { measured / bound } else if measured > 0.0 { f64::INFINITY } else { 0.0 };
        if !ratio.is_nan() {
            self.worst_ratio = self.worst_ratio.max(ratio);
        }
        if !(measured <= bound) {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.violations == 0
    }
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random direction with unit spectral norm.
pub fn random_unit_spectral(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    loop {
        let m = random_matrix(rows, cols, rng);
        let n = spectral_norm(&m);
        if n > 1e-8 {
            return m / n;
        }
    }
}

fn random_spd(n: usize, floor: f64, rng: &mut Rng) -> Mat {
    let l = random_matrix(n, n, rng);
    (&l * l.transpose()) * (0.5 / n as f64) + Mat::identity(n, n) * floor
}

/// Random Q, R, Σ₀ (all positive definite), H = √tr Σ₀.
pub fn random_cost(nx: usize, nu: usize, rng: &mut Rng) -> CostSpec {
    let q = random_spd(nx, rng.random_range(0.3..1.5), rng);
    let r = random_spd(nu, rng.random_range(0.3..1.5), rng);
    let sigma0 = random_spd(nx, rng.random_range(0.5..1.5), rng);
    let h = sigma0.trace().sqrt();
    CostSpec::new(q, r, sigma0, h).expect("random cost is positive definite by construction")
}

/// Random (A, B) with open-loop spectral radius in [0.5, 1.3).
pub fn random_system(nx: usize, nu: usize, rng: &mut Rng) -> LinearSystem {
    loop {
        let a = random_matrix(nx, nx, rng);
        let Ok(rho) = crate::linalg::spectral_radius(&a) else { continue };
        if rho < 1e-6 {
            continue;
        }
        let a = a * (rng.random_range(0.5..1.3) / rho);
        let b = random_matrix(nx, nu, rng);
        if let Ok(s) = LinearSystem::new(a, b) {
            return s;
        }
    }
}

/// M systems around `nominal` whose pairwise A and B differences are at most
/// eps1 and eps2 in spectral norm (random unit-norm masks).
pub fn random_ensemble(nominal: &LinearSystem, m: usize, eps1: f64, eps2: f64, rng: &mut Rng) -> Result<Ensemble> {
    let het = HeterogeneityParams {
        eps1,
        eps2,
        z1: random_unit_spectral(nominal.nx(), nominal.nx(), rng),
        z2: random_unit_spectral(nominal.nx(), nominal.nu(), rng),
    };
    generate_ensemble(nominal, m, &het, rng.random())
}

fn jointly_stable(systems: &[LinearSystem], g: &Gain) -> bool {
    systems
        .iter()
        .all(|s| crate::lqr::is_stabilizing(s, g).unwrap_or(false))
}

/// A random gain near `base` stabilizing every system; the perturbation is
/// halved until it does, falling back to `base` itself.
pub fn perturb_stabilizing(systems: &[LinearSystem], base: &Gain, rng: &mut Rng) -> Gain {
    let d = random_matrix(base.k.nrows(), base.k.ncols(), rng);
    let d = &d / d.norm().max(1e-12);
    let mut t = rng.random_range(0.0..0.5) * base.k.norm().max(0.2);
    for _ in 0..40 {
        let g = Gain { k: &base.k + &d * t };
        if jointly_stable(systems, &g) {
            return g;
        }
        t *= 0.5;
    }
    base.clone()
}

/// One randomized problem instance.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub systems: Vec<LinearSystem>,
    pub cost: CostSpec,
    pub gain: Gain,
    /// Measured pairwise heterogeneity.
    pub eps1: f64,
    pub eps2: f64,
}

/// Draws dims in 1..=3, a random cost and nominal system, an ensemble of `m`
/// systems with heterogeneity up to `eps_max`, and a gain near the nominal
/// optimum that stabilizes all of them.
pub fn random_case(m: usize, eps_max: f64, rng: &mut Rng) -> Result<RandomCase> {
    for _ in 0..1000 {
        let nx = rng.random_range(1..=3);
        let nu = rng.random_range(1..=3);
        let cost = random_cost(nx, nu, rng);
        let nominal = random_system(nx, nu, rng);
        let Ok((_, k_star)) = optimal_gain(&nominal, &cost) else { continue };
        let e1 = rng.random_range(0.0..=eps_max);
        let e2 = rng.random_range(0.0..=eps_max);
        let ens = random_ensemble(&nominal, m, e1, e2, rng)?;
        if !jointly_stable(&ens.systems, &k_star) {
            continue;
        }
        let gain = perturb_stabilizing(&ens.systems, &k_star, rng);
        let (eps1, eps2) = measure_heterogeneity(&ens);
        return Ok(RandomCase { systems: ens.systems, cost, gain, eps1, eps2 });
    }
    Err(Error::SolverFailure("could not draw a stabilizable random case".into()))
}

fn suite_rng(seed: u64, name: &str) -> Rng {
    substream(seed, &[crate::rng::label_key(name)])
}

/// ‖∇C₁(K) − ∇C₂(K)‖ ≤ ε₁h¹_het + ε₂h²_het on 2-system ensembles.
pub fn gradient_heterogeneity_suite(cases: usize, eps_max: f64, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("gradient heterogeneity");
    let mut rng = suite_rng(seed, &rep.name);
    for _ in 0..cases {
        let c = random_case(2, eps_max, &mut rng)?;
        let sols = solve_all(&c.systems, &c.cost, &c.gain)?;
        let bound = het_bound(&c.systems, &c.cost, &c.gain, c.eps1, c.eps2)?.bound;
        rep.check(spectral_norm(&(&sols[0].grad - &sols[1].grad)), bound);
        rep.cases += 1;
    }
    Ok(rep)
}

/// ‖∇Cᵢ(K)‖_F ≤ h₁(K) for every agent and ‖K‖ ≤ h₂(K).
pub fn uniform_bounds_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("uniform bounds");
    let mut rng = suite_rng(seed, &rep.name);
    for _ in 0..cases {
        let m = rng.random_range(1..=3);
        let c = random_case(m, 0.1, &mut rng)?;
        let (h1, h2) = uniform_bounds(&c.systems, &c.cost, &c.gain)?;
        for s in solve_all(&c.systems, &c.cost, &c.gain)? {
            rep.check(s.grad.norm(), h1);
        }
        rep.check(spectral_norm(&c.gain.k), h2);
        rep.cases += 1;
    }
    Ok(rep)
}

/// Cost and gradient Lipschitz bounds for a random K′ within h_Δ(K) of K,
/// checked for every agent.
pub fn smoothness_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("cost and gradient smoothness");
    let mut rng = suite_rng(seed, &rep.name);
    for _ in 0..cases {
        let m = rng.random_range(1..=2);
        let c = random_case(m, 0.1, &mut rng)?;
        let (h_delta, h_cost, h_grad) = smoothness_constants(&c.systems, &c.cost, &c.gain)?;
        let dir = random_unit_spectral(c.gain.k.nrows(), c.gain.k.ncols(), &mut rng);
        let delta = dir * (rng.random_range(0.0..=1.0) * h_delta);
        let moved = Gain { k: &c.gain.k + &delta };
        let at_k = solve_all(&c.systems, &c.cost, &c.gain)?;
        let Ok(at_moved) = solve_all(&c.systems, &c.cost, &moved) else {
            // Within h_Δ the perturbed gain must remain stabilizing.
            rep.check(f64::INFINITY, 0.0);
            rep.cases += 1;
            continue;
        };
        let (d2, df) = (spectral_norm(&delta), delta.norm());
        for (s0, s1) in at_k.iter().zip(&at_moved) {
            let dg = &s1.grad - &s0.grad;
            rep.check((s1.cost - s0.cost).abs(), h_cost * d2);
            rep.check(spectral_norm(&dg), h_grad * d2);
            rep.check(dg.norm(), h_grad * df);
        }
        rep.cases += 1;
    }
    Ok(rep)
}

/// Minimizer of the average cost from `start`, or the DARE gain for one system.
pub fn average_optimal_gain(systems: &[LinearSystem], cost: &CostSpec, start: &Gain) -> Result<Gain> {
    if systems.len() == 1 {
        return Ok(optimal_gain(&systems[0], cost)?.1);
    }
    let tol = default_average_tol(systems, cost, start)?;
    solve_average_optimal_gain(systems, cost, start, 0.1, tol)
}

/// Cᵢ(K*) − Cᵢ(Kᵢ*) against the per-agent closeness bound, with suprema
/// taken over {start gain, K*, jointly stabilizing Kᵢ*}.
pub fn closeness_suite(cases: usize, eps_max: f64, seed: u64) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("average-optimal closeness");
    let mut rng = suite_rng(seed, &rep.name);
    for _ in 0..cases {
        let m = rng.random_range(2..=4);
        let c = random_case(m, eps_max, &mut rng)?;
        let k_avg = average_optimal_gain(&c.systems, &c.cost, &c.gain)?;
        let mut probes = vec![c.gain.clone(), k_avg.clone()];
        let mut local_opt = Vec::new();
        for s in &c.systems {
            let (_, ki) = optimal_gain(s, &c.cost)?;
            local_opt.push(crate::lqr::exact_cost(s, &c.cost, &ki)?);
            if jointly_stable(&c.systems, &ki) {
                probes.push(ki);
            }
        }
        let bounds = closeness_bounds_per_agent(&c.systems, &c.cost, c.eps1, c.eps2, &probes)?;
        for ((s, b), c_opt) in solve_all(&c.systems, &c.cost, &k_avg)?.iter().zip(bounds).zip(local_opt) {
            // Roundoff floor: both costs carry ~1e-12 relative solver error.
            rep.check(s.cost - c_opt - 1e-10 * c_opt, b);
        }
        rep.cases += 1;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_case_is_jointly_stabilized_and_within_eps() {
        let mut rng = substream(3, &[]);
        for _ in 0..10 {
            let c = random_case(3, 0.1, &mut rng).unwrap();
            assert!(jointly_stable(&c.systems, &c.gain));
            assert!(c.eps1 <= 0.1 + 1e-12 && c.eps2 <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn small_suites_pass() {
        assert!(gradient_heterogeneity_suite(5, 0.1, 1).unwrap().passed());
        assert!(uniform_bounds_suite(5, 1).unwrap().passed());
        assert!(smoothness_suite(5, 1).unwrap().passed());
    }

    #[test]
    fn report_counts_violations() {
        let mut r = SuiteReport::new("x");
        r.check(2.0, 1.0);
        r.check(0.5, 1.0);
        r.cases = 1;
        assert_eq!(r.violations, 1);
        assert_eq!(r.worst_ratio, 2.0);
        assert!(!r.passed());
    }
}
