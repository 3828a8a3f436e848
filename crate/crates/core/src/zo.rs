//! Single-point zeroth-order gradient estimator over the Frobenius sphere.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::{rollout_cost, sample_initial_state, InitDist, DIVERGENCE_GUARD};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::lqr::{exact_cost, solve_lqr, CostSpec, Gain, LinearSystem};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoConfig {
    /// Trajectories per estimate.
    pub n_s: usize,
    /// Rollout length.
    pub tau: usize,
    /// Smoothing radius.
    pub r: f64,
}

impl ZoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.tau == 0 || !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidInput("ZoConfig needs n_s >= 1, tau >= 1, r > 0".into()));
        }
        Ok(())
    }
}

/// How the cost of a perturbed gain is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostOracle {
    /// Truncated rollout from a fresh x₀ (the model-free path).
    #[default]
    Rollout,
    /// Infinite-horizon tr(P_K̂ Σ₀); a test hook that removes the rollout noise.
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad_hat: Mat,
    pub per_sample_costs: Vec<f64>,
    pub diverged_count: usize,
}

/// Uniform draw from {U ∈ R^{n_u×n_x} : ‖U‖_F = r}.
pub fn sample_frobenius_sphere(nx: usize, nu: usize, r: f64, rng: &mut Rng) -> Mat {
    loop {
        let u = Mat::from_fn(nu, nx, |_, _| StandardNormal.sample(rng));
        let n = u.norm();
        if n > 0.0 {
            return u * (r / n);
        }
    }
}

pub fn estimate_gradient(
    sys: &LinearSystem,
    cost: &CostSpec,
    g: &Gain,
    cfg: &ZoConfig,
    dist: &InitDist,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    estimate_gradient_with(sys, cost, g, cfg, dist, rng, CostOracle::Rollout)
}

/// ĝ = (1/n_s) Σ_s (n_x n_u / r²) Ĉ_s U_s. Each trajectory runs on its own
/// substream seeded from `rng`; diverged costs are capped at the guard.
pub fn estimate_gradient_with(
    sys: &LinearSystem,
    cost: &CostSpec,
    g: &Gain,
    cfg: &ZoConfig,
    dist: &InitDist,
    rng: &mut Rng,
    oracle: CostOracle,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    dist.validate()?;
    let (nx, nu) = (sys.nx(), sys.nu());
    if dist.dim() != nx {
        return Err(Error::InvalidInput("initial-state dimension differs from n_x".into()));
    }
    sys.closed_loop(g)?;
    let seeds: Vec<u64> = (0..cfg.n_s).map(|_| rng.random()).collect();
    let scale = (nx * nu) as f64 / (cfg.r * cfg.r);
    let mut grad_hat = Mat::zeros(nu, nx);
    let mut per_sample_costs = Vec::with_capacity(cfg.n_s);
    let mut diverged_count = 0;
    for seed in seeds {
        let mut traj_rng = substream(seed, &[]);
        let u = sample_frobenius_sphere(nx, nu, cfg.r, &mut traj_rng);
        let k_hat = Gain { k: &g.k + &u };
        let c = match oracle {
            CostOracle::Rollout => {
                let x0 = sample_initial_state(dist, &mut traj_rng);
                rollout_cost(sys, cost, &k_hat, &x0, cfg.tau)
            }
            CostOracle::Analytic => exact_cost(sys, cost, &k_hat),
        };
        let c = match c {
            Ok(v) if v.is_finite() && v <= DIVERGENCE_GUARD => v,
            Ok(_) | Err(Error::TrajectoryDiverged { .. }) | Err(Error::UnstableSystem { .. }) => {
                diverged_count += 1;
                DIVERGENCE_GUARD
            }
            Err(e) => return Err(e),
        };
        grad_hat += &u * (scale * c);
        per_sample_costs.push(c);
    }
    if diverged_count == cfg.n_s {
        return Err(Error::EstimateFailed(cfg.n_s));
    }
    grad_hat /= cfg.n_s as f64;
    Ok(GradientEstimate { grad_hat, per_sample_costs, diverged_count })
}

/// Per-replicate ‖(1/M) Σᵢ (ĝᵢ − ∇Cᵢ)‖_F.
pub fn variance_probe_errors(
    agents: &[(LinearSystem, Gain)],
    cost: &CostSpec,
    cfg: &ZoConfig,
    dist: &InitDist,
    replicates: usize,
    rng: &mut Rng,
    oracle: CostOracle,
) -> Result<Vec<f64>> {
    if agents.is_empty() {
        return Err(Error::InvalidInput("no agents".into()));
    }
    let exact: Vec<Mat> = agents
        .iter()
        .map(|(s, g)| solve_lqr(s, cost, g).map(|sol| sol.grad))
        .collect::<Result<_>>()?;
    let m = agents.len() as f64;
    let mut out = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let mut acc = Mat::zeros(exact[0].nrows(), exact[0].ncols());
        for ((s, g), grad) in agents.iter().zip(&exact) {
            let est = estimate_gradient_with(s, cost, g, cfg, dist, rng, oracle)?;
            acc += est.grad_hat - grad;
        }
        out.push((acc / m).norm());
    }
    Ok(out)
}

/// Mean over replicates of ‖(1/M) Σᵢ (ĝᵢ − ∇Cᵢ)‖_F.
pub fn empirical_variance_probe(
    agents: &[(LinearSystem, Gain)],
    cost: &CostSpec,
    cfg: &ZoConfig,
    dist: &InitDist,
    replicates: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if replicates < 30 {
        return Err(Error::InvalidInput("replicates must be at least 30".into()));
    }
    let errs = variance_probe_errors(agents, cost, cfg, dist, replicates, rng, CostOracle::Rollout)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}
