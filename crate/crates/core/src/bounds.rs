//! Closed-form evaluators for the analytic constants of federated LQR:
//! smoothness polynomials, gradient-heterogeneity bound, admissible
//! heterogeneity, closeness of optima, and horizon / radius / sample-size
//! prescriptions.
//!
//! Every formula is evaluated as printed; suprema over the stabilizing set
//! are replaced by maxima over a caller-supplied probe set of gains.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::lqr::{exact_cost, optimal_gain, solve_all, solve_lqr, CostSpec, Gain, LinearSystem};

/// Problem data at one gain, maxima taken over the agents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub nx: usize,
    pub nu: usize,
    /// maxᵢ Cᵢ(K).
    pub c_max: f64,
    /// minᵢ Cᵢ(Kᵢ*), the optimal-cost floor entering h₀.
    pub c_min: f64,
    pub a_max: f64,
    pub b_max: f64,
    pub abk_max: f64,
    pub q_norm: f64,
    pub r_norm: f64,
    pub sigma0_norm: f64,
    pub sigma0_trace: f64,
    pub sigma_min_q: f64,
    pub sigma_min_r: f64,
    pub mu: f64,
    pub k_norm: f64,
    /// maxᵢ ‖R + BᵢᵀPᵢBᵢ‖.
    pub rk_max: f64,
    /// maxᵢ ‖BᵢᵀPᵢAᵢ‖.
    pub btpa_max: f64,
}

fn max_over<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    items.iter().map(f).fold(0.0, f64::max)
}

impl ProblemConstants {
    pub fn compute(systems: &[LinearSystem], cost: &CostSpec, g: &Gain) -> Result<Self> {
        let sols = solve_all(systems, cost, g)?;
        let mut c_min = f64::INFINITY;
        for s in systems {
            let (_, k_star) = optimal_gain(s, cost)?;
            c_min = c_min.min(exact_cost(s, cost, &k_star)?);
        }
        let pairs: Vec<_> = systems.iter().zip(&sols).collect();
        Ok(Self {
            nx: cost.nx(),
            nu: cost.nu(),
            c_max: max_over(&sols, |s| s.cost),
            c_min,
            a_max: max_over(systems, |s| spectral_norm(&s.a)),
            b_max: max_over(systems, |s| spectral_norm(&s.b)),
            abk_max: max_over(systems, |s| spectral_norm(&(&s.a - &s.b * &g.k))),
            q_norm: spectral_norm(&cost.q),
            r_norm: spectral_norm(&cost.r),
            sigma0_norm: spectral_norm(&cost.sigma0),
            sigma0_trace: cost.sigma0.trace(),
            sigma_min_q: cost.sigma_min_q(),
            sigma_min_r: cost.sigma_min_r(),
            mu: cost.mu,
            k_norm: spectral_norm(&g.k),
            rk_max: max_over(&pairs, |(s, sol)| {
                spectral_norm(&(&cost.r + s.b.transpose() * &sol.p_k * &s.b))
            }),
            btpa_max: max_over(&pairs, |(s, sol)| spectral_norm(&(s.b.transpose() * &sol.p_k * &s.a))),
        })
    }

    pub fn nu_min(&self) -> f64 {
        self.nx.min(self.nu) as f64
    }

    /// h₀ = sqrt(‖R_K‖_max (C_max − C_min)/μ).
    pub fn h0(&self) -> f64 {
        (self.rk_max * (self.c_max - self.c_min).max(0.0) / self.mu).sqrt()
    }

    /// Bound on ‖∇Cᵢ(K)‖_F. Since ∇C = 2E_KΣ_K this is twice
    /// [`Self::h1_printed`], which omits the factor 2 and is exceeded in practice.
    pub fn h1(&self) -> f64 {
        2.0 * self.h1_printed()
    }

    /// C_max h₀/σ_min(Q), the gradient bound without the factor 2.
    pub fn h1_printed(&self) -> f64 {
        self.c_max * self.h0() / self.sigma_min_q
    }

    /// Bound on ‖K‖.
    pub fn h2(&self) -> f64 {
        (self.h0() + self.btpa_max) / self.sigma_min_r
    }

    pub fn h_delta(&self) -> f64 {
        self.sigma_min_q * self.mu / (4.0 * self.b_max * self.c_max * (self.abk_max + 1.0))
    }

    pub fn h_cost(&self) -> f64 {
        let msq = self.mu * self.sigma_min_q;
        4.0 * self.sigma0_trace * self.c_max * self.r_norm / msq
            * (self.k_norm
                + self.h_delta() / 2.0
                + self.b_max * self.k_norm.powi(2) * (self.abk_max + 1.0) * self.c_max / msq)
    }

    pub fn h_grad(&self) -> f64 {
        let cq = self.c_max / self.sigma_min_q;
        4.0 * cq
            * (self.r_norm
                + self.b_max
                    * (self.a_max + self.b_max * (self.k_norm + self.h_delta()))
                    * (self.h_cost() * self.c_max / self.sigma0_trace)
                + self.b_max.powi(2) * self.c_max / self.mu)
            + 8.0 * cq.powi(2) * (self.b_max * (self.abk_max + 1.0) / self.mu) * self.h0()
    }

    /// The four components (h₁f, h₂f, h₃f, h₄f) of the gradient-heterogeneity bound.
    pub fn het_components(&self) -> [f64; 4] {
        let cqm = self.c_max / (self.sigma_min_q * self.mu);
        let x = 1.0
            + 4.0 * cqm * self.abk_max.powi(2) * (self.q_norm + self.r_norm * self.k_norm.powi(2));
        let h1f = 2.0 * self.b_max * self.c_max.powi(2) / (self.sigma_min_q * self.mu) * x;
        let h2f = 2.0 / self.mu
            * (self.c_max / self.sigma_min_q).powi(3)
            * (4.0 * self.abk_max * self.sigma0_norm);
        let lead = 2.0
            * (self.r_norm * self.k_norm
                + self.b_max * self.c_max / self.mu * (self.b_max + self.a_max));
        let h3f = lead * (self.b_max * self.k_norm * self.c_max / self.mu * x + self.abk_max);
        let h4f = lead * self.k_norm * cqm.powi(2) * (4.0 * self.abk_max * self.sigma0_norm);
        [h1f, h2f, h3f, h4f]
    }

    pub fn h_het(&self) -> (f64, f64) {
        let [a, b, c, d] = self.het_components();
        (a + b, c + d)
    }

    /// h_τ(x) = n_x C_max² (‖Q‖ + ‖R‖‖K‖²)/(x μ σ_min(Q)²).
    pub fn h_tau(&self, x: f64) -> f64 {
        self.nx as f64 * self.c_max.powi(2) * (self.q_norm + self.r_norm * self.k_norm.powi(2))
            / (x * self.mu * self.sigma_min_q.powi(2))
    }

    /// h¹_τ(x) = n_x C_max²/(x μ σ_min(Q)²).
    pub fn h_tau1(&self, x: f64) -> f64 {
        self.nx as f64 * self.c_max.powi(2) / (x * self.mu * self.sigma_min_q.powi(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HetBound {
    pub h1: f64,
    pub h2: f64,
    pub bound: f64,
}

pub fn het_bound(
    systems: &[LinearSystem],
    cost: &CostSpec,
    g: &Gain,
    eps1: f64,
    eps2: f64,
) -> Result<HetBound> {
    let (h1, h2) = ProblemConstants::compute(systems, cost, g)?.h_het();
    Ok(HetBound { h1, h2, bound: eps1 * h1 + eps2 * h2 })
}

/// (h_Δ, h_cost, h_grad) at `g`.
pub fn smoothness_constants(
    systems: &[LinearSystem],
    cost: &CostSpec,
    g: &Gain,
) -> Result<(f64, f64, f64)> {
    let pc = ProblemConstants::compute(systems, cost, g)?;
    Ok((pc.h_delta(), pc.h_cost(), pc.h_grad()))
}

/// (h₁, h₂): bounds on ‖∇Cᵢ(K)‖_F and ‖K‖.
pub fn uniform_bounds(systems: &[LinearSystem], cost: &CostSpec, g: &Gain) -> Result<(f64, f64)> {
    let pc = ProblemConstants::compute(systems, cost, g)?;
    Ok((pc.h1(), pc.h2()))
}

/// minⱼ μ²σ_min(R)(Cⱼ(K₀) − Cⱼ(Kⱼ*)) / (4‖Σ_{Kⱼ*}‖ min(n_x, n_u)).
pub fn admissible_het_threshold(systems: &[LinearSystem], cost: &CostSpec, k0: &Gain) -> Result<f64> {
    let sols = solve_all(systems, cost, k0)?;
    let nu_min = cost.nx().min(cost.nu()) as f64;
    let mut out = f64::INFINITY;
    for (s, sol) in systems.iter().zip(&sols) {
        let (_, k_star) = optimal_gain(s, cost)?;
        let star = solve_lqr(s, cost, &k_star)?;
        let gap = (sol.cost - star.cost).max(0.0);
        out = out.min(
            cost.mu.powi(2) * cost.sigma_min_r() * gap / (4.0 * spectral_norm(&star.sigma_k) * nu_min),
        );
    }
    Ok(out)
}

/// Suprema (and the infimum of h_Δ) over a finite probe set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSuprema {
    pub c_max: f64,
    pub h_cost: f64,
    pub h_grad: f64,
    pub h1: f64,
    pub h1_het: f64,
    pub h2_het: f64,
    pub h_delta_inf: f64,
    pub nx: usize,
    pub nu: usize,
    pub mu: f64,
    pub sigma_min_q: f64,
    pub sigma_min_r: f64,
}

impl ProbeSuprema {
    pub fn over(systems: &[LinearSystem], cost: &CostSpec, probes: &[Gain]) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::InvalidInput("probe set is empty".into()));
        }
        let pcs: Vec<ProblemConstants> = probes
            .iter()
            .map(|g| ProblemConstants::compute(systems, cost, g))
            .collect::<Result<_>>()?;
        Ok(Self {
            c_max: max_over(&pcs, |p| p.c_max),
            h_cost: max_over(&pcs, |p| p.h_cost()),
            h_grad: max_over(&pcs, |p| p.h_grad()),
            h1: max_over(&pcs, |p| p.h1()),
            h1_het: max_over(&pcs, |p| p.h_het().0),
            h2_het: max_over(&pcs, |p| p.h_het().1),
            h_delta_inf: pcs.iter().map(|p| p.h_delta()).fold(f64::INFINITY, f64::min),
            nx: cost.nx(),
            nu: cost.nu(),
            mu: cost.mu,
            sigma_min_q: cost.sigma_min_q(),
            sigma_min_r: cost.sigma_min_r(),
        })
    }

    fn nu_min(&self) -> f64 {
        self.nx.min(self.nu) as f64
    }

    /// Closeness bound for an agent whose optimal covariance has norm `sigma_star_norm`.
    pub fn closeness(&self, eps1: f64, eps2: f64, sigma_star_norm: f64) -> f64 {
        let x = eps1 * self.h1_het + eps2 * self.h2_het;
        let m2r = self.mu.powi(2) * self.sigma_min_r;
        self.h_cost * sigma_star_norm / m2r * x
            + self.nu_min() * self.c_max / (m2r * self.sigma_min_q) * x * x
    }

    /// h_r(x) = min{h_Δ, C̄_max/h̄_cost, x/h̄_grad}; the printed h_r(ε/4) is h_r at x = ε/4.
    pub fn h_r(&self, x: f64) -> f64 {
        self.h_delta_inf.min(self.c_max / self.h_cost).min(x / self.h_grad)
    }

    /// h′_r(x) = min{minᵢ Cᵢ(K₀)/h̄_cost, h_Δ, h_r(x)}.
    pub fn h_r_prime(&self, x: f64, min_initial_cost: f64) -> f64 {
        (min_initial_cost / self.h_cost).min(self.h_delta_inf).min(self.h_r(x))
    }

    /// Non-truncated sample requirement at accuracy ε:
    /// 8σ̂²·min(n_x,n_u)/ε²·log((n_x+n_u)/δ), σ̂² = (2n_xn_uC̄_max/r)² + (ε/2 + h̄₁)².
    pub fn h_sample(&self, eps: f64, delta: f64, r: f64) -> f64 {
        let nxu = (self.nx * self.nu) as f64;
        let var = (2.0 * nxu * self.c_max / r).powi(2) + (eps / 2.0 + self.h1).powi(2);
        8.0 * var * self.nu_min() / eps.powi(2) * (((self.nx + self.nu) as f64) / delta).ln()
    }

    /// Truncated-rollout sample requirement at accuracy ε with scale
    /// `h2_over_mu` = H²/μ: 32σ̃²·min(n_x,n_u)/ε²·log((n_x+n_u)/δ).
    pub fn h_sample_trunc(&self, eps: f64, delta: f64, r: f64, h2_over_mu: f64) -> f64 {
        32.0 * self.sigma_tilde_sq(eps, r, h2_over_mu) * self.nu_min() / eps.powi(2)
            * (((self.nx + self.nu) as f64) / delta).ln()
    }

    /// σ̃² = (2n_xn_u(H²/μ)C̄_max/r)² + (ε/2 + h̄₁)².
    pub fn sigma_tilde_sq(&self, eps: f64, r: f64, h2_over_mu: f64) -> f64 {
        let nxu = (self.nx * self.nu) as f64;
        (2.0 * nxu * h2_over_mu * self.c_max / r).powi(2) + (eps / 2.0 + self.h1).powi(2)
    }
}

/// Closeness bound using maxᵢ ‖Σ_{Kᵢ*}‖, valid for every agent.
pub fn closeness_bound(
    systems: &[LinearSystem],
    cost: &CostSpec,
    eps1: f64,
    eps2: f64,
    stab_set_probe: &[Gain],
) -> Result<f64> {
    let sup = ProbeSuprema::over(systems, cost, stab_set_probe)?;
    let sig = optimal_covariance_norms(systems, cost)?.into_iter().fold(0.0, f64::max);
    Ok(sup.closeness(eps1, eps2, sig))
}

/// Per-agent closeness bounds with each agent's own ‖Σ_{Kᵢ*}‖.
pub fn closeness_bounds_per_agent(
    systems: &[LinearSystem],
    cost: &CostSpec,
    eps1: f64,
    eps2: f64,
    stab_set_probe: &[Gain],
) -> Result<Vec<f64>> {
    let sup = ProbeSuprema::over(systems, cost, stab_set_probe)?;
    Ok(optimal_covariance_norms(systems, cost)?
        .into_iter()
        .map(|s| sup.closeness(eps1, eps2, s))
        .collect())
}

/// ‖Σ_{Kᵢ*}‖ for each agent.
pub fn optimal_covariance_norms(systems: &[LinearSystem], cost: &CostSpec) -> Result<Vec<f64>> {
    systems
        .iter()
        .map(|s| {
            let (_, k) = optimal_gain(s, cost)?;
            Ok(spectral_norm(&solve_lqr(s, cost, &k)?.sigma_k))
        })
        .collect()
}

/// ⌈h_τ(rε/(4n_xn_u))⌉ = ⌈4n_un_x²C_max²(‖Q‖+‖R‖‖K‖²)/(rεμσ_min(Q)²)⌉, at least 1.
pub fn horizon_prescription(
    systems: &[LinearSystem],
    cost: &CostSpec,
    g: &Gain,
    r: f64,
    eps: f64,
) -> Result<u64> {
    if !(r > 0.0 && eps > 0.0) {
        return Err(Error::InvalidInput("r and eps must be positive".into()));
    }
    let pc = ProblemConstants::compute(systems, cost, g)?;
    Ok(ceil_at_least_one(pc.h_tau(r * eps / (4.0 * (pc.nx * pc.nu) as f64))))
}

fn ceil_at_least_one(x: f64) -> u64 {
    if x.is_nan() || x <= 1.0 {
        1
    } else if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x.ceil() as u64
    }
}

/// ⌈h_sample,trunc(ε/4, δ/(ML), H²/μ)/(ML)⌉, i.e.
/// ⌈32σ̃²·min(n_x,n_u)/(MLε²)·log(ML(n_x+n_u)/δ)⌉, evaluated at `g`.
#[allow(clippy::too_many_arguments)]
pub fn sample_size_prescription(
    systems: &[LinearSystem],
    cost: &CostSpec,
    g: &Gain,
    r: f64,
    eps: f64,
    delta: f64,
    m: usize,
    big_l: usize,
    h: f64,
    mu: f64,
) -> Result<u64> {
    if !(r > 0.0 && eps > 0.0 && delta > 0.0 && delta < 1.0 && h > 0.0 && mu > 0.0) || m == 0 || big_l == 0
    {
        return Err(Error::InvalidInput("sample-size arguments out of range".into()));
    }
    let sup = ProbeSuprema::over(systems, cost, std::slice::from_ref(g))?;
    let ml = (m * big_l) as f64;
    Ok(ceil_at_least_one(sup.h_sample_trunc(eps, delta / ml, r, h * h / mu) / ml))
}

/// Advisory step sizes from the per-round-progress conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepAdvice {
    pub eta_l: f64,
    pub eta: f64,
    pub eta_g: f64,
}

/// Model-based: η_l = ½min{1/(4h̄_grad), 1/2, h_Δ/h̄₁, log2/(L(3h̄_grad+1)), 1/(80Lh̄_grad²)},
/// η = ½min{h_Δ/h̄₁, 1, 2/(3h̄_grad)}, η_g = η/(Lη_l).
pub fn model_based_step_sizes(sup: &ProbeSuprema, big_l: usize) -> StepAdvice {
    let l = big_l as f64;
    let hg = sup.h_grad;
    let eta_l = 0.5
        * [1.0 / (4.0 * hg), 0.5, sup.h_delta_inf / sup.h1, 2f64.ln() / (l * (3.0 * hg + 1.0)), 1.0 / (80.0 * l * hg * hg)]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
    let eta = 0.5 * (sup.h_delta_inf / sup.h1).min(1.0).min(2.0 / (3.0 * hg));
    StepAdvice { eta_l, eta, eta_g: eta / (l * eta_l) }
}

/// Model-free: η_l = ½min{h_Δμ/(H²(h̄₁+√ε)), 1/(9h̄_grad), 1/4, log2/(L(3h̄_grad+2)), 1/(256Lh̄_grad²)},
/// η = ½min{h_Δμ/(H²(h̄₁+√ε)), 1, 1/(32h̄_grad)}.
pub fn model_free_step_sizes(sup: &ProbeSuprema, big_l: usize, eps: f64, h: f64) -> StepAdvice {
    let l = big_l as f64;
    let hg = sup.h_grad;
    let first = sup.h_delta_inf * sup.mu / (h * h * (sup.h1 + eps.sqrt()));
    let eta_l = 0.5
        * [first, 1.0 / (9.0 * hg), 0.25, 2f64.ln() / (l * (3.0 * hg + 2.0)), 1.0 / (256.0 * l * hg * hg)]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
    let eta = 0.5 * first.min(1.0).min(1.0 / (32.0 * hg));
    StepAdvice { eta_l, eta, eta_g: eta / (l * eta_l) }
}

/// Per-round contraction 1 − ημ²σ_min(R)/‖Σ_{K*}‖ of the cost gap.
pub fn theory_contraction(cost: &CostSpec, sigma_star_norm: f64, eta: f64) -> f64 {
    1.0 - eta * cost.mu.powi(2) * cost.sigma_min_r() / sigma_star_norm
}
