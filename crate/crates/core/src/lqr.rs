//! Exact (model-based) LQR quantities for one system and one gain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, ensure_square, is_symmetric_psd, min_eigenvalue_sym, solve_dare,
    solve_discrete_lyapunov, solve_discrete_lyapunov_dual, spectral_norm, spectral_radius, Mat,
};
use crate::matio::nested;

/// Margin used by [`is_stabilizing`].
pub const STABILITY_MARGIN: f64 = 1e-12;

/// One agent's dynamics x' = A x + B u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    #[serde(with = "nested")]
    pub a: Mat,
    #[serde(with = "nested")]
    pub b: Mat,
}

impl LinearSystem {
    pub fn new(a: Mat, b: Mat) -> Result<Self> {
        ensure_square(&a, "A")?;
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    /// A − BK.
    pub fn closed_loop(&self, g: &Gain) -> Result<Mat> {
        if g.k.nrows() != self.nu() || g.k.ncols() != self.nx() {
            return Err(Error::InvalidInput(format!(
                "gain must be {}x{}, got {}x{}",
                self.nu(),
                self.nx(),
                g.k.nrows(),
                g.k.ncols()
            )));
        }
        Ok(&self.a - &self.b * &g.k)
    }
}

/// State-feedback gain, u = −Kx.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gain {
    #[serde(with = "nested")]
    pub k: Mat,
}

impl Gain {
    pub fn new(k: Mat) -> Result<Self> {
        ensure_finite(&k, "gain")?;
        Ok(Self { k })
    }

    pub fn zeros(nu: usize, nx: usize) -> Self {
        Self { k: Mat::zeros(nu, nx) }
    }
}

/// Shared quadratic cost and initial-state second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CostSpecRaw", into = "CostSpecRaw")]
pub struct CostSpec {
    pub q: Mat,
    pub r: Mat,
    /// E[x₀x₀ᵀ].
    pub sigma0: Mat,
    /// σ_min(Σ₀), derived.
    pub mu: f64,
    /// Almost-sure bound on ‖x₀‖; only the theory evaluators read it.
    pub h_bound: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSpecRaw {
    #[serde(with = "nested")]
    q: Mat,
    #[serde(with = "nested")]
    r: Mat,
    #[serde(with = "nested")]
    sigma0: Mat,
    h_bound: f64,
}

impl TryFrom<CostSpecRaw> for CostSpec {
    type Error = Error;
    fn try_from(raw: CostSpecRaw) -> Result<Self> {
        CostSpec::new(raw.q, raw.r, raw.sigma0, raw.h_bound)
    }
}

impl From<CostSpec> for CostSpecRaw {
    fn from(c: CostSpec) -> Self {
        CostSpecRaw { q: c.q, r: c.r, sigma0: c.sigma0, h_bound: c.h_bound }
    }
}

impl CostSpec {
    pub fn new(q: Mat, r: Mat, sigma0: Mat, h_bound: f64) -> Result<Self> {
        for (m, name) in [(&q, "Q"), (&r, "R"), (&sigma0, "Sigma0")] {
            ensure_square(m, name)?;
            ensure_finite(m, name)?;
            if !is_symmetric_psd(m) {
                return Err(Error::InvalidInput(format!("{name} must be symmetric PSD")));
            }
        }
        if q.nrows() != sigma0.nrows() {
            return Err(Error::InvalidInput("Q and Sigma0 dimensions differ".into()));
        }
        if min_eigenvalue_sym(&q) <= 0.0 || min_eigenvalue_sym(&r) <= 0.0 {
            return Err(Error::InvalidInput("Q and R must be positive definite".into()));
        }
        let mu = min_eigenvalue_sym(&sigma0);
        if mu <= 0.0 {
            return Err(Error::InvalidInput("Sigma0 must be positive definite".into()));
        }
        if !(h_bound > 0.0) || !h_bound.is_finite() {
            return Err(Error::InvalidInput("h_bound must be positive and finite".into()));
        }
        Ok(Self { q, r, sigma0, mu, h_bound })
    }

    /// Σ₀ = I (standard normal x₀).
    pub fn with_identity_init(q: Mat, r: Mat, h_bound: f64) -> Result<Self> {
        let n = q.nrows();
        Self::new(q, r, Mat::identity(n, n), h_bound)
    }

    pub fn nx(&self) -> usize {
        self.q.nrows()
    }

    pub fn nu(&self) -> usize {
        self.r.nrows()
    }

    pub fn sigma_min_q(&self) -> f64 {
        min_eigenvalue_sym(&self.q)
    }

    pub fn sigma_min_r(&self) -> f64 {
        min_eigenvalue_sym(&self.r)
    }

    fn check_system(&self, sys: &LinearSystem) -> Result<()> {
        if sys.nx() != self.nx() || sys.nu() != self.nu() {
            return Err(Error::InvalidInput(
                "system and cost dimensions differ".into(),
            ));
        }
        Ok(())
    }
}

/// Analytic bundle for one (system, gain).
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub p_k: Mat,
    pub sigma_k: Mat,
    pub e_k: Mat,
    pub cost: f64,
    pub grad: Mat,
}

pub fn closed_loop_radius(sys: &LinearSystem, g: &Gain) -> Result<f64> {
    spectral_radius(&sys.closed_loop(g)?)
}

pub fn is_stabilizing(sys: &LinearSystem, g: &Gain) -> Result<bool> {
    Ok(closed_loop_radius(sys, g)? < 1.0 - STABILITY_MARGIN)
}

fn stage_weight(cost: &CostSpec, g: &Gain) -> Mat {
    &cost.q + g.k.transpose() * &cost.r * &g.k
}

fn stable_closed_loop(sys: &LinearSystem, cost: &CostSpec, g: &Gain) -> Result<Mat> {
    cost.check_system(sys)?;
    let f = sys.closed_loop(g)?;
    if spectral_radius(&f)? >= 1.0 - STABILITY_MARGIN {
        return Err(Error::UnstableSystem { index: None });
    }
    Ok(f)
}

/// P_K, solving P = Q + KᵀRK + (A−BK)ᵀP(A−BK).
pub fn value_matrix(sys: &LinearSystem, cost: &CostSpec, g: &Gain) -> Result<Mat> {
    let f = stable_closed_loop(sys, cost, g)?;
    solve_discrete_lyapunov(&f, &stage_weight(cost, g))
}

/// C(K) = tr(P_K Σ₀).
pub fn exact_cost(sys: &LinearSystem, cost: &CostSpec, g: &Gain) -> Result<f64> {
    Ok((value_matrix(sys, cost, g)? * &cost.sigma0).trace())
}

pub fn solve_lqr(sys: &LinearSystem, cost: &CostSpec, g: &Gain) -> Result<LqrSolution> {
    let f = stable_closed_loop(sys, cost, g)?;
    let p_k = solve_discrete_lyapunov(&f, &stage_weight(cost, g))?;
    let sigma_k = solve_discrete_lyapunov_dual(&f, &cost.sigma0)?;
    let bt_p = sys.b.transpose() * &p_k;
    let e_k = (&cost.r + &bt_p * &sys.b) * &g.k - &bt_p * &sys.a;
    let cost_val = (&p_k * &cost.sigma0).trace();
    let grad = &e_k * &sigma_k * 2.0;
    Ok(LqrSolution { p_k, sigma_k, e_k, cost: cost_val, grad })
}

/// Optimal gain Kᵢ* and value matrix for one system.
pub fn optimal_gain(sys: &LinearSystem, cost: &CostSpec) -> Result<(Mat, Gain)> {
    cost.check_system(sys)?;
    let (p, k) = solve_dare(&sys.a, &sys.b, &cost.q, &cost.r)?;
    Ok((p, Gain { k }))
}

/// (C(K) − C(K*), ‖Σ_{K*}‖/(4μ²σ_min(R))·‖∇C(K)‖²_F).
pub fn gradient_domination_certificate(
    sys: &LinearSystem,
    cost: &CostSpec,
    g: &Gain,
    k_star: &Gain,
) -> Result<(f64, f64)> {
    let at_k = solve_lqr(sys, cost, g)?;
    let at_star = solve_lqr(sys, cost, k_star)?;
    let lhs = at_k.cost - at_star.cost;
    let coef = spectral_norm(&at_star.sigma_k) / (4.0 * cost.mu * cost.mu * cost.sigma_min_r());
    Ok((lhs, coef * at_k.grad.norm_squared()))
}

/// Per-system solves for every member, in index order.
pub fn solve_all(systems: &[LinearSystem], cost: &CostSpec, g: &Gain) -> Result<Vec<LqrSolution>> {
    if systems.is_empty() {
        return Err(Error::InvalidInput("no systems".into()));
    }
    systems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            solve_lqr(s, cost, g).map_err(|e| match e {
                Error::UnstableSystem { .. } => Error::UnstableSystem { index: Some(i) },
                other => other,
            })
        })
        .collect()
}

/// ((1/M)Σ Cᵢ(K), (1/M)Σ ∇Cᵢ(K)).
pub fn average_cost_and_gradient(
    systems: &[LinearSystem],
    cost: &CostSpec,
    g: &Gain,
) -> Result<(f64, Mat)> {
    let sols = solve_all(systems, cost, g)?;
    let m = sols.len() as f64;
    let mut c = 0.0;
    let mut grad = Mat::zeros(g.k.nrows(), g.k.ncols());
    for s in &sols {
        c += s.cost;
        grad += &s.grad;
    }
    Ok((c / m, grad / m))
}

/// Default stopping tolerance 1e-10·(1 + c_avg(k0)).
pub fn default_average_tol(systems: &[LinearSystem], cost: &CostSpec, k0: &Gain) -> Result<f64> {
    Ok(1e-10 * (1.0 + average_cost_and_gradient(systems, cost, k0)?.0))
}

const GD_MAX_ITER: usize = 10_000;
const GD_MAX_HALVINGS: usize = 60;

/// Hessian of the average cost by central differences of the exact gradient,
/// over the row-major entries of K.
fn average_hessian(systems: &[LinearSystem], cost: &CostSpec, g: &Gain) -> Result<Mat> {
    let (nu, nx) = (g.k.nrows(), g.k.ncols());
    let d = nu * nx;
    let h = 1e-6 * (1.0 + g.k.amax());
    let mut hess = Mat::zeros(d, d);
    for p in 0..d {
        let (i, j) = (p / nx, p % nx);
        let mut kp = g.k.clone();
        let mut km = g.k.clone();
        kp[(i, j)] += h;
        km[(i, j)] -= h;
        let (_, gp) = average_cost_and_gradient(systems, cost, &Gain { k: kp })?;
        let (_, gm) = average_cost_and_gradient(systems, cost, &Gain { k: km })?;
        for q in 0..d {
            hess[(q, p)] = (gp[(q / nx, q % nx)] - gm[(q / nx, q % nx)]) / (2.0 * h);
        }
    }
    Ok(crate::linalg::symmetrize(&hess))
}

/// Newton direction −H⁻¹∇ when the Hessian is positive definite.
fn newton_direction(systems: &[LinearSystem], cost: &CostSpec, g: &Gain, grad: &Mat) -> Option<Mat> {
    let hess = average_hessian(systems, cost, g).ok()?;
    let chol = hess.cholesky()?;
    let flat = Mat::from_row_slice(grad.len(), 1, grad.transpose().as_slice());
    let d = chol.solve(&flat);
    let dir = Mat::from_row_slice(grad.nrows(), grad.ncols(), d.as_slice()) * -1.0;
    (dir.iter().all(|v| v.is_finite()) && dir.dot(grad) < 0.0).then_some(dir)
}

/// Minimizer of the average cost. Each iteration tries a damped Newton step
/// (finite-difference Hessian of the exact gradient) and otherwise a gradient
/// step of adaptive length `step`. A candidate is accepted if it stabilizes
/// every system and lowers the average cost, or, once cost differences sit at
/// rounding level, leaves the cost flat and shrinks the gradient.
pub fn solve_average_optimal_gain(
    systems: &[LinearSystem],
    cost: &CostSpec,
    k0: &Gain,
    step: f64,
    tol: f64,
) -> Result<Gain> {
    if !(step > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidInput("step and tol must be positive".into()));
    }
    let (mut c, mut grad) = average_cost_and_gradient(systems, cost, k0)
        .map_err(|e| match e {
            Error::UnstableSystem { index } => Error::PreconditionFailed(format!(
                "initial gain does not stabilize system {}",
                index.map_or("?".into(), |i| i.to_string())
            )),
            other => other,
        })?;
    let mut k = k0.clone();
    let mut step = step;
    for _ in 0..GD_MAX_ITER {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Ok(k);
        }
        let (c_now, slack) = (c, 4.0 * f64::EPSILON * c.abs());
        let accept =
            |c2: f64, g2: &Mat| c2 < c_now - slack || (c2 <= c_now + slack && g2.norm() < gnorm);
        let mut moved = false;
        if let Some(dir) = newton_direction(systems, cost, &k, &grad) {
            let mut t = 1.0;
            for _ in 0..30 {
                let cand = Gain { k: &k.k + &dir * t };
                if let Ok((c2, g2)) = average_cost_and_gradient(systems, cost, &cand) {
                    if accept(c2, &g2) {
                        (k, c, grad, moved) = (cand, c2, g2, true);
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        if moved {
            continue;
        }
        let mut halvings = 0;
        loop {
            let cand = Gain { k: &k.k - &grad * step };
            match average_cost_and_gradient(systems, cost, &cand) {
                Ok((c2, g2)) if accept(c2, &g2) => {
                    (k, c, grad) = (cand, c2, g2);
                    step *= 1.5;
                    break;
                }
                Ok(_) | Err(Error::UnstableSystem { .. }) => {
                    step *= 0.5;
                    halvings += 1;
                    if halvings > GD_MAX_HALVINGS {
                        return Err(Error::StepTooLarge { halvings });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Err(Error::SolverFailure(
        "average-optimal descent hit the iteration cap".into(),
    ))
}
