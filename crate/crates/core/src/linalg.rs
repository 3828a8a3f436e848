//! Dense kernels: spectral radius, discrete Lyapunov equations, and the
//! discrete algebraic Riccati equation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

const LYAP_MAX_ITER: usize = 10_000;
const DARE_MAX_ITER: usize = 100_000;
const DARE_TOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-10;

/// Which of the two Stein equations to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovForm {
    /// X = W + Fᵀ X F (value matrices).
    Adjoint,
    /// X = W + F X Fᵀ (state covariances).
    Dual,
}

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!("{what} has non-finite entries")))
    }
}

pub fn ensure_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() == m.ncols() && m.nrows() > 0 {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Relative symmetry and PSD test with the tolerances used across the crate.
pub fn is_symmetric_psd(m: &Mat) -> bool {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return false;
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).norm() > 1e-10 * scale {
        return false;
    }
    let n = m.nrows() as f64;
    let floor = -1e-10 * (m.trace().abs() / n).max(f64::MIN_POSITIVE);
    symmetrize(m).symmetric_eigenvalues().iter().all(|&l| l >= floor)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &Mat) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Largest singular value (operator 2-norm).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Smallest singular value.
pub fn sigma_min(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.min()
}

/// max |λ| over the eigenvalues of `m`, from a real Schur decomposition.
/// The QR iteration occasionally stalls at machine-precision tolerance, so
/// looser tolerances are tried before falling back to Gelfand's formula.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    ensure_square(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    for tol in [f64::EPSILON, 1e-14, 1e-12] {
        if let Some(schur) = m.clone().try_schur(tol, 10_000) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max));
        }
    }
    Ok(gelfand_radius(m))
}

/// ρ(M) = lim ‖M^(2^j)‖^(1/2^j), tracked in log scale with normalized iterates.
fn gelfand_radius(m: &Mat) -> f64 {
    let n0 = m.norm();
    if n0 == 0.0 {
        return 0.0;
    }
    let mut g = m / n0;
    let mut log_scale = n0.ln();
    let mut power = 1.0;
    for _ in 0..60 {
        let sq = &g * &g;
        let n = sq.norm();
        if n == 0.0 {
            return 0.0;
        }
        log_scale = 2.0 * log_scale + n.ln();
        power *= 2.0;
        g = sq / n;
    }
    (log_scale / power).exp()
}

/// Solves X = W + FᵀXF (adjoint form).
pub fn solve_discrete_lyapunov(f: &Mat, w: &Mat) -> Result<Mat> {
    solve_lyapunov(f, w, LyapunovForm::Adjoint)
}

/// Solves X = W + FXFᵀ (dual form).
pub fn solve_discrete_lyapunov_dual(f: &Mat, w: &Mat) -> Result<Mat> {
    solve_lyapunov(f, w, LyapunovForm::Dual)
}

fn stein_step(f: &Mat, x: &Mat, form: LyapunovForm) -> Mat {
    match form {
        LyapunovForm::Adjoint => f.transpose() * x * f,
        LyapunovForm::Dual => f * x * f.transpose(),
    }
}

pub fn lyapunov_residual(f: &Mat, w: &Mat, x: &Mat, form: LyapunovForm) -> f64 {
    (x - w - stein_step(f, x, form)).norm()
}

/// Doubling iteration: X_{k+1} = X_k + F_kᵀ X_k F_k, F_{k+1} = F_k², then a
/// short fixed-point polish.
pub fn solve_lyapunov(f: &Mat, w: &Mat, form: LyapunovForm) -> Result<Mat> {
    ensure_square(f, "f")?;
    ensure_square(w, "w")?;
    if f.nrows() != w.nrows() {
        return Err(Error::InvalidMatrix("f and w dimensions differ".into()));
    }
    ensure_finite(w, "w")?;
    if spectral_radius(f)? >= 1.0 {
        return Err(Error::UnstableSystem { index: None });
    }
    let mut x = symmetrize(w);
    let mut fk = f.clone();
    let mut converged = false;
    for _ in 0..LYAP_MAX_ITER {
        let inc = stein_step(&fk, &x, form);
        x = symmetrize(&(&x + &inc));
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverFailure("Lyapunov iteration overflowed".into()));
        }
        if inc.norm() <= 1e-3 * f64::EPSILON * x.norm() {
            converged = true;
            break;
        }
        fk = &fk * &fk;
    }
    if !converged {
        return Err(Error::SolverFailure(
            "Lyapunov doubling hit the iteration cap".into(),
        ));
    }
    // A few plain sweeps remove accumulated rounding from the doubling.
    let mut res = lyapunov_residual(f, w, &x, form);
    for _ in 0..8 {
        if res <= 1e-14 * x.norm() {
            break;
        }
        let cand = symmetrize(&(w + stein_step(f, &x, form)));
        let cand_res = lyapunov_residual(f, w, &cand, form);
        if cand_res >= res {
            break;
        }
        x = cand;
        res = cand_res;
    }
    if res > RESIDUAL_TOL * x.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::SolverFailure(format!(
            "Lyapunov residual {res:e} above tolerance"
        )));
    }
    Ok(x)
}

/// Riccati right-hand side q + aᵀPa − aᵀPb(r+bᵀPb)⁻¹bᵀPa and the
/// associated gain (r+bᵀPb)⁻¹bᵀPa.
fn riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<(Mat, Mat)> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let rhs = &bt_p * a;
    let k = s
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolverFailure("r + bᵀPb is singular".into()))?;
    let at_p = a.transpose() * p;
    let next = q + &at_p * a - at_p * b * &k;
    Ok((symmetrize(&next), k))
}

/// Stabilizing solution of the DARE by Riccati recursion from P₀ = q.
/// Returns (P, K) with K = (r + bᵀPb)⁻¹bᵀPa.
pub fn solve_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<(Mat, Mat)> {
    ensure_square(a, "a")?;
    ensure_square(q, "q")?;
    ensure_square(r, "r")?;
    let n = a.nrows();
    if b.nrows() != n || q.nrows() != n || r.nrows() != b.ncols() {
        return Err(Error::InvalidMatrix("DARE dimensions are inconsistent".into()));
    }
    for (m, name) in [(a, "a"), (b, "b"), (q, "q"), (r, "r")] {
        ensure_finite(m, name)?;
    }
    let mut p = symmetrize(q);
    let mut converged = false;
    for _ in 0..DARE_MAX_ITER {
        let (next, _) = riccati_map(a, b, q, r, &p)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::SolverFailure(
                "Riccati recursion diverged (pair not stabilizable?)".into(),
            ));
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= DARE_TOL * p.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SolverFailure(
            "Riccati recursion hit the iteration cap".into(),
        ));
    }
    let (next, k) = riccati_map(a, b, q, r, &p)?;
    let residual = (&next - &p).norm();
    if residual > RESIDUAL_TOL * p.norm() {
        return Err(Error::SolverFailure(format!(
            "Riccati residual {residual:e} above tolerance"
        )));
    }
    if spectral_radius(&(a - b * &k))? >= 1.0 {
        return Err(Error::SolverFailure(
            "Riccati fixed point is not stabilizing".into(),
        ));
    }
    Ok((p, k))
}
