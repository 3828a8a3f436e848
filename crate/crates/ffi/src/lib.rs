//! C ABI over the `fedlqr` core.
//!
//! Objects are opaque heap handles created by `*_new` / `*_generate` / `fedlqr_run`
//! and released with the matching `*_free`. Matrices cross the boundary as
//! row-major `double` arrays. Every fallible call returns a [`FedlqrStatus`];
//! on failure a message is available from [`fedlqr_last_error`] on the same
//! thread until the next failing call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fedlqr::ensemble::{generate_ensemble, generate_ensemble_stabilized, Ensemble, HeterogeneityParams};
use fedlqr::federated::{self, FedConfig, FedResult, LocalInstabilityPolicy, Mode};
use fedlqr::linalg::Mat;
use fedlqr::lqr::{self, CostSpec, Gain, LinearSystem};
use fedlqr::zo::ZoConfig;
use fedlqr::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedlqrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidMatrix = 2,
    InvalidInput = 3,
    UnstableSystem = 4,
    SolverFailure = 5,
    StepTooLarge = 6,
    TrajectoryDiverged = 7,
    EstimateFailed = 8,
    LocalInstability = 9,
    PreconditionFailed = 10,
    Config = 11,
    Io = 12,
    Panic = 13,
}

impl From<&Error> for FedlqrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidMatrix(_) => Self::InvalidMatrix,
            Error::InvalidInput(_) => Self::InvalidInput,
            Error::UnstableSystem { .. } => Self::UnstableSystem,
            Error::SolverFailure(_) => Self::SolverFailure,
            Error::StepTooLarge { .. } => Self::StepTooLarge,
            Error::TrajectoryDiverged { .. } => Self::TrajectoryDiverged,
            Error::EstimateFailed(_) => Self::EstimateFailed,
            Error::LocalInstability { .. } => Self::LocalInstability,
            Error::PreconditionFailed(_) => Self::PreconditionFailed,
            Error::Config(_) => Self::Config,
            Error::Io(_) => Self::Io,
        }
    }
}

/// Plant (A, B).
pub struct FedlqrSystem(LinearSystem);
/// Cost weights Q, R and initial-state covariance Σ₀.
pub struct FedlqrCost(CostSpec);
/// Set of heterogeneous systems.
pub struct FedlqrEnsemble(Ensemble);
/// Outcome of a federated run.
pub struct FedlqrResult(FedResult);

/// Federated run parameters. `model_free` selects zeroth-order gradients;
/// `local_policy` is 0 = skip, 1 = abort, 2 = keep.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedlqrFedParams {
    pub big_l: usize,
    pub big_n: usize,
    pub eta_l: f64,
    pub eta_g: f64,
    pub eta_g_decay: f64,
    pub model_free: bool,
    pub n_s: usize,
    pub tau: usize,
    pub r: f64,
    pub beta: f64,
    pub master_seed: u64,
    pub local_policy: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum FfiError {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for FfiError {
    fn from(e: Error) -> Self {
        FfiError::Core(e)
    }
}

type FfiResult<T> = Result<T, FfiError>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> FedlqrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FedlqrStatus::Ok,
        Ok(Err(FfiError::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FedlqrStatus::NullPointer
        }
        Ok(Err(FfiError::Core(e))) => {
            let status = FedlqrStatus::from(&e);
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FedlqrStatus::Panic
        }
    }
}

fn null_err(what: &'static str) -> FfiError {
    FfiError::Null(what)
}

unsafe fn mat_in(ptr: *const f64, rows: usize, cols: usize, what: &'static str) -> FfiResult<Mat> {
    if ptr.is_null() {
        return Err(null_err(what));
    }
    let s = std::slice::from_raw_parts(ptr, rows * cols);
    Ok(Mat::from_row_slice(rows, cols, s))
}

unsafe fn mat_out(m: &Mat, ptr: *mut f64, what: &'static str) -> FfiResult<()> {
    if ptr.is_null() {
        return Err(null_err(what));
    }
    let out = std::slice::from_raw_parts_mut(ptr, m.len());
    for (i, row) in m.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[i * m.ncols() + j] = *v;
        }
    }
    Ok(())
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null_err(what))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null_err("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn gain_in(sys: &LinearSystem, k: *const f64) -> FfiResult<Gain> {
    Ok(Gain::new(mat_in(k, sys.nu(), sys.nx(), "k")?)?)
}

/// Message of the last failing call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fedlqr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedlqr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a system from row-major A (nx×nx) and B (nx×nu).
#[no_mangle]
pub unsafe extern "C" fn fedlqr_system_new(
    a: *const f64,
    b: *const f64,
    nx: usize,
    nu: usize,
    out: *mut *mut FedlqrSystem,
) -> FedlqrStatus {
    guard(|| {
        let s = LinearSystem::new(mat_in(a, nx, nx, "a")?, mat_in(b, nx, nu, "b")?)?;
        put(out, FedlqrSystem(s))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fedlqr_system_free(sys: *mut FedlqrSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Creates a cost from row-major Q (nx×nx), R (nu×nu), Σ₀ (nx×nx) and the
/// initial-state bound H.
#[no_mangle]
pub unsafe extern "C" fn fedlqr_cost_new(
    q: *const f64,
    r: *const f64,
    sigma0: *const f64,
    nx: usize,
    nu: usize,
    h_bound: f64,
    out: *mut *mut FedlqrCost,
) -> FedlqrStatus {
    guard(|| {
        let c = CostSpec::new(
            mat_in(q, nx, nx, "q")?,
            mat_in(r, nu, nu, "r")?,
            mat_in(sigma0, nx, nx, "sigma0")?,
            h_bound,
        )?;
        put(out, FedlqrCost(c))
    })
}

#[no_mangle]
pub unsafe extern "C" fn fedlqr_cost_free(cost: *mut FedlqrCost) {
    if !cost.is_null() {
        drop(Box::from_raw(cost));
    }
}

/// Writes the optimal gain (nu×nx, row-major) of one system.
#[no_mangle]
pub unsafe extern "C" fn fedlqr_optimal_gain(
    sys: *const FedlqrSystem,
    cost: *const FedlqrCost,
    k_out: *mut f64,
) -> FedlqrStatus {
    guard(|| {
        let (_, k) = lqr::optimal_gain(&deref(sys, "sys")?.0, &deref(cost, "cost")?.0)?;
        mat_out(&k.k, k_out, "k_out")
    })
}

/// Spectral radius of A − BK.
#[no_mangle]
pub unsafe extern "C" fn fedlqr_closed_loop_radius(
    sys: *const FedlqrSystem,
    k: *const f64,
    out: *mut f64,
) -> FedlqrStatus {
    guard(|| {
        let s = &deref(sys, "sys")?.0;
        let rho = lqr::closed_loop_radius(s, &gain_in(s, k)?)?;
        *out.as_mut().ok_or_else(|| null_err("out"))? = rho;
        Ok(())
    })
}

/// Exact cost C(K) and, when `grad_out` is non-NULL, the gradient (nu×nx).
#[no_mangle]
pub unsafe extern "C" fn fedlqr_exact_cost(
    sys: *const FedlqrSystem,
    cost: *const FedlqrCost,
    k: *const f64,
    cost_out: *mut f64,
    grad_out: *mut f64,
) -> FedlqrStatus {
    guard(|| {
        let s = &deref(sys, "sys")?.0;
        let sol = lqr::solve_lqr(s, &deref(cost, "cost")?.0, &gain_in(s, k)?)?;
        *cost_out.as_mut().ok_or_else(|| null_err("cost_out"))? = sol.cost;
        if !grad_out.is_null() {
            mat_out(&sol.grad, grad_out, "grad_out")?;
        }
        Ok(())
    })
}

/// Generates M systems around `nominal` with identity masks. When `k0` is
/// non-NULL, perturbations it fails to stabilize are redrawn (up to
/// `max_draws` per system).
#[no_mangle]
pub unsafe extern "C" fn fedlqr_ensemble_generate(
    nominal: *const FedlqrSystem,
    m: usize,
    eps1: f64,
    eps2: f64,
    seed: u64,
    k0: *const f64,
    max_draws: usize,
    out: *mut *mut FedlqrEnsemble,
) -> FedlqrStatus {
    guard(|| {
        let s = &deref(nominal, "nominal")?.0;
        let het = HeterogeneityParams::identity_masks(eps1, eps2, s.nx(), s.nu());
        let e = if k0.is_null() {
            generate_ensemble(s, m, &het, seed)?
        } else {
            generate_ensemble_stabilized(s, m, &het, seed, &gain_in(s, k0)?, max_draws)?
        };
        put(out, FedlqrEnsemble(e))
    })
}

/// Parses an ensemble from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn fedlqr_ensemble_from_json(json: *const c_char, out: *mut *mut FedlqrEnsemble) -> FedlqrStatus {
    guard(|| {
        if json.is_null() {
            return Err(null_err("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Error::InvalidInput("json is not UTF-8".into()))?;
        put(out, FedlqrEnsemble(Ensemble::from_json(text)?))
    })
}

/// Number of systems, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn fedlqr_ensemble_len(e: *const FedlqrEnsemble) -> usize {
    e.as_ref().map_or(0, |e| e.0.m())
}

#[no_mangle]
pub unsafe extern "C" fn fedlqr_ensemble_free(e: *mut FedlqrEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

fn fed_config(p: &FedlqrFedParams) -> Result<FedConfig, Error> {
    let local_policy = match p.local_policy {
        0 => LocalInstabilityPolicy::Skip,
        1 => LocalInstabilityPolicy::Abort,
        2 => LocalInstabilityPolicy::Keep,
        other => return Err(Error::InvalidInput(format!("unknown local policy {other}"))),
    };
    Ok(FedConfig {
        big_l: p.big_l,
        big_n: p.big_n,
        eta_l: p.eta_l,
        eta_g: p.eta_g,
        eta_g_decay: p.eta_g_decay,
        zo: ZoConfig { n_s: p.n_s, tau: p.tau, r: p.r },
        mode: if p.model_free { Mode::ModelFree } else { Mode::ModelBased },
        beta: p.beta,
        master_seed: p.master_seed,
        local_policy,
        init_dist: None,
        eta: None,
    })
}

/// Runs federated policy gradient from `k0` (nu×nx, row-major).
#[no_mangle]
pub unsafe extern "C" fn fedlqr_run(
    ensemble: *const FedlqrEnsemble,
    cost: *const FedlqrCost,
    k0: *const f64,
    params: *const FedlqrFedParams,
    out: *mut *mut FedlqrResult,
) -> FedlqrStatus {
    guard(|| {
        let e = &deref(ensemble, "ensemble")?.0;
        let cfg = fed_config(deref(params, "params")?)?;
        let k0 = gain_in(e.nominal(), k0)?;
        let res = federated::run(e, &deref(cost, "cost")?.0, &k0, &cfg)?;
        put(out, FedlqrResult(res))
    })
}

/// Completed rounds, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn fedlqr_result_rounds(res: *const FedlqrResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.traces.len())
}

/// True when the run stopped because the global gain destabilized a system.
#[no_mangle]
pub unsafe extern "C" fn fedlqr_result_halted(res: *const FedlqrResult) -> bool {
    res.as_ref().is_some_and(|r| r.0.terminated_early.is_some())
}

/// Normalized nominal cost gap after `round` rounds (0 = initial gain).
#[no_mangle]
pub unsafe extern "C" fn fedlqr_result_normalized_gap(
    res: *const FedlqrResult,
    round: usize,
    out: *mut f64,
) -> FedlqrStatus {
    guard(|| {
        let r = &deref(res, "result")?.0;
        let v = if round == 0 {
            r.initial_normalized_gap()
        } else {
            r.traces
                .get(round - 1)
                .ok_or_else(|| Error::InvalidInput(format!("round {round} was not run")))?
                .normalized_gap_nominal
        };
        *out.as_mut().ok_or_else(|| null_err("out"))? = v;
        Ok(())
    })
}

/// Writes the final global gain (nu×nx, row-major).
#[no_mangle]
pub unsafe extern "C" fn fedlqr_result_final_gain(res: *const FedlqrResult, k_out: *mut f64) -> FedlqrStatus {
    guard(|| mat_out(&deref(res, "result")?.0.final_gain.k, k_out, "k_out"))
}

#[no_mangle]
pub unsafe extern "C" fn fedlqr_result_free(res: *mut FedlqrResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}
