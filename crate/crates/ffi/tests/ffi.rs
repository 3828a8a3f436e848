use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use fedlqr_ffi::*;

const A0: [f64; 9] = [1.20, 0.50, 0.40, 0.01, 0.75, 0.30, 0.10, 0.02, 1.50];
const I3: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

fn scaled(m: [f64; 9], s: f64) -> [f64; 9] {
    m.map(|v| v * s)
}

struct Fixture {
    sys: *mut FedlqrSystem,
    cost: *mut FedlqrCost,
}

impl Fixture {
    fn new() -> Self {
        let mut sys = ptr::null_mut();
        let mut cost = ptr::null_mut();
        unsafe {
            assert_eq!(fedlqr_system_new(A0.as_ptr(), I3.as_ptr(), 3, 3, &mut sys), FedlqrStatus::Ok);
            let (q, r) = (scaled(I3, 2.0), scaled(I3, 0.5));
            assert_eq!(
                fedlqr_cost_new(q.as_ptr(), r.as_ptr(), I3.as_ptr(), 3, 3, 3f64.sqrt(), &mut cost),
                FedlqrStatus::Ok
            );
        }
        Self { sys, cost }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            fedlqr_system_free(self.sys);
            fedlqr_cost_free(self.cost);
        }
    }
}

fn last_error() -> String {
    let p = fedlqr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn optimal_gain_matches_printed_nominal_gain() {
    let f = Fixture::new();
    let mut k = [0.0; 9];
    unsafe {
        assert_eq!(fedlqr_optimal_gain(f.sys, f.cost, k.as_mut_ptr()), FedlqrStatus::Ok);
    }
    let printed = [1.0056, 0.4293, 0.3570, 0.0262, 0.6239, 0.2657, 0.1003, 0.0298, 1.2960];
    for (a, b) in k.iter().zip(printed) {
        assert!((a - b).abs() <= 5e-4, "{a} vs {b}");
    }
}

#[test]
fn cost_and_gradient_vanish_at_optimum() {
    let f = Fixture::new();
    let mut k = [0.0; 9];
    let (mut c_opt, mut c0) = (0.0, 0.0);
    let mut grad = [1.0; 9];
    unsafe {
        fedlqr_optimal_gain(f.sys, f.cost, k.as_mut_ptr());
        assert_eq!(fedlqr_exact_cost(f.sys, f.cost, k.as_ptr(), &mut c_opt, grad.as_mut_ptr()), FedlqrStatus::Ok);
        let k0 = scaled(I3, 1.62);
        assert_eq!(fedlqr_exact_cost(f.sys, f.cost, k0.as_ptr(), &mut c0, ptr::null_mut()), FedlqrStatus::Ok);
    }
    assert!(grad.iter().all(|g| g.abs() < 1e-8));
    assert!(c0 > c_opt);
}

#[test]
fn unstable_gain_reports_status_and_message() {
    let f = Fixture::new();
    let zero = [0.0; 9];
    let mut c = 0.0;
    let mut rho = 0.0;
    unsafe {
        assert_eq!(fedlqr_closed_loop_radius(f.sys, zero.as_ptr(), &mut rho), FedlqrStatus::Ok);
        assert!(rho > 1.0);
        assert_eq!(
            fedlqr_exact_cost(f.sys, f.cost, zero.as_ptr(), &mut c, ptr::null_mut()),
            FedlqrStatus::UnstableSystem
        );
    }
    assert!(last_error().contains("not stable"));
}

#[test]
fn null_pointers_are_rejected() {
    let mut sys = ptr::null_mut();
    unsafe {
        assert_eq!(fedlqr_system_new(ptr::null(), I3.as_ptr(), 3, 3, &mut sys), FedlqrStatus::NullPointer);
        assert!(sys.is_null());
        assert_eq!(fedlqr_ensemble_len(ptr::null()), 0);
        fedlqr_system_free(ptr::null_mut());
        fedlqr_result_free(ptr::null_mut());
    }
    assert!(last_error().contains("null pointer"));
}

#[test]
fn invalid_cost_is_rejected() {
    let mut cost = ptr::null_mut();
    let neg = scaled(I3, -1.0);
    unsafe {
        let st = fedlqr_cost_new(I3.as_ptr(), neg.as_ptr(), I3.as_ptr(), 3, 3, 1.0, &mut cost);
        assert_ne!(st, FedlqrStatus::Ok);
    }
    assert!(cost.is_null());
}

fn params(model_free: bool, big_n: usize) -> FedlqrFedParams {
    FedlqrFedParams {
        big_l: 1,
        big_n,
        eta_l: 1e-3,
        eta_g: 1.0,
        eta_g_decay: 0.0,
        model_free,
        n_s: 5,
        tau: 15,
        r: 0.1,
        beta: 1.0,
        master_seed: 7,
        local_policy: 0,
    }
}

#[test]
fn model_based_run_reduces_gap() {
    let f = Fixture::new();
    let k0 = scaled(I3, 1.62);
    let mut ens = ptr::null_mut();
    let mut res = ptr::null_mut();
    unsafe {
        assert_eq!(
            fedlqr_ensemble_generate(f.sys, 3, 0.05, 0.05, 11, k0.as_ptr(), 1000, &mut ens),
            FedlqrStatus::Ok
        );
        assert_eq!(fedlqr_ensemble_len(ens), 3);
        let p = params(false, 50);
        assert_eq!(fedlqr_run(ens, f.cost, k0.as_ptr(), &p, &mut res), FedlqrStatus::Ok);
        assert_eq!(fedlqr_result_rounds(res), 50);
        assert!(!fedlqr_result_halted(res));
        let (mut g0, mut g50) = (0.0, 0.0);
        assert_eq!(fedlqr_result_normalized_gap(res, 0, &mut g0), FedlqrStatus::Ok);
        assert_eq!(fedlqr_result_normalized_gap(res, 50, &mut g50), FedlqrStatus::Ok);
        assert!(g50 < g0);
        assert_eq!(fedlqr_result_normalized_gap(res, 51, &mut g50), FedlqrStatus::InvalidInput);
        let mut k = [0.0; 9];
        assert_eq!(fedlqr_result_final_gain(res, k.as_mut_ptr()), FedlqrStatus::Ok);
        assert!(k.iter().all(|v| v.is_finite()));
        fedlqr_result_free(res);
        fedlqr_ensemble_free(ens);
    }
}

#[test]
fn unknown_local_policy_is_invalid_input() {
    let f = Fixture::new();
    let k0 = scaled(I3, 1.62);
    let mut ens = ptr::null_mut();
    let mut res = ptr::null_mut();
    unsafe {
        fedlqr_ensemble_generate(f.sys, 1, 0.0, 0.0, 0, ptr::null(), 0, &mut ens);
        let mut p = params(true, 1);
        p.local_policy = 9;
        assert_eq!(fedlqr_run(ens, f.cost, k0.as_ptr(), &p, &mut res), FedlqrStatus::InvalidInput);
        assert!(res.is_null());
        fedlqr_ensemble_free(ens);
    }
}

#[test]
fn ensemble_json_round_trip() {
    let f = Fixture::new();
    let mut ens = ptr::null_mut();
    unsafe {
        fedlqr_ensemble_generate(f.sys, 4, 0.1, 0.1, 3, ptr::null(), 0, &mut ens);
    }
    let text = std::ffi::CString::new(
        r#"{"systems":[{"a":[[0.5]],"b":[[1.0]]},{"a":[[0.6]],"b":[[1.0]]}],"nominal_index":0}"#,
    )
    .unwrap();
    let mut parsed = ptr::null_mut();
    unsafe {
        assert_eq!(fedlqr_ensemble_from_json(text.as_ptr(), &mut parsed), FedlqrStatus::Ok);
        assert_eq!(fedlqr_ensemble_len(parsed), 2);
        let bad = std::ffi::CString::new("{").unwrap();
        let mut none = ptr::null_mut();
        assert_ne!(fedlqr_ensemble_from_json(bad.as_ptr(), &mut none), FedlqrStatus::Ok);
        fedlqr_ensemble_free(parsed);
        fedlqr_ensemble_free(ens);
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(fedlqr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/fedlqr.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "fedlqr_system_new",
        "fedlqr_cost_new",
        "fedlqr_optimal_gain",
        "fedlqr_exact_cost",
        "fedlqr_ensemble_generate",
        "fedlqr_run",
        "fedlqr_result_free",
        "fedlqr_last_error",
        "FEDLQR_STATUS_NULL_POINTER",
        "typedef struct FedlqrSystem FedlqrSystem",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(header())
        .status()
    else {
        eprintln!("no C compiler on PATH; header syntax check not run");
        return;
    };
    assert!(status.success());
}
