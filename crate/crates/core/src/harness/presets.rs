//! Hard-coded nominal problem and the bundled experiment recipes.

use crate::linalg::Mat;
use crate::lqr::{Gain, LinearSystem};

/// A₀ of the nominal system.
pub fn paper_a0() -> Mat {
    Mat::from_row_slice(3, 3, &[1.20, 0.50, 0.40, 0.01, 0.75, 0.30, 0.10, 0.02, 1.50])
}

pub fn paper_nominal() -> LinearSystem {
    LinearSystem { a: paper_a0(), b: Mat::identity(3, 3) }
}

pub fn paper_q() -> Mat {
    Mat::identity(3, 3) * 2.0
}

pub fn paper_r() -> Mat {
    Mat::identity(3, 3) * 0.5
}

pub fn paper_k0() -> Gain {
    Gain { k: Mat::identity(3, 3) * 1.62 }
}

/// Optimal gain of the nominal system as printed (4 decimals).
pub fn paper_k_star_printed() -> Mat {
    Mat::from_row_slice(
        3,
        3,
        &[1.0056, 0.4293, 0.3570, 0.0262, 0.6239, 0.2657, 0.1003, 0.0298, 1.2960],
    )
}

const PAPER_NOMINAL: &str = r#"
name = "paper_nominal"
seeds = [0]
output_dir = "out/paper_nominal"

[ensemble]
nominal = "paper_nominal"
m = 1
eps1 = 0.0
eps2 = 0.0

[fed]
mode = "model_based"
big_l = 1
big_n = 500
eta_l = 1e-3
eta_g = 1.0
n_s = 5
tau = 15
r = 0.1
"#;

const FIG1: &str = r#"
name = "fig1"
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
output_dir = "out/fig1"

[ensemble]
nominal = "paper_nominal"
m = 10
eps1 = 0.5
eps2 = 0.5
require_k0_stabilizing = true

[fed]
mode = "model_free"
big_l = 1
big_n = 1000
eta_l = 1e-2
eta_g = 1e-2
eta_g_decay = 5e-4
eta = 1e-4
n_s = 5
tau = 15
r = 0.1

[sweep]
axis = "m"
values = [1, 5, 10]
"#;

const FIG2: &str = r#"
name = "fig2"
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
output_dir = "out/fig2"

[ensemble]
nominal = "paper_nominal"
m = 10
eps1 = 0.5
eps2 = 0.5
z1 = [[3.5, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.1]]
z2 = [[1.5, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 1.0]]
require_k0_stabilizing = true

[fed]
mode = "model_free"
big_l = 1
big_n = 1000
eta_l = 1e-2
eta_g = 1e-2
eta_g_decay = 5e-4
eta = 1e-4
n_s = 5
tau = 15
r = 0.1

[sweep]
axis = "eps"
pairs = [[0.1, 0.1], [0.5, 0.5], [1.0, 1.0]]
"#;

/// TOML text of a bundled preset.
pub fn preset_toml(name: &str) -> Option<&'static str> {
    match name {
        "paper_nominal" => Some(PAPER_NOMINAL),
        "fig1" => Some(FIG1),
        "fig2" => Some(FIG2),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 3] = ["paper_nominal", "fig1", "fig2"];
