//! Experiment configuration: a single TOML file, unknown keys rejected.
//!
//! A top-level `preset = "<name>"` loads a bundled recipe first; every other
//! key in the file then overrides the preset value at the same path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::InitDist;
use crate::error::{Error, Result};
use crate::federated::{FedConfig, LocalInstabilityPolicy, Mode};
use crate::linalg::Mat;
use crate::lqr::{CostSpec, Gain, LinearSystem};
use crate::matio::from_rows;
use crate::zo::ZoConfig;

use super::presets;

type Rows = Vec<Vec<f64>>;

fn default_name() -> String {
    "experiment".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

fn default_max_draws() -> usize {
    10_000
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub cost: CostSection,
    pub fed: FedSection,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NominalSpec {
    /// Only "paper_nominal" is known.
    Preset(String),
    Explicit(ExplicitSystem),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSystem {
    pub a: Rows,
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub nominal: NominalSpec,
    pub m: usize,
    pub eps1: f64,
    pub eps2: f64,
    /// Mask for A; identity when absent.
    #[serde(default)]
    pub z1: Option<Rows>,
    /// Mask for B; identity-shaped when absent.
    #[serde(default)]
    pub z2: Option<Rows>,
    /// Redraw perturbations that k0 fails to stabilize.
    #[serde(default = "default_true")]
    pub require_k0_stabilizing: bool,
    #[serde(default = "default_max_draws")]
    pub max_draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    StandardNormal,
    /// Uniform on the sphere of radius h_bound.
    BoundedSphere,
    /// Fixed x0.
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default)]
    pub q: Option<Rows>,
    #[serde(default)]
    pub r: Option<Rows>,
    /// E[x0 x0ᵀ]; derived from `init` when absent.
    #[serde(default)]
    pub sigma0: Option<Rows>,
    /// Bound H on ‖x0‖; sqrt(tr Σ0) when absent.
    #[serde(default)]
    pub h_bound: Option<f64>,
    #[serde(default)]
    pub k0: Option<Rows>,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    pub mode: Mode,
    pub big_l: usize,
    pub big_n: usize,
    pub eta_l: f64,
    pub eta_g: f64,
    #[serde(default)]
    pub eta_g_decay: f64,
    /// Opt-in consistency check η = L·η_g·η_l.
    #[serde(default)]
    pub eta: Option<f64>,
    pub n_s: usize,
    pub tau: usize,
    pub r: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub local_policy: LocalInstabilityPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    M { values: Vec<usize> },
    Eps { pairs: Vec<[f64; 2]> },
}

fn default_het_gradient_cases() -> usize {
    50
}

fn default_random_cases() -> usize {
    100
}

fn default_closeness_cases() -> usize {
    20
}

fn default_accuracy() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_het_gradient_cases")]
    pub het_gradient_cases: usize,
    #[serde(default = "default_random_cases")]
    pub random_cases: usize,
    #[serde(default = "default_closeness_cases")]
    pub closeness_cases: usize,
    /// Accuracy ε fed to the horizon and sample-size prescriptions.
    #[serde(default = "default_accuracy")]
    pub accuracy: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            het_gradient_cases: default_het_gradient_cases(),
            random_cases: default_random_cases(),
            closeness_cases: default_closeness_cases(),
            accuracy: default_accuracy(),
            delta: default_delta(),
            seed: 0,
        }
    }
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub label: String,
    pub m: usize,
    pub eps1: f64,
    pub eps2: f64,
}

impl SweepPoint {
    fn new(m: usize, eps1: f64, eps2: f64) -> Self {
        Self { label: format!("m{m}_eps{eps1:?}_{eps2:?}"), m, eps1, eps2 }
    }
}

/// Everything a run needs, resolved from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub nominal: LinearSystem,
    pub cost: CostSpec,
    pub k0: Gain,
    pub init: InitDist,
    pub z1: Mat,
    pub z2: Mat,
    /// FedConfig with `master_seed` still to be set per run.
    pub fed: FedConfig,
}

fn cfg_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Deep merge, except that `sweep` is replaced as a whole (its keys depend on the axis).
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if k != "sweep" => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn rows_to_mat(rows: &Rows, what: &str) -> Result<Mat> {
    from_rows(rows).map_err(|e| Error::Config(format!("{what}: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(cfg_err)?;
        if let Some(p) = table.remove("preset") {
            let name = p.as_str().ok_or_else(|| cfg_err("preset must be a string"))?;
            let base_text = presets::preset_toml(name).ok_or_else(|| {
                cfg_err(format!("unknown preset {name:?}; known: {:?}", presets::PRESET_NAMES))
            })?;
            let mut base: toml::Table = toml::from_str(base_text).map_err(cfg_err)?;
            merge(&mut base, table);
            table = base;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        Self::from_toml_str(&format!("preset = {name:?}"))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(cfg_err)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(cfg_err("seeds must be nonempty"));
        }
        if self.ensemble.m == 0 {
            return Err(cfg_err("ensemble.m must be at least 1"));
        }
        match &self.sweep {
            Some(Sweep::M { values }) if values.is_empty() || values.contains(&0) => {
                return Err(cfg_err("sweep values must be nonempty and positive"))
            }
            Some(Sweep::Eps { pairs }) if pairs.is_empty() => {
                return Err(cfg_err("sweep pairs must be nonempty"))
            }
            _ => {}
        }
        self.problem()?;
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let e = &self.ensemble;
        match &self.sweep {
            None => vec![SweepPoint::new(e.m, e.eps1, e.eps2)],
            Some(Sweep::M { values }) => {
                values.iter().map(|&m| SweepPoint::new(m, e.eps1, e.eps2)).collect()
            }
            Some(Sweep::Eps { pairs }) => {
                pairs.iter().map(|&[a, b]| SweepPoint::new(e.m, a, b)).collect()
            }
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        let (nominal, is_preset) = match &self.ensemble.nominal {
            NominalSpec::Preset(name) if name == "paper_nominal" => (presets::paper_nominal(), true),
            NominalSpec::Preset(name) => {
                return Err(cfg_err(format!("unknown nominal preset {name:?}")))
            }
            NominalSpec::Explicit(s) => (
                LinearSystem::new(rows_to_mat(&s.a, "nominal.a")?, rows_to_mat(&s.b, "nominal.b")?)
                    .map_err(cfg_err)?,
                false,
            ),
        };
        let (nx, nu) = (nominal.nx(), nominal.nu());
        let c = &self.cost;
        let pick = |rows: &Option<Rows>, preset: fn() -> Mat, what: &str| -> Result<Mat> {
            match rows {
                Some(r) => rows_to_mat(r, what),
                None if is_preset => Ok(preset()),
                None => Err(cfg_err(format!("cost.{what} is required for an explicit nominal"))),
            }
        };
        let q = pick(&c.q, presets::paper_q, "q")?;
        let r = pick(&c.r, presets::paper_r, "r")?;
        let k0 = Gain::new(pick(&c.k0, || presets::paper_k0().k, "k0")?).map_err(cfg_err)?;
        if k0.k.shape() != (nu, nx) {
            return Err(cfg_err(format!("k0 must be {nu}x{nx}")));
        }
        let init = match c.init {
            InitKind::StandardNormal => InitDist::StandardNormal { dim: nx },
            InitKind::BoundedSphere => InitDist::BoundedSphere {
                dim: nx,
                radius: c.h_bound.ok_or_else(|| cfg_err("bounded_sphere needs cost.h_bound"))?,
            },
            InitKind::PointMass => InitDist::PointMass {
                x0: c.x0.clone().ok_or_else(|| cfg_err("point_mass needs cost.x0"))?,
            },
        };
        if init.dim() != nx {
            return Err(cfg_err("cost.x0 dimension differs from n_x"));
        }
        init.validate().map_err(cfg_err)?;
        let sigma0 = match &c.sigma0 {
            Some(rows) => rows_to_mat(rows, "sigma0")?,
            None => init.second_moment(),
        };
        let h_bound = c.h_bound.unwrap_or_else(|| sigma0.trace().max(0.0).sqrt());
        let cost = CostSpec::new(q, r, sigma0, h_bound).map_err(cfg_err)?;
        if cost.nx() != nx || cost.nu() != nu {
            return Err(cfg_err("Q/R dimensions differ from the nominal system"));
        }
        let z1 = match &self.ensemble.z1 {
            Some(rows) => rows_to_mat(rows, "z1")?,
            None => Mat::identity(nx, nx),
        };
        let z2 = match &self.ensemble.z2 {
            Some(rows) => rows_to_mat(rows, "z2")?,
            None => Mat::identity(nx, nu),
        };
        for p in self.points() {
            if !(p.eps1 >= 0.0 && p.eps2 >= 0.0 && p.eps1.is_finite() && p.eps2.is_finite()) {
                return Err(cfg_err("heterogeneity levels must be finite and nonnegative"));
            }
        }
        if z1.shape() != (nx, nx) || z2.shape() != (nx, nu) {
            return Err(cfg_err("mask shapes must match (A, B)"));
        }
        let f = &self.fed;
        let fed = FedConfig {
            big_l: f.big_l,
            big_n: f.big_n,
            eta_l: f.eta_l,
            eta_g: f.eta_g,
            eta_g_decay: f.eta_g_decay,
            zo: ZoConfig { n_s: f.n_s, tau: f.tau, r: f.r },
            mode: f.mode,
            beta: f.beta,
            master_seed: 0,
            local_policy: f.local_policy,
            init_dist: Some(init.clone()),
            eta: f.eta,
        };
        fed.validate().map_err(cfg_err)?;
        fed.zo.validate().map_err(cfg_err)?;
        Ok(Problem { nominal, cost, k0, init, z1, z2, fed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in presets::PRESET_NAMES {
            ExperimentConfig::from_preset(name).unwrap();
        }
    }

    #[test]
    fn unknown_keys_fail_closed() {
        let err = ExperimentConfig::from_toml_str("preset = \"fig1\"\n[fed]\neta_local = 1.0\n");
        assert!(matches!(err, Err(Error::Config(_))));
        let err = ExperimentConfig::from_toml_str("preset = \"fig1\"\nseedz = [1]\n");
        assert!(matches!(err, Err(Error::Config(_))));
        let err = ExperimentConfig::from_toml_str(
            "preset = \"fig1\"\n[sweep]\naxis = \"m\"\nvalues = [1]\nextra = 2\n",
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn overrides_apply_over_preset() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"fig1\"\nseeds = [4]\n[fed]\nbig_n = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.fed.big_n, 3);
        assert_eq!(cfg.fed.n_s, 5);
        assert_eq!(cfg.points().len(), 3);
    }

    #[test]
    fn sweep_override_replaces_axis() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"fig1\"\n[sweep]\naxis = \"eps\"\npairs = [[0.1, 0.2]]\n",
        )
        .unwrap();
        assert_eq!(cfg.points().len(), 1);
        assert_eq!(cfg.points()[0].eps2, 0.2);
    }

    #[test]
    fn eta_mismatch_is_a_config_error() {
        let err = ExperimentConfig::from_toml_str("preset = \"fig1\"\n[fed]\neta = 1e-3\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn explicit_nominal_needs_cost() {
        let text = r#"
seeds = [0]
[ensemble]
nominal = { a = [[0.5]], b = [[1.0]] }
m = 1
eps1 = 0.0
eps2 = 0.0
[fed]
mode = "model_based"
big_l = 1
big_n = 1
eta_l = 0.1
eta_g = 1.0
n_s = 1
tau = 1
r = 0.1
"#;
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))));
        let with_cost = format!("{text}\n[cost]\nq = [[1.0]]\nr = [[1.0]]\nk0 = [[0.0]]\n");
        ExperimentConfig::from_toml_str(&with_cost).unwrap();
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::from_preset("fig2").unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
