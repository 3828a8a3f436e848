//! Heterogeneous ensembles, trajectory simulation, and the scalar common
//! stabilizability check.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Mat};
use crate::lqr::{is_stabilizing, CostSpec, Gain, LinearSystem};
use crate::matio::nested;
use crate::rng::{substream, Rng};

/// Key separating ensemble streams from the training streams.
const ENSEMBLE_STREAM: u64 = 0xE5E;

/// State norm beyond which a rollout is declared diverged.
pub const DIVERGENCE_GUARD: f64 = 1e150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneityParams {
    pub eps1: f64,
    pub eps2: f64,
    #[serde(with = "nested")]
    pub z1: Mat,
    #[serde(with = "nested")]
    pub z2: Mat,
}

impl HeterogeneityParams {
    /// Z₁ = I, Z₂ = [I; 0] shaped to the nominal system.
    pub fn identity_masks(eps1: f64, eps2: f64, nx: usize, nu: usize) -> Self {
        Self { eps1, eps2, z1: Mat::identity(nx, nx), z2: Mat::identity(nx, nu) }
    }

    fn validate(&self, nominal: &LinearSystem) -> Result<()> {
        if !(self.eps1.is_finite() && self.eps2.is_finite() && self.eps1 >= 0.0 && self.eps2 >= 0.0)
        {
            return Err(Error::InvalidInput("eps1, eps2 must be finite and nonnegative".into()));
        }
        if self.z1.shape() != nominal.a.shape() || self.z2.shape() != nominal.b.shape() {
            return Err(Error::InvalidInput("mask shapes must match (A, B)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub systems: Vec<LinearSystem>,
    /// Index of the unmodified nominal system (0-based).
    pub nominal_index: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub het: Option<HeterogeneityParams>,
}

impl Ensemble {
    pub fn from_systems(systems: Vec<LinearSystem>) -> Result<Self> {
        let e = Self { systems, nominal_index: 0, seed: None, het: None };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .systems
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble is empty".into()))?;
        if self.nominal_index >= self.systems.len() {
            return Err(Error::InvalidInput("nominal_index out of range".into()));
        }
        for s in &self.systems {
            LinearSystem::new(s.a.clone(), s.b.clone())?;
            if s.nx() != first.nx() || s.nu() != first.nu() {
                return Err(Error::InvalidInput("systems have mixed dimensions".into()));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.systems.len()
    }

    pub fn nominal(&self) -> &LinearSystem {
        &self.systems[self.nominal_index]
    }

    /// Indices of systems that `g` fails to stabilize.
    pub fn unstabilized_by(&self, g: &Gain) -> Result<Vec<usize>> {
        let mut bad = Vec::new();
        for (i, s) in self.systems.iter().enumerate() {
            if !is_stabilizing(s, g)? {
                bad.push(i);
            }
        }
        Ok(bad)
    }

    pub fn jointly_stabilizes(&self, g: &Gain) -> Result<bool> {
        Ok(self.unstabilized_by(g)?.is_empty())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: Self =
            serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("ensemble file: {e}")))?;
        e.validate()?;
        Ok(e)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn perturbed(nominal: &LinearSystem, het: &HeterogeneityParams, rng: &mut Rng) -> LinearSystem {
    let g1: f64 = rng.random::<f64>() * het.eps1;
    let g2: f64 = rng.random::<f64>() * het.eps2;
    LinearSystem { a: &nominal.a + &het.z1 * g1, b: &nominal.b + &het.z2 * g2 }
}

/// System 0 is the nominal; system i ≥ 1 is A₀ + γ₁Z₁, B₀ + γ₂Z₂ with
/// γ₁ ~ U(0, ε₁), γ₂ ~ U(0, ε₂) drawn from a stream keyed by (seed, i).
pub fn generate_ensemble(
    nominal: &LinearSystem,
    m: usize,
    het: &HeterogeneityParams,
    rng_seed: u64,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    het.validate(nominal)?;
    let mut systems = vec![nominal.clone()];
    for i in 1..m {
        let mut rng = substream(rng_seed, &[ENSEMBLE_STREAM, i as u64]);
        systems.push(perturbed(nominal, het, &mut rng));
    }
    Ok(Ensemble { systems, nominal_index: 0, seed: Some(rng_seed), het: Some(het.clone()) })
}

/// Like [`generate_ensemble`], but each index keeps drawing from its own
/// stream until `k0` stabilizes the candidate (at most `max_draws` draws).
/// The first draw coincides with the plain generator.
pub fn generate_ensemble_stabilized(
    nominal: &LinearSystem,
    m: usize,
    het: &HeterogeneityParams,
    rng_seed: u64,
    k0: &Gain,
    max_draws: usize,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    het.validate(nominal)?;
    if !is_stabilizing(nominal, k0)? {
        return Err(Error::PreconditionFailed("k0 does not stabilize the nominal system".into()));
    }
    let mut systems = vec![nominal.clone()];
    for i in 1..m {
        let mut rng = substream(rng_seed, &[ENSEMBLE_STREAM, i as u64]);
        let mut found = None;
        for _ in 0..max_draws {
            let s = perturbed(nominal, het, &mut rng);
            if is_stabilizing(&s, k0)? {
                found = Some(s);
                break;
            }
        }
        systems.push(found.ok_or_else(|| {
            Error::PreconditionFailed(format!(
                "no draw stabilized by k0 for system {i} within {max_draws} draws"
            ))
        })?);
    }
    Ok(Ensemble { systems, nominal_index: 0, seed: Some(rng_seed), het: Some(het.clone()) })
}

/// Max pairwise spectral-norm differences of the A and B matrices.
pub fn measure_heterogeneity(e: &Ensemble) -> (f64, f64) {
    let mut eps1: f64 = 0.0;
    let mut eps2: f64 = 0.0;
    for (i, si) in e.systems.iter().enumerate() {
        for sj in &e.systems[i + 1..] {
            eps1 = eps1.max(spectral_norm(&(&si.a - &sj.a)));
            eps2 = eps2.max(spectral_norm(&(&si.b - &sj.b)));
        }
    }
    (eps1, eps2)
}

/// Initial-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitDist {
    StandardNormal { dim: usize },
    BoundedSphere { dim: usize, radius: f64 },
    PointMass { x0: Vec<f64> },
}

impl InitDist {
    pub fn dim(&self) -> usize {
        match self {
            InitDist::StandardNormal { dim } | InitDist::BoundedSphere { dim, .. } => *dim,
            InitDist::PointMass { x0 } => x0.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidInput("initial-state dimension must be positive".into()));
        }
        if let InitDist::BoundedSphere { radius, .. } = self {
            if !(*radius > 0.0 && radius.is_finite()) {
                return Err(Error::InvalidInput("sphere radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// E[x₀x₀ᵀ].
    pub fn second_moment(&self) -> Mat {
        match self {
            InitDist::StandardNormal { dim } => Mat::identity(*dim, *dim),
            InitDist::BoundedSphere { dim, radius } => {
                Mat::identity(*dim, *dim) * (radius * radius / *dim as f64)
            }
            InitDist::PointMass { x0 } => {
                let v = DVector::from_column_slice(x0);
                &v * v.transpose()
            }
        }
    }
}

pub fn sample_initial_state(dist: &InitDist, rng: &mut Rng) -> DVector<f64> {
    match dist {
        InitDist::StandardNormal { dim } => {
            DVector::from_fn(*dim, |_, _| StandardNormal.sample(rng))
        }
        InitDist::BoundedSphere { dim, radius } => loop {
            let v: DVector<f64> = DVector::from_fn(*dim, |_, _| StandardNormal.sample(rng));
            let n = v.norm();
            if n > 0.0 {
                break v * (*radius / n);
            }
        },
        InitDist::PointMass { x0 } => DVector::from_column_slice(x0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }
}

fn check_rollout_args(
    sys: &LinearSystem,
    cost: &CostSpec,
    g: &Gain,
    x0: &DVector<f64>,
    tau: usize,
) -> Result<()> {
    if tau == 0 {
        return Err(Error::InvalidInput("tau must be at least 1".into()));
    }
    sys.closed_loop(g)?;
    if x0.len() != sys.nx() || cost.nx() != sys.nx() || cost.nu() != sys.nu() {
        return Err(Error::InvalidInput("rollout dimensions are inconsistent".into()));
    }
    Ok(())
}

/// Simulates u = −K̂x for τ steps; stage costs run over t = 0..τ−1.
pub fn rollout(
    sys: &LinearSystem,
    cost: &CostSpec,
    perturbed_gain: &Gain,
    x0: &DVector<f64>,
    tau: usize,
) -> Result<Trajectory> {
    check_rollout_args(sys, cost, perturbed_gain, x0, tau)?;
    let mut states = Vec::with_capacity(tau + 1);
    let mut inputs = Vec::with_capacity(tau);
    let mut stage_costs = Vec::with_capacity(tau);
    let mut x = x0.clone();
    let mut partial = 0.0;
    for t in 0..tau {
        let u = -(&perturbed_gain.k * &x);
        let c = x.dot(&(&cost.q * &x)) + u.dot(&(&cost.r * &u));
        let next = &sys.a * &x + &sys.b * &u;
        partial += c;
        states.push(x);
        inputs.push(u);
        stage_costs.push(c);
        let n = next.norm();
        if !(n <= DIVERGENCE_GUARD) {
            return Err(Error::TrajectoryDiverged { step: t + 1, partial_cost: partial });
        }
        x = next;
    }
    states.push(x);
    Ok(Trajectory { states, inputs, stage_costs })
}

/// Total truncated cost only, without storing the trajectory.
pub fn rollout_cost(
    sys: &LinearSystem,
    cost: &CostSpec,
    perturbed_gain: &Gain,
    x0: &DVector<f64>,
    tau: usize,
) -> Result<f64> {
    check_rollout_args(sys, cost, perturbed_gain, x0, tau)?;
    // Closed-loop form: x' = (A − BK̂)x, stage weight Q + K̂ᵀRK̂.
    let f = &sys.a - &sys.b * &perturbed_gain.k;
    let w = &cost.q + perturbed_gain.k.transpose() * &cost.r * &perturbed_gain.k;
    let mut x = x0.clone();
    let mut total = 0.0;
    for t in 0..tau {
        total += x.dot(&(&w * &x));
        x = &f * &x;
        if !(x.norm() <= DIVERGENCE_GUARD) {
            return Err(Error::TrajectoryDiverged { step: t + 1, partial_cost: total });
        }
    }
    Ok(total)
}

/// Some k with |aᵢ − bᵢk| < 1 for every pair, or None if the feasible
/// intervals do not intersect.
pub fn common_scalar_gain_feasible(pairs: &[(f64, f64)]) -> Option<f64> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &(a, b) in pairs {
        if b == 0.0 {
            if a.abs() >= 1.0 {
                return None;
            }
            continue;
        }
        let (l, h) = if b > 0.0 {
            ((a - 1.0) / b, (a + 1.0) / b)
        } else {
            ((a + 1.0) / b, (a - 1.0) / b)
        };
        lo = lo.max(l);
        hi = hi.min(h);
    }
    if !(lo < hi) {
        return None;
    }
    let k = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    };
    pairs.iter().all(|&(a, b)| (a - b * k).abs() < 1.0).then_some(k)
}
