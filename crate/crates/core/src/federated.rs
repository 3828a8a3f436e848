//! The federated loop: local gradient steps, delta upload, server averaging,
//! with per-round stability gating and trace recording.

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, InitDist};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::lqr::{closed_loop_radius, exact_cost, optimal_gain, solve_lqr, CostSpec, Gain, LinearSystem};
use crate::matio::fmt_f64;
use crate::rng::substream;
use crate::zo::{estimate_gradient, ZoConfig};

const TRAIN_STREAM: u64 = 0x7EA1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ModelBased,
    ModelFree,
}

/// What to do when an intermediate local gain destabilizes its agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalInstabilityPolicy {
    /// Drop the agent's delta for this round and record it.
    #[default]
    Skip,
    /// Abort the run with `LocalInstability`.
    Abort,
    /// Record it and keep stepping (model-free only; model-based falls back to skip
    /// because the exact gradient is undefined there).
    Keep,
}

fn default_beta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    /// Local steps per round.
    pub big_l: usize,
    /// Rounds.
    pub big_n: usize,
    pub eta_l: f64,
    pub eta_g: f64,
    /// Fractional decay of η_g applied after each round.
    #[serde(default)]
    pub eta_g_decay: f64,
    pub zo: ZoConfig,
    pub mode: Mode,
    /// Slack of the stabilizing set: gapᵢ ≤ β·initial gapᵢ.
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub local_policy: LocalInstabilityPolicy,
    /// Initial-state law for rollouts; standard normal when absent.
    #[serde(default)]
    pub init_dist: Option<InitDist>,
    /// Opt-in effective step η; when set it must equal L·η_g·η_l.
    #[serde(default)]
    pub eta: Option<f64>,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.big_l == 0 {
            return Err(Error::InvalidInput("big_l must be at least 1".into()));
        }
        for (v, name) in [(self.eta_l, "eta_l"), (self.eta_g, "eta_g"), (self.beta, "beta")] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidInput("beta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.eta_g_decay) {
            return Err(Error::InvalidInput("eta_g_decay must lie in [0, 1)".into()));
        }
        if self.mode == Mode::ModelFree {
            self.zo.validate()?;
        }
        if let Some(d) = &self.init_dist {
            d.validate()?;
        }
        if let Some(eta) = self.eta {
            let implied = self.big_l as f64 * self.eta_g * self.eta_l;
            if (eta - implied).abs() > 1e-12 * eta.abs().max(implied.abs()) {
                return Err(Error::InvalidInput(format!(
                    "eta = {eta} but L*eta_g*eta_l = {implied}"
                )));
            }
        }
        Ok(())
    }

    fn dist(&self, nx: usize) -> InitDist {
        self.init_dist.clone().unwrap_or(InitDist::StandardNormal { dim: nx })
    }
}

/// Identifies the RNG streams of one agent's local steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalStream {
    pub master_seed: u64,
    pub round: u64,
    pub agent: u64,
    /// Local-step index of the first step taken by this call.
    pub first_step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    pub k_local: Gain,
    /// K_{n,L} − K_n, or None when the agent was skipped.
    pub delta: Option<Mat>,
    pub diverged: usize,
    /// First intermediate local step whose gain destabilized the agent.
    pub instability: Option<usize>,
    /// Max closed-loop radius over intermediate gains K_{n,1..L−1} (0 if L = 1).
    pub max_intermediate_radius: f64,
    /// Radius of K_{n,L}; diagnostic only, this gain is never rolled out.
    pub final_radius: f64,
}

/// L local steps from `k_start`. Exact gradients in model-based mode, ZO
/// estimates otherwise. The gain at which each gradient is taken (local step
/// l = 0..L−1) is gated for stability.
pub fn local_update(
    agent_sys: &LinearSystem,
    cost: &CostSpec,
    k_start: &Gain,
    cfg: &FedConfig,
    stream: LocalStream,
) -> Result<LocalOutcome> {
    let agent = stream.agent as usize;
    let dist = cfg.dist(agent_sys.nx());
    let mut k = k_start.clone();
    let mut diverged = 0;
    let mut instability = None;
    let mut max_intermediate_radius: f64 = 0.0;
    for l in 0..cfg.big_l {
        let step = stream.first_step + l as u64;
        let radius = closed_loop_radius(agent_sys, &k)?;
        if l > 0 {
            max_intermediate_radius = max_intermediate_radius.max(radius);
        }
        if radius >= 1.0 - crate::lqr::STABILITY_MARGIN {
            match (cfg.local_policy, cfg.mode) {
                (LocalInstabilityPolicy::Abort, _) => {
                    return Err(Error::LocalInstability { agent, step: step as usize })
                }
                (LocalInstabilityPolicy::Keep, Mode::ModelFree) => {
                    instability.get_or_insert(step as usize);
                }
                _ => {
                    let final_radius = radius;
                    return Ok(LocalOutcome {
                        k_local: k,
                        delta: None,
                        diverged,
                        instability: Some(step as usize),
                        max_intermediate_radius,
                        final_radius,
                    });
                }
            }
        }
        let grad = match cfg.mode {
            Mode::ModelBased => solve_lqr(agent_sys, cost, &k)?.grad,
            Mode::ModelFree => {
                let mut rng = substream(
                    stream.master_seed,
                    &[TRAIN_STREAM, stream.round, stream.agent, step],
                );
                let est = estimate_gradient(agent_sys, cost, &k, &cfg.zo, &dist, &mut rng)?;
                diverged += est.diverged_count;
                est.grad_hat
            }
        };
        k = Gain { k: &k.k - grad * cfg.eta_l };
    }
    let final_radius = closed_loop_radius(agent_sys, &k)?;
    let delta = Some(&k.k - &k_start.k);
    Ok(LocalOutcome { k_local: k, delta, diverged, instability, max_intermediate_radius, final_radius })
}

/// K_{n+1} = K_n + (η_g/M)·Σ deltas.
pub fn aggregate(k_global: &Gain, deltas: &[Mat], eta_g: f64) -> Result<Gain> {
    let first = deltas.first().ok_or_else(|| Error::InvalidInput("no deltas".into()))?;
    if first.shape() != k_global.k.shape() || deltas.iter().any(|d| d.shape() != first.shape()) {
        return Err(Error::InvalidInput("delta shapes differ from the gain".into()));
    }
    let mut sum = Mat::zeros(first.nrows(), first.ncols());
    for d in deltas {
        sum += d;
    }
    Ok(Gain { k: &k_global.k + sum * (eta_g / deltas.len() as f64) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Completed rounds; the row describes K_round.
    pub round: usize,
    pub global_gain: Gain,
    pub per_agent_cost_gap: Vec<f64>,
    pub per_agent_spectral_radius: Vec<f64>,
    pub per_agent_stab_ok: Vec<bool>,
    pub per_agent_diverged: Vec<usize>,
    pub per_agent_skipped: Vec<bool>,
    pub normalized_gap_nominal: f64,
    pub max_spectral_radius: f64,
    pub stab_set_ok: bool,
    pub diverged_estimates: usize,
    pub local_instabilities: usize,
    /// Max radius over intermediate local gains of this round.
    pub max_local_radius: f64,
    /// Max radius over the final local iterates K_{n,L} (not rolled out).
    pub max_final_local_radius: f64,
    pub eta_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedResult {
    pub traces: Vec<RoundTrace>,
    pub final_gain: Gain,
    pub terminated_early: Option<String>,
    pub optimal_costs: Vec<f64>,
    pub initial_gaps: Vec<f64>,
    pub nominal_index: usize,
}

impl FedResult {
    pub fn initial_normalized_gap(&self) -> f64 {
        let i = self.nominal_index;
        self.initial_gaps[i] / self.optimal_costs[i]
    }

    /// Normalized nominal gap after every round 0..=N, with rounds after an
    /// early halt filled by +∞ (the cost of a destabilizing gain).
    pub fn normalized_gap_series(&self, big_n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(big_n + 1);
        out.push(self.initial_normalized_gap());
        out.extend(self.traces.iter().map(|t| t.normalized_gap_nominal));
        out.resize(big_n + 1, f64::INFINITY);
        out
    }
}

fn gap_in_set(gap: f64, gap0: f64, beta: f64, c_star: f64) -> bool {
    gap <= beta * gap0 + 1e-12 * c_star
}

pub fn run(ensemble: &Ensemble, cost: &CostSpec, k0: &Gain, cfg: &FedConfig) -> Result<FedResult> {
    cfg.validate()?;
    ensemble.validate()?;
    let bad = ensemble.unstabilized_by(k0)?;
    if !bad.is_empty() {
        return Err(Error::PreconditionFailed(format!(
            "k0 does not stabilize systems {bad:?}"
        )));
    }
    let m = ensemble.m();
    let mut optimal_costs = Vec::with_capacity(m);
    let mut initial_gaps = Vec::with_capacity(m);
    for s in &ensemble.systems {
        let (_, k_star) = optimal_gain(s, cost)?;
        let c_star = exact_cost(s, cost, &k_star)?;
        optimal_costs.push(c_star);
        initial_gaps.push(exact_cost(s, cost, k0)? - c_star);
    }
    let nom = ensemble.nominal_index;
    let mut k = k0.clone();
    let mut eta_g = cfg.eta_g;
    let mut traces = Vec::with_capacity(cfg.big_n);
    let mut terminated_early = None;
    for n in 0..cfg.big_n {
        let mut deltas = Vec::with_capacity(m);
        let mut per_agent_diverged = Vec::with_capacity(m);
        let mut per_agent_skipped = Vec::with_capacity(m);
        let mut local_instabilities = 0;
        let mut max_local_radius: f64 = 0.0;
        let mut max_final_local_radius: f64 = 0.0;
        for (i, s) in ensemble.systems.iter().enumerate() {
            let stream =
                LocalStream { master_seed: cfg.master_seed, round: n as u64, agent: i as u64, first_step: 0 };
            let out = local_update(s, cost, &k, cfg, stream)?;
            per_agent_diverged.push(out.diverged);
            per_agent_skipped.push(out.delta.is_none());
            local_instabilities += usize::from(out.instability.is_some());
            max_local_radius = max_local_radius.max(out.max_intermediate_radius);
            max_final_local_radius = max_final_local_radius.max(out.final_radius);
            // A skipped agent contributes a zero delta; the average stays over M.
            deltas.push(out.delta.unwrap_or_else(|| Mat::zeros(k.k.nrows(), k.k.ncols())));
        }
        k = aggregate(&k, &deltas, eta_g)?;
        let round_eta_g = eta_g;
        eta_g *= 1.0 - cfg.eta_g_decay;

        let mut per_agent_cost_gap = Vec::with_capacity(m);
        let mut per_agent_spectral_radius = Vec::with_capacity(m);
        let mut per_agent_stab_ok = Vec::with_capacity(m);
        let mut unstable = Vec::new();
        for (i, s) in ensemble.systems.iter().enumerate() {
            let rho = closed_loop_radius(s, &k)?;
            per_agent_spectral_radius.push(rho);
            let gap = if rho < 1.0 - crate::lqr::STABILITY_MARGIN {
                exact_cost(s, cost, &k)? - optimal_costs[i]
            } else {
                unstable.push(i);
                f64::INFINITY
            };
            per_agent_stab_ok.push(gap_in_set(gap, initial_gaps[i], cfg.beta, optimal_costs[i]));
            per_agent_cost_gap.push(gap);
        }
        let max_spectral_radius = per_agent_spectral_radius.iter().copied().fold(0.0, f64::max);
        traces.push(RoundTrace {
            round: n + 1,
            global_gain: k.clone(),
            normalized_gap_nominal: per_agent_cost_gap[nom] / optimal_costs[nom],
            stab_set_ok: per_agent_stab_ok.iter().all(|&b| b),
            per_agent_cost_gap,
            per_agent_spectral_radius,
            per_agent_stab_ok,
            diverged_estimates: per_agent_diverged.iter().sum(),
            per_agent_diverged,
            per_agent_skipped,
            max_spectral_radius,
            local_instabilities,
            max_local_radius,
            max_final_local_radius,
            eta_g: round_eta_g,
        });
        if !unstable.is_empty() {
            terminated_early =
                Some(format!("global gain destabilized systems {unstable:?} at round {}", n + 1));
            break;
        }
    }
    Ok(FedResult { traces, final_gain: k, terminated_early, optimal_costs, initial_gaps, nominal_index: nom })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rounds: usize,
    /// None for an empty trace.
    pub fraction_stab_ok: Option<f64>,
    pub max_spectral_radius: Option<f64>,
    pub first_violation_round: Option<usize>,
    pub first_unstable_round: Option<usize>,
    pub local_instabilities: usize,
    pub max_local_radius: Option<f64>,
}

pub fn stability_report(result: &FedResult) -> StabilityReport {
    let t = &result.traces;
    let max_of = |f: fn(&RoundTrace) -> f64| {
        (!t.is_empty()).then(|| t.iter().map(f).fold(0.0, f64::max))
    };
    StabilityReport {
        rounds: t.len(),
        fraction_stab_ok: (!t.is_empty())
            .then(|| t.iter().filter(|r| r.stab_set_ok).count() as f64 / t.len() as f64),
        max_spectral_radius: max_of(|r| r.max_spectral_radius),
        first_violation_round: t.iter().find(|r| !r.stab_set_ok).map(|r| r.round),
        first_unstable_round: t.iter().find(|r| r.max_spectral_radius >= 1.0).map(|r| r.round),
        local_instabilities: t.iter().map(|r| r.local_instabilities).sum(),
        max_local_radius: max_of(|r| r.max_local_radius),
    }
}

pub const TRACE_HEADER: &str =
    "round,agent,cost_gap,normalized_gap,spectral_radius,stab_ok,diverged_estimates";

/// One row per (round, agent).
pub fn trace_csv(result: &FedResult) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for t in &result.traces {
        for i in 0..t.per_agent_cost_gap.len() {
            let gap = t.per_agent_cost_gap[i];
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.round,
                i,
                fmt_f64(gap),
                fmt_f64(gap / result.optimal_costs[i]),
                fmt_f64(t.per_agent_spectral_radius[i]),
                t.per_agent_stab_ok[i],
                t.per_agent_diverged[i]
            ));
        }
    }
    s
}
