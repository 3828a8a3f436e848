//! `verify`: evaluates every analytic constant for the configured ensemble
//! at K₀, checks the inequalities on that instance, then runs the randomized
//! suites.

use std::fmt::Write as _;

use serde::Serialize;

use crate::bounds::{
    admissible_het_threshold, closeness_bounds_per_agent, horizon_prescription, model_based_step_sizes,
    model_free_step_sizes, optimal_covariance_norms, sample_size_prescription, theory_contraction,
    ProbeSuprema, ProblemConstants,
};
use crate::ensemble::measure_heterogeneity;
use crate::error::Result;
use crate::linalg::{spectral_norm, Mat};
use crate::lqr::{closed_loop_radius, exact_cost, optimal_gain, solve_all, Gain};

use super::config::{ExperimentConfig, NominalSpec};
use super::presets;
use super::runner::build_ensemble;
use super::suites::{
    average_optimal_gain, closeness_suite, gradient_heterogeneity_suite, smoothness_suite,
    uniform_bounds_suite, SuiteReport,
};

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    /// (quantity, value) rows of the constants table.
    pub rows: Vec<(String, String)>,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    pub fn value(&self, quantity: &str) -> Option<&str> {
        self.rows.iter().find(|(q, _)| q == quantity).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let w = self.rows.iter().map(|(q, _)| q.chars().count()).max().unwrap_or(0);
        let mut s = String::new();
        for (q, v) in &self.rows {
            let _ = writeln!(s, "{q:<w$}  {v}");
        }
        s.push('\n');
        for r in &self.suites {
            let _ = writeln!(
                s,
                "{} {}: {} cases, {} checks, {} violations, worst measured/bound {:.4e}",
                if r.passed() { "PASS" } else { "FAIL" },
                r.name,
                r.cases,
                r.checks,
                r.violations,
                r.worst_ratio
            );
        }
        s
    }
}

fn fmt_mat(m: &Mat) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let v: Vec<String> = r.iter().map(|x| format!("{x:.6}")).collect();
            format!("[{}]", v.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn e(x: f64) -> String {
    format!("{x:.6e}")
}

/// Evaluates the table and checks on the first sweep point and first seed.
pub fn verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let problem = cfg.problem()?;
    let point = &cfg.points()[0];
    let seed = cfg.seeds[0];
    let ens = build_ensemble(&problem, point, seed, cfg.ensemble.require_k0_stabilizing, cfg.ensemble.max_draws)?;
    if !ens.jointly_stabilizes(&problem.k0)? {
        return Err(crate::Error::PreconditionFailed(format!(
            "k0 does not stabilize systems {:?}",
            ens.unstabilized_by(&problem.k0)?
        )));
    }
    let (systems, cost, k0) = (&ens.systems, &problem.cost, &problem.k0);
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut row = |q: &str, v: String| rows.push((q.to_string(), v));

    let (eps1, eps2) = measure_heterogeneity(&ens);
    row("sweep point", point.label.clone());
    row("seed", seed.to_string());
    row("agents M", ens.m().to_string());
    row("measured eps1", e(eps1));
    row("measured eps2", e(eps2));

    let at_k0 = solve_all(systems, cost, k0)?;
    let mut local_opt = Vec::new();
    for (i, s) in systems.iter().enumerate() {
        let (_, ki) = optimal_gain(s, cost)?;
        let ci = exact_cost(s, cost, &ki)?;
        row(&format!("C_{i}(K0)"), e(at_k0[i].cost));
        row(&format!("C_{i}(K_{i}*)"), e(ci));
        row(&format!("rho(A_{i} - B_{i} K0)"), e(closed_loop_radius(s, k0)?));
        local_opt.push((ki, ci));
    }
    let k_nom = &local_opt[ens.nominal_index].0;
    row("K* nominal (DARE)", fmt_mat(&k_nom.k));
    if matches!(&cfg.ensemble.nominal, NominalSpec::Preset(_)) {
        row(
            "max |K* nominal - printed K*|",
            e((&k_nom.k - presets::paper_k_star_printed()).amax()),
        );
    }
    let k_avg = average_optimal_gain(systems, cost, k0)?;
    let at_avg = solve_all(systems, cost, &k_avg)?;
    row("K* average optimum", fmt_mat(&k_avg.k));
    row(
        "average cost at K*",
        e(at_avg.iter().map(|s| s.cost).sum::<f64>() / at_avg.len() as f64),
    );

    let pc = ProblemConstants::compute(systems, cost, k0)?;
    row("C_max(K0)", e(pc.c_max));
    row("C_min", e(pc.c_min));
    row("mu", e(pc.mu));
    row("h0(K0)", e(pc.h0()));
    row("h1(K0)", e(pc.h1()));
    row("h1 printed (K0)", e(pc.h1_printed()));
    row("h2(K0)", e(pc.h2()));
    row("h_delta(K0)", e(pc.h_delta()));
    row("h_cost(K0)", e(pc.h_cost()));
    row("h_grad(K0)", e(pc.h_grad()));
    let (h1_het, h2_het) = pc.h_het();
    row("h_het^1(K0)", e(h1_het));
    row("h_het^2(K0)", e(h2_het));
    let het = eps1 * h1_het + eps2 * h2_het;
    row("het_bound(K0)", e(het));
    row("admissible heterogeneity threshold", e(admissible_het_threshold(systems, cost, k0)?));

    let mut probes: Vec<Gain> = vec![k0.clone(), k_avg.clone()];
    for (ki, _) in &local_opt {
        if ens.jointly_stabilizes(ki)? {
            probes.push(ki.clone());
        }
    }
    let sup = ProbeSuprema::over(systems, cost, &probes)?;
    let closeness = closeness_bounds_per_agent(systems, cost, eps1, eps2, &probes)?;
    row("probe gains", probes.len().to_string());
    row("closeness bound (max over agents)", e(closeness.iter().cloned().fold(0.0, f64::max)));

    let f = &problem.fed;
    let v = &cfg.verify;
    row("h_r(accuracy/4)", e(sup.h_r(v.accuracy / 4.0)));
    row("horizon prescription", horizon_prescription(systems, cost, k0, f.zo.r, v.accuracy)?.to_string());
    row(
        "sample-size prescription",
        sample_size_prescription(systems, cost, k0, f.zo.r, v.accuracy, v.delta, ens.m(), f.big_l, cost.h_bound, cost.mu)?
            .to_string(),
    );
    let mb = model_based_step_sizes(&sup, f.big_l);
    row("model-based eta_l / eta / eta_g", format!("{} / {} / {}", e(mb.eta_l), e(mb.eta), e(mb.eta_g)));
    let mf = model_free_step_sizes(&sup, f.big_l, v.accuracy, cost.h_bound);
    row("model-free eta_l / eta / eta_g", format!("{} / {} / {}", e(mf.eta_l), e(mf.eta), e(mf.eta_g)));
    let eta = f.big_l as f64 * f.eta_g * f.eta_l;
    let sig_star = optimal_covariance_norms(systems, cost)?.into_iter().fold(0.0, f64::max);
    row("configured eta", e(eta));
    row("theory per-round contraction", format!("{:.10}", theory_contraction(cost, sig_star, eta)));

    // Inequalities on the configured instance itself.
    let mut inst = SuiteReport::new("configured instance");
    inst.cases = 1;
    for s in &at_k0 {
        inst.check(s.grad.norm(), pc.h1());
    }
    inst.check(spectral_norm(&k0.k), pc.h2());
    for i in 0..at_k0.len() {
        for j in i + 1..at_k0.len() {
            inst.check(spectral_norm(&(&at_k0[i].grad - &at_k0[j].grad)), het);
        }
    }
    for ((s, b), (_, c_opt)) in at_avg.iter().zip(&closeness).zip(&local_opt) {
        inst.check(s.cost - c_opt - 1e-10 * c_opt, *b);
    }

    let mut suites = vec![inst];
    suites.push(gradient_heterogeneity_suite(v.het_gradient_cases, 0.1, v.seed)?);
    suites.push(uniform_bounds_suite(v.random_cases, v.seed)?);
    suites.push(smoothness_suite(v.random_cases, v.seed)?);
    suites.push(closeness_suite(v.closeness_cases, 0.05, v.seed)?);
    Ok(VerifyReport { rows, suites })
}
