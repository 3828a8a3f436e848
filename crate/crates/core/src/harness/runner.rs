//! Executes every (sweep point × seed) run and persists traces, summaries,
//! and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ensemble::{generate_ensemble, generate_ensemble_stabilized, Ensemble, HeterogeneityParams};
use crate::error::{Error, Result};
use crate::federated::{run, stability_report, trace_csv, FedResult, StabilityReport};
use crate::matio::fmt_f64;
use crate::rng::label_key;

use super::config::{ExperimentConfig, Problem, SweepPoint};
use super::summary::SweepSummary;

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "FEDLQR_OUTPUT_DIR";

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub master_seed: u64,
    pub ensemble: Ensemble,
    pub result: FedResult,
}

#[derive(Debug, Clone)]
pub struct PointRuns {
    pub point: SweepPoint,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub points: Vec<PointRuns>,
    pub big_n: usize,
    pub summary: SweepSummary,
    /// Files written, relative to the output directory, with SHA-256 digests.
    pub outputs: BTreeMap<String, String>,
    pub output_dir: PathBuf,
}

/// Training-stream seed of one run; depends on the point parameters, not on
/// the point's position in the sweep.
pub fn master_seed(seed: u64, point: &SweepPoint) -> u64 {
    label_key(&format!("{seed}/{}", point.label))
}

pub fn build_ensemble(problem: &Problem, point: &SweepPoint, seed: u64, stabilized: bool, max_draws: usize) -> Result<Ensemble> {
    let het = HeterogeneityParams {
        eps1: point.eps1,
        eps2: point.eps2,
        z1: problem.z1.clone(),
        z2: problem.z2.clone(),
    };
    if stabilized {
        generate_ensemble_stabilized(&problem.nominal, point.m, &het, seed, &problem.k0, max_draws)
    } else {
        generate_ensemble(&problem.nominal, point.m, &het, seed)
    }
}

fn with_coords(e: Error, point: &SweepPoint, seed: u64) -> Error {
    let at = format!("[point {} seed {seed}]", point.label);
    match e {
        Error::PreconditionFailed(m) => Error::PreconditionFailed(format!("{at} {m}")),
        Error::Config(m) => Error::Config(format!("{at} {m}")),
        other => Error::SolverFailure(format!("{at} {other}")),
    }
}

/// Runs one (point, seed) pair in memory.
pub fn run_one(cfg: &ExperimentConfig, problem: &Problem, point: &SweepPoint, seed: u64) -> Result<SeedRun> {
    let ensemble = build_ensemble(
        problem,
        point,
        seed,
        cfg.ensemble.require_k0_stabilizing,
        cfg.ensemble.max_draws,
    )
    .map_err(|e| with_coords(e, point, seed))?;
    let mut fed = problem.fed.clone();
    fed.master_seed = master_seed(seed, point);
    let result = run(&ensemble, &problem.cost, &problem.k0, &fed).map_err(|e| with_coords(e, point, seed))?;
    Ok(SeedRun { seed, master_seed: fed.master_seed, ensemble, result })
}

/// All runs of the config, in memory, parallel over (point, seed).
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<PointRuns>> {
    let problem = cfg.problem()?;
    let points = cfg.points();
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<Result<SeedRun>> = jobs
        .par_iter()
        .map(|&(p, s)| run_one(cfg, &problem, &points[p], s))
        .collect();
    let mut out: Vec<PointRuns> =
        points.iter().map(|p| PointRuns { point: p.clone(), runs: Vec::new() }).collect();
    for ((p, _), r) in jobs.iter().zip(results) {
        out[*p].runs.push(r?);
    }
    Ok(out)
}

pub fn summarize(points: &[PointRuns], big_n: usize) -> SweepSummary {
    let pts: Vec<SweepPoint> = points.iter().map(|p| p.point.clone()).collect();
    let series: Vec<Vec<Vec<f64>>> = points
        .iter()
        .map(|p| p.runs.iter().map(|r| r.result.normalized_gap_series(big_n)).collect())
        .collect();
    let halted: Vec<usize> = points
        .iter()
        .map(|p| p.runs.iter().filter(|r| r.result.terminated_early.is_some()).count())
        .collect();
    SweepSummary::from_series(&pts, &series, &halted, big_n)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The configured output directory unless overridden by the environment.
pub fn resolve_output_dir(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output_dir.clone())
}

#[derive(Serialize)]
struct RunEntry<'a> {
    point: &'a str,
    seed: u64,
    master_seed: u64,
    ensemble_file: String,
    ensemble_sha256: String,
    trace_file: String,
    terminated_early: &'a Option<String>,
    stability: StabilityReport,
}

fn per_seed_csv(points: &[PointRuns], big_n: usize) -> String {
    let mut s = String::from(
        "point,seed,final_normalized_gap,halted,max_global_radius,max_local_radius,max_final_local_radius,local_instabilities,diverged_estimates\n",
    );
    for p in points {
        for r in &p.runs {
            let t = &r.result.traces;
            let fold = |f: fn(&crate::federated::RoundTrace) -> f64| t.iter().map(f).fold(0.0, f64::max);
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.point.label,
                r.seed,
                fmt_f64(r.result.normalized_gap_series(big_n)[big_n]),
                r.result.terminated_early.is_some(),
                fmt_f64(fold(|x| x.max_spectral_radius)),
                fmt_f64(fold(|x| x.max_local_radius)),
                fmt_f64(fold(|x| x.max_final_local_radius)),
                t.iter().map(|x| x.local_instabilities).sum::<usize>(),
                t.iter().map(|x| x.diverged_estimates).sum::<usize>(),
            ));
        }
    }
    s
}

/// Runs the experiment and writes everything under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    let points = simulate(cfg)?;
    let big_n = cfg.fed.big_n;
    let summary = summarize(&points, big_n);
    let mut outputs = BTreeMap::new();
    let mut put = |rel: String, bytes: &[u8]| -> Result<String> {
        write_atomic(&out_dir.join(&rel), bytes)?;
        let h = sha256_hex(bytes);
        outputs.insert(rel, h.clone());
        Ok(h)
    };
    let mut runs = Vec::new();
    for p in &points {
        for r in &p.runs {
            let stem = format!("{}_seed{}", p.point.label, r.seed);
            let ens_rel = format!("ensembles/{stem}.json");
            let ens_hash = put(ens_rel.clone(), r.ensemble.to_json()?.as_bytes())?;
            let trace_rel = format!("traces/{stem}.csv");
            put(trace_rel.clone(), trace_csv(&r.result).as_bytes())?;
            runs.push(RunEntry {
                point: &p.point.label,
                seed: r.seed,
                master_seed: r.master_seed,
                ensemble_file: ens_rel,
                ensemble_sha256: ens_hash,
                trace_file: trace_rel,
                terminated_early: &r.result.terminated_early,
                stability: stability_report(&r.result),
            });
        }
    }
    put("summary.csv".into(), summary.rows_csv().as_bytes())?;
    put("final.csv".into(), summary.finals_csv().as_bytes())?;
    put("final_by_seed.csv".into(), per_seed_csv(&points, big_n).as_bytes())?;
    let resolved = cfg.to_toml_string()?;
    put("config.toml".into(), resolved.as_bytes())?;
    let manifest = serde_json::json!({
        "name": cfg.name,
        "config": cfg,
        "seeds": cfg.seeds,
        "points": points.iter().map(|p| &p.point).collect::<Vec<_>>(),
        "runs": runs,
        "outputs": outputs.iter().map(|(k, v)| serde_json::json!({"path": k, "sha256": v})).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    write_atomic(&out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(ExperimentReport { points, big_n, summary, outputs, output_dir: out_dir.to_path_buf() })
}
