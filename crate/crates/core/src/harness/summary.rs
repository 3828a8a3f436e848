//! Multi-seed reduction of normalized gaps and plot-data emission.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matio::{fmt_f64, parse_f64};

use super::config::SweepPoint;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub point: String,
    pub round: usize,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalRow {
    pub point: String,
    pub m: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    /// Runs halted because the global gain destabilized a system.
    pub n_halted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub rows: Vec<SummaryRow>,
    pub finals: Vec<FinalRow>,
}

/// Mean and sample standard deviation; std is 0 for one value and NaN when
/// any value is infinite.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl SweepSummary {
    /// `series[p][s]` is the gap series (rounds 0..=N) of seed s at point p.
    pub fn from_series(points: &[SweepPoint], series: &[Vec<Vec<f64>>], halted: &[usize], big_n: usize) -> Self {
        let mut rows = Vec::new();
        let mut finals = Vec::new();
        for ((p, per_seed), &n_halted) in points.iter().zip(series).zip(halted) {
            for round in 1..=big_n {
                let vals: Vec<f64> = per_seed.iter().map(|s| s[round]).collect();
                let (mean, std) = mean_std(&vals);
                rows.push(SummaryRow { point: p.label.clone(), round, mean, std, n_seeds: vals.len() });
            }
            let vals: Vec<f64> = per_seed.iter().map(|s| s[big_n]).collect();
            let (mean, std) = mean_std(&vals);
            finals.push(FinalRow {
                point: p.label.clone(),
                m: p.m,
                eps1: p.eps1,
                eps2: p.eps2,
                mean,
                std,
                n_seeds: vals.len(),
                n_halted,
            });
        }
        Self { rows, finals }
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("point,round,mean,std,n_seeds\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.point,
                r.round,
                fmt_f64(r.mean),
                fmt_f64(r.std),
                r.n_seeds
            ));
        }
        s
    }

    pub fn finals_csv(&self) -> String {
        let mut s = String::from("point,m,eps1,eps2,mean,std,n_seeds,n_halted\n");
        for r in &self.finals {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.point,
                r.m,
                fmt_f64(r.eps1),
                fmt_f64(r.eps2),
                fmt_f64(r.mean),
                fmt_f64(r.std),
                r.n_seeds,
                r.n_halted
            ));
        }
        s
    }
}

/// Parses a summary CSV written by [`SweepSummary::rows_csv`].
pub fn parse_summary_rows(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("point,round,mean,std,n_seeds") => {}
        _ => return Err(Error::InvalidInput("not a sweep summary file".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(Error::InvalidInput(format!("malformed summary row: {l}")));
            }
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidInput(format!("malformed summary row: {l}")))
            };
            Ok(SummaryRow {
                point: f[0].to_string(),
                round: int(f[1])?,
                mean: parse_f64(f[2])?,
                std: parse_f64(f[3])?,
                n_seeds: int(f[4])?,
            })
        })
        .collect()
}

/// Writes one `(x, mean, std)` CSV per sweep point into `plots/` next to the
/// summary file and returns the written paths.
pub fn emit_plot_data(summary_path: &Path) -> Result<Vec<PathBuf>> {
    let rows = parse_summary_rows(&std::fs::read_to_string(summary_path)?)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("summary has no rows".into()));
    }
    let dir = summary_path.parent().unwrap_or(Path::new(".")).join("plots");
    std::fs::create_dir_all(&dir)?;
    let mut order: Vec<&str> = Vec::new();
    for r in &rows {
        if !order.contains(&r.point.as_str()) {
            order.push(&r.point);
        }
    }
    let mut out = Vec::new();
    for p in order {
        let mut s = String::from("x,mean,std\n");
        for r in rows.iter().filter(|r| r.point == p) {
            s.push_str(&format!("{},{},{}\n", r.round, fmt_f64(r.mean), fmt_f64(r.std)));
        }
        let path = dir.join(format!("{p}.csv"));
        super::runner::write_atomic(&path, s.as_bytes())?;
        out.push(path);
    }
    Ok(out)
}
