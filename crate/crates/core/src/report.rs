//! Aggregation of finished runs into `median_{q_lo}^{q_hi} (feas. a/b)` tables.
//!
//! Quantiles interpolate linearly between order statistics (the inclusive
//! convention): for sorted values `v₀ ≤ … ≤ vₙ₋₁` the `q` quantile is read at
//! fractional position `q (n - 1)`. Runs that never found a feasible point
//! count towards the feasibility column only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::RunTrace;
use crate::trace::{read_csv_file, TraceRow};
use crate::{Error, Result};

/// Inclusive linear-interpolation quantile of `values`, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub problem: String,
    pub algorithm: String,
    pub seed: Option<u64>,
    pub final_f: f64,
    pub feasible: bool,
    pub evaluations: usize,
}

impl RunSummary {
    pub fn from_trace(trace: &RunTrace) -> Option<Self> {
        let best = trace.final_incumbent()?;
        Some(Self {
            problem: trace.problem.clone(),
            algorithm: trace.algorithm.clone(),
            seed: Some(trace.config.seed),
            final_f: best.f,
            feasible: best.feasible(),
            evaluations: trace.evaluations.len(),
        })
    }

    pub fn from_rows(problem: &str, algorithm: &str, seed: Option<u64>, rows: &[TraceRow]) -> Option<Self> {
        let last = rows.last()?;
        Some(Self {
            problem: problem.to_string(),
            algorithm: algorithm.to_string(),
            seed,
            final_f: last.best_f,
            feasible: last.best_feasible,
            evaluations: rows.len(),
        })
    }

    /// Reads a trace CSV named `{problem}_{algo}_seed{n}.csv`.
    pub fn from_csv_file(path: &Path) -> Result<Self> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Trace(format!("{}: no file name", path.display())))?;
        let (problem, algorithm, seed) = parse_stem(stem)
            .ok_or_else(|| Error::Trace(format!("{}: expected `problem_algo_seedN`", path.display())))?;
        let rows = read_csv_file(path)?;
        Self::from_rows(&problem, &algorithm, Some(seed), &rows)
            .ok_or_else(|| Error::Trace(format!("{}: no evaluations", path.display())))
    }
}

/// Splits `{problem}_{algo}_seed{n}`.
pub fn parse_stem(stem: &str) -> Option<(String, String, u64)> {
    let mut parts = stem.rsplitn(3, '_');
    let seed = parts.next()?.strip_prefix("seed")?.parse().ok()?;
    let algorithm = parts.next()?.to_string();
    let problem = parts.next()?.to_string();
    Some((problem, algorithm, seed))
}

/// One table row: all runs of an algorithm on a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub problem: String,
    pub algorithm: String,
    pub runs: usize,
    pub feasible_runs: usize,
    /// `None` when no run is feasible.
    pub median: Option<f64>,
    pub q_lo: Option<f64>,
    pub q_hi: Option<f64>,
    pub min_evaluations: usize,
    pub max_evaluations: usize,
}

impl ReportRow {
    /// Some runs were left out of the value quantiles.
    pub fn excludes_infeasible(&self) -> bool {
        self.feasible_runs < self.runs
    }

    pub fn cell(&self) -> String {
        let feas = format!("(feas. {}/{})", self.feasible_runs, self.runs);
        let mark = if self.excludes_infeasible() { "*" } else { "" };
        match (self.median, self.q_lo, self.q_hi) {
            (Some(m), Some(lo), Some(hi)) => {
                format!("{}_{{{}}}^{{{}}}{mark} {feas}", format_value(m), format_value(lo), format_value(hi))
            }
            _ => format!("n/a {feas}"),
        }
    }
}

/// Four significant digits, fixed notation.
pub fn format_value(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let decimals = (3 - v.abs().log10().floor() as i32).clamp(0, 8) as usize;
    format!("{v:.decimals$}")
}

/// Groups runs by `(problem, algorithm)`; `quantiles` is `(q_lo, q_hi)`.
pub fn aggregate(runs: &[RunSummary], quantiles: (f64, f64)) -> Result<Vec<ReportRow>> {
    let (q_lo, q_hi) = quantiles;
    if !(0.0..=1.0).contains(&q_lo) || !(0.0..=1.0).contains(&q_hi) || q_lo > q_hi {
        return Err(Error::InvalidArgument(format!("bad quantile pair ({q_lo}, {q_hi})")));
    }
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.problem.clone(), r.algorithm.clone())).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((problem, algorithm), group)| {
            let values: Vec<f64> = group.iter().filter(|r| r.feasible).map(|r| r.final_f).collect();
            ReportRow {
                problem,
                algorithm,
                runs: group.len(),
                feasible_runs: values.len(),
                median: median(&values),
                q_lo: quantile(&values, q_lo),
                q_hi: quantile(&values, q_hi),
                min_evaluations: group.iter().map(|r| r.evaluations).min().unwrap_or(0),
                max_evaluations: group.iter().map(|r| r.evaluations).max().unwrap_or(0),
            }
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "problem",
        "algorithm",
        "runs",
        "feasible_runs",
        "median",
        "q_lo",
        "q_hi",
        "min_evaluations",
        "max_evaluations",
        "cell",
        "excludes_infeasible",
    ])?;
    for r in rows {
        writer.write_record([
            r.problem.clone(),
            r.algorithm.clone(),
            r.runs.to_string(),
            r.feasible_runs.to_string(),
            opt(r.median),
            opt(r.q_lo),
            opt(r.q_hi),
            r.min_evaluations.to_string(),
            r.max_evaluations.to_string(),
            r.cell(),
            r.excludes_infeasible().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Aligned plain-text table with a footnote when runs were excluded.
pub fn render_text(rows: &[ReportRow], quantiles: (f64, f64)) -> String {
    let header = ["problem", "algorithm", "evaluations", "result"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            let evals = if r.min_evaluations == r.max_evaluations {
                r.min_evaluations.to_string()
            } else {
                format!("{}-{}", r.min_evaluations, r.max_evaluations)
            };
            [r.problem.clone(), r.algorithm.clone(), evals, r.cell()]
        })
        .collect();
    let widths: Vec<usize> = (0..4)
        .map(|k| body.iter().map(|row| row[k].chars().count()).chain([header[k].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header, &mut out);
    line(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>(),
        &mut out,
    );
    for row in &body {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    let _ = writeln!(
        out,
        "\nmedian_{{q{}}}^{{q{}}} of the final best value.",
        (quantiles.0 * 100.0).round(),
        (quantiles.1 * 100.0).round()
    );
    if rows.iter().any(ReportRow::excludes_infeasible) {
        let _ = writeln!(out, "* Computed across runs that found a feasible solution.");
    }
    out
}
