use std::fs;
use std::path::{Path, PathBuf};

use bayesqp::driver::{random_search, run as run_bayesqp, Problem, RunConfig};
use bayesqp::oracle::{default_resolution, estimate_optimum};
use bayesqp::report::{aggregate, median, parse_stem, render_text, write_csv, RunSummary};
use bayesqp::trace::{trace_stem, write_run};
use bayesqp::{problems, Error};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::{Algorithm, ExecArgs, Failure, OracleArgs, ProblemArgs, ReportArgs, RunArgs, SweepArgs, SweepGrid};

/// Parses `n`, `a..b` or `a,b,c`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Usage(format!("cannot parse seeds `{text}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else if text.contains(',') {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    } else {
        (0..text.trim().parse().map_err(|_| bad())?).collect()
    };
    if seeds.is_empty() {
        return Err(Failure::Usage("no seeds selected".into()));
    }
    Ok(seeds)
}

fn resolve_problem(args: &ProblemArgs, seed: u64) -> Result<Problem, Failure> {
    problems::by_name(&args.problem, args.dim, seed).map_err(|e| Failure::Usage(e.to_string()))
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Run(format!("{}: {e}", path.display()))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Run(format!("cannot start worker pool: {e}")))
}

/// One scheduled run.
#[derive(Clone, Debug)]
struct Job {
    algorithm: Algorithm,
    seed: u64,
    config: RunConfig,
    dir: PathBuf,
}

struct Outcome {
    job: Job,
    csv: Option<PathBuf>,
    summary: Option<RunSummary>,
    error: Option<String>,
}

impl Outcome {
    fn manifest_entry(&self) -> Value {
        json!({
            "algorithm": self.job.algorithm.as_str(),
            "seed": self.job.seed,
            "trace": self.csv.as_ref().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()),
            "evaluations": self.summary.as_ref().map(|s| s.evaluations),
            "final_f": self.summary.as_ref().map(|s| s.final_f),
            "feasible": self.summary.as_ref().map(|s| s.feasible),
            "error": self.error,
        })
    }
}

fn execute(problem: &ProblemArgs, job: Job) -> Outcome {
    let attempt = || -> Result<(PathBuf, RunSummary, Option<String>), String> {
        let instance = problems::by_name(&problem.problem, problem.dim, job.seed).map_err(|e| e.to_string())?;
        let trace = match job.algorithm {
            Algorithm::Bayesqp => run_bayesqp(&instance, &job.config.clone().with_seed(job.seed)),
            Algorithm::Random => random_search(&instance, job.config.budget, job.seed),
        }
        .map_err(|e| e.to_string())?;
        let stem = trace_stem(&problem.problem, job.algorithm.as_str(), job.seed);
        let (csv, _) = write_run(&trace, &job.dir, &stem).map_err(|e| e.to_string())?;
        let summary = RunSummary::from_trace(&trace).ok_or("run produced no evaluations")?;
        Ok((csv, summary, trace.abort_reason.clone()))
    };
    match attempt() {
        Ok((csv, summary, abort)) => Outcome { job, csv: Some(csv), summary: Some(summary), error: abort },
        Err(e) => Outcome { job, csv: None, summary: None, error: Some(e) },
    }
}

fn execute_all(problem: &ProblemArgs, jobs: Vec<Job>, exec: &ExecArgs) -> Result<Vec<Outcome>, Failure> {
    Ok(pool(exec.jobs)?.install(|| jobs.into_par_iter().map(|job| execute(problem, job)).collect()))
}

fn validate(problem: &ProblemArgs, config: &RunConfig, seeds: &[u64], bayesqp: bool) -> Result<(), Failure> {
    let instance = resolve_problem(problem, seeds[0])?;
    if bayesqp {
        config.validate(instance.dim()).map_err(|e| Failure::Usage(e.to_string()))?;
    } else if config.budget == 0 {
        return Err(Failure::Usage("budget must be positive".into()));
    }
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_failure(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

fn failures(outcomes: &[Outcome]) -> Vec<String> {
    outcomes
        .iter()
        .filter_map(|o| o.error.as_ref().map(|e| format!("{} seed {}: {e}", o.job.algorithm.as_str(), o.job.seed)))
        .collect()
}

pub fn run(args: &RunArgs) -> Result<(), Failure> {
    let seeds = parse_seeds(&args.exec.seeds)?;
    let config = args.config.resolve()?;
    validate(&args.problem, &config, &seeds, args.algo.contains(&Algorithm::Bayesqp))?;
    fs::create_dir_all(&args.exec.out).map_err(|e| io_failure(&args.exec.out, e))?;

    let mut jobs = Vec::new();
    for &algorithm in &args.algo {
        for &seed in &seeds {
            jobs.push(Job { algorithm, seed, config: config.clone(), dir: args.exec.out.clone() });
        }
    }
    let outcomes = execute_all(&args.problem, jobs, &args.exec)?;

    let manifest = json!({
        "problem": args.problem.problem,
        "dim": args.problem.dim,
        "algorithms": args.algo.iter().map(Algorithm::as_str).collect::<Vec<_>>(),
        "seeds": seeds,
        "config": config,
        "runs": outcomes.iter().map(Outcome::manifest_entry).collect::<Vec<_>>(),
    });
    write_json(&args.exec.out.join("manifest.json"), &manifest)?;

    for o in &outcomes {
        if let Some(s) = &o.summary {
            println!(
                "{} seed {}: f = {} ({})",
                s.algorithm,
                o.job.seed,
                s.final_f,
                if s.feasible { "feasible" } else { "infeasible" }
            );
        }
    }
    let failed = failures(&outcomes);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} run(s) failed:\n  {}", failed.len(), failed.join("\n  "))))
    }
}

fn is_trace(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "csv")
        && path.file_stem().and_then(|s| s.to_str()).and_then(parse_stem).is_some()
}

/// Expands files, directories and glob patterns into trace CSV paths.
pub fn expand_traces(inputs: &[String]) -> Result<Vec<PathBuf>, Failure> {
    let mut paths = Vec::new();
    for input in inputs {
        let path = Path::new(input);
        if path.is_dir() {
            let entries = fs::read_dir(path).map_err(|e| io_failure(path, e))?;
            let mut found: Vec<PathBuf> =
                entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_trace(p)).collect();
            found.sort();
            paths.extend(found);
        } else if path.is_file() {
            paths.push(path.to_path_buf());
        } else {
            let matches = glob::glob(input).map_err(|e| Failure::Usage(format!("bad pattern `{input}`: {e}")))?;
            paths.extend(matches.filter_map(Result::ok).filter(|p| p.is_file()));
        }
    }
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        return Err(Failure::Usage(format!("no traces matched {}", inputs.join(" "))));
    }
    Ok(paths)
}

pub fn report(args: &ReportArgs) -> Result<(), Failure> {
    let quantiles = (args.quantiles[0], args.quantiles[1]);
    let paths = expand_traces(&args.traces)?;
    let summaries = paths
        .iter()
        .map(|p| RunSummary::from_csv_file(p).map_err(|e| Failure::Run(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = aggregate(&summaries, quantiles).map_err(|e| Failure::Usage(e.to_string()))?;
    let text = render_text(&rows, quantiles);
    print!("{text}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let csv_path = dir.join("report.csv");
        let file = fs::File::create(&csv_path).map_err(|e| io_failure(&csv_path, e))?;
        write_csv(&rows, file).map_err(|e| io_failure(&csv_path, e))?;
        let txt_path = dir.join("report.txt");
        fs::write(&txt_path, text).map_err(|e| io_failure(&txt_path, e))?;
    }
    Ok(())
}

fn axis_names(grid: SweepGrid) -> (&'static str, &'static str) {
    match grid {
        SweepGrid::Delta => ("delta_f", "delta_c"),
        SweepGrid::SubsamplesLs => ("subsamples", "ls_budget"),
    }
}

fn cell_config(base: &RunConfig, grid: SweepGrid, row: f64, col: f64) -> Result<RunConfig, Failure> {
    let mut config = base.clone();
    match grid {
        SweepGrid::Delta => {
            config.delta_f = row;
            config.delta_c = col;
        }
        SweepGrid::SubsamplesLs => {
            let count = |v: f64| {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Failure::Usage(format!("`{v}` is not a positive integer")))
                }
            };
            config.subsamples = Some(count(row)?);
            config.ls_budget = count(col)?;
        }
    }
    Ok(config)
}

/// `δ_f = δ_c = 0.5`: the robust subproblem reduces to the expected-value one.
fn expected_value_cell(grid: SweepGrid, row: f64, col: f64) -> bool {
    grid == SweepGrid::Delta && row == 0.5 && col == 0.5
}

pub fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    if args.rows.is_empty() || args.cols.is_empty() {
        return Err(Failure::Usage("sweep grid is empty".into()));
    }
    let seeds = parse_seeds(&args.exec.seeds)?;
    let base = args.config.resolve()?;
    let (row_name, col_name) = axis_names(args.grid);
    let mut cells = Vec::new();
    for &row in &args.rows {
        for &col in &args.cols {
            let config = cell_config(&base, args.grid, row, col)?;
            validate(&args.problem, &config, &seeds, true)?;
            cells.push((row, col, config));
        }
    }
    fs::create_dir_all(&args.exec.out).map_err(|e| io_failure(&args.exec.out, e))?;

    let mut jobs = Vec::new();
    for (row, col, config) in &cells {
        let dir = args.exec.out.join(format!("{row_name}={row}_{col_name}={col}"));
        for &seed in &seeds {
            jobs.push(Job { algorithm: Algorithm::Bayesqp, seed, config: config.clone(), dir: dir.clone() });
        }
    }
    let outcomes = execute_all(&args.problem, jobs, &args.exec)?;

    let per_cell = seeds.len();
    let mut matrix = format!("{row_name}\\{col_name}");
    for col in &args.cols {
        matrix.push_str(&format!(",{col}"));
    }
    matrix.push('\n');
    let mut long = String::from("row,col,median,feasible_runs,runs,expected_value_config\n");
    let mut manifest_cells = Vec::new();
    for (k, (row, col, config)) in cells.iter().enumerate() {
        let group = &outcomes[k * per_cell..(k + 1) * per_cell];
        let values: Vec<f64> =
            group.iter().filter_map(|o| o.summary.as_ref()).filter(|s| s.feasible).map(|s| s.final_f).collect();
        let med = median(&values).map(|v| v.to_string()).unwrap_or_default();
        if k % args.cols.len() == 0 {
            matrix.push_str(&row.to_string());
        }
        matrix.push_str(&format!(",{med}"));
        if k % args.cols.len() == args.cols.len() - 1 {
            matrix.push('\n');
        }
        let flagged = expected_value_cell(args.grid, *row, *col);
        long.push_str(&format!("{row},{col},{med},{},{per_cell},{flagged}\n", values.len()));
        manifest_cells.push(json!({
            "row": row,
            "col": col,
            "expected_value_config": flagged,
            "config": config,
            "runs": group.iter().map(Outcome::manifest_entry).collect::<Vec<_>>(),
        }));
    }
    let matrix_path = args.exec.out.join("sweep.csv");
    fs::write(&matrix_path, &matrix).map_err(|e| io_failure(&matrix_path, e))?;
    let long_path = args.exec.out.join("sweep_cells.csv");
    fs::write(&long_path, &long).map_err(|e| io_failure(&long_path, e))?;
    write_json(
        &args.exec.out.join("manifest.json"),
        &json!({
            "problem": args.problem.problem,
            "dim": args.problem.dim,
            "grid": [row_name, col_name],
            "seeds": seeds,
            "cells": manifest_cells,
        }),
    )?;
    print!("{matrix}");
    if cells.iter().any(|(r, c, _)| expected_value_cell(args.grid, *r, *c)) {
        println!("cell delta_f = delta_c = 0.5 is the expected-value configuration");
    }
    let failed = failures(&outcomes);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} run(s) failed:\n  {}", failed.len(), failed.join("\n  "))))
    }
}

pub fn oracle(args: &OracleArgs) -> Result<(), Failure> {
    let problem = resolve_problem(&args.problem, args.seed)?;
    let resolution = args.resolution.unwrap_or_else(|| default_resolution(problem.dim()));
    let result = estimate_optimum(&problem, resolution).map_err(|e| match e {
        Error::InvalidArgument(msg) => Failure::Usage(msg),
        other => Failure::Run(other.to_string()),
    })?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let path = args.out.join(format!("oracle_{}.json", args.problem.problem));
    write_json(&path, &serde_json::to_value(&result).map_err(|e| io_failure(&path, e))?)?;
    println!("{} ({}, {} evaluations)", result.problem, result.method, result.evaluations);
    match &result.best {
        Some(best) => println!("best f = {} at {:?}", best.f, best.x),
        None => println!("no feasible point found"),
    }
    for (i, o) in result.local_optima.iter().enumerate() {
        println!("  #{:<2} f = {:<22} x = {:?}", i + 1, o.f, o.x);
    }
    Ok(())
}
