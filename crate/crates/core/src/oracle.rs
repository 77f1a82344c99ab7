//! Brute-force optimum estimates for benchmark problems.
//!
//! Low-dimensional problems are scanned on a dense grid; every discrete local
//! minimum is then polished by a feasibility-first pattern search and nearby
//! results are merged. Higher-dimensional problems use the same pattern search
//! from Sobol starting points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::driver::Problem;
use crate::linesearch::total_violation;
use crate::quasirandom::SobolStream;
use crate::{Error, Result};

/// Largest grid the dense scan will allocate.
pub const MAX_GRID_POINTS: usize = 50_000_000;
/// Number of local optima kept in a result.
pub const TOP_OPTIMA: usize = 10;
/// Number of Sobol starts used above three dimensions.
pub const MULTISTART_POINTS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    /// Raw coordinates.
    pub x: Vec<f64>,
    pub f: f64,
    pub c: Vec<f64>,
}

impl LocalOptimum {
    pub fn feasible(&self) -> bool {
        self.c.iter().all(|v| *v >= 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub problem: String,
    pub method: String,
    /// Best feasible point found, if any.
    pub best: Option<LocalOptimum>,
    /// Distinct feasible local optima, best first.
    pub local_optima: Vec<LocalOptimum>,
    pub evaluations: usize,
}

impl OracleResult {
    /// Distance from raw point `x` to the nearest reported optimum, measured
    /// in unit-cube coordinates.
    pub fn distance_to_nearest(&self, problem: &Problem, x: &[f64]) -> Option<f64> {
        let u = problem.to_unit(x);
        self.local_optima.iter().map(|o| euclid(&problem.to_unit(&o.x), &u)).min_by(f64::total_cmp)
    }
}

/// Settings of the polishing pattern search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineSettings {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evaluations: usize,
    /// Random unit directions tried besides the coordinate axes.
    pub extra_directions: usize,
}

impl RefineSettings {
    pub fn new(initial_step: f64) -> Self {
        Self { initial_step, min_step: 1e-10, max_evaluations: 20_000, extra_directions: 32 }
    }
}

/// Objective value and violation of a unit-cube point.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Score {
    f: f64,
    violation: f64,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        match (self.violation == 0.0, other.violation == 0.0) {
            (true, true) => self.f < other.f,
            (true, false) => true,
            (false, true) => false,
            (false, false) => self.violation < other.violation,
        }
    }
}

struct Scorer<'a> {
    problem: &'a Problem,
    evaluations: usize,
}

impl Scorer<'_> {
    fn score(&mut self, u: &[f64]) -> Score {
        self.evaluations += 1;
        let (f, c) = self.problem.evaluate(&self.problem.from_unit(u));
        let violation = total_violation(&c);
        if f.is_finite() && violation.is_finite() {
            Score { f, violation }
        } else {
            Score { f: f64::INFINITY, violation: f64::INFINITY }
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn directions(dim: usize, extra: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(2 * dim + extra);
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[k] = sign;
            dirs.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while dirs.len() < 2 * dim + extra {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            dirs.push(v.iter().map(|x| x / norm).collect());
        }
    }
    dirs
}

/// Pattern search in unit-cube coordinates: moves to the first polled point
/// that improves the feasibility-first key, halves the step otherwise.
fn refine(scorer: &mut Scorer<'_>, start: &[f64], settings: &RefineSettings, dirs: &[Vec<f64>]) -> (Vec<f64>, Score) {
    let mut x = start.to_vec();
    let mut best = scorer.score(&x);
    let mut step = settings.initial_step;
    let budget_end = scorer.evaluations + settings.max_evaluations;
    while step >= settings.min_step && scorer.evaluations < budget_end {
        let mut moved = false;
        for d in dirs {
            let trial: Vec<f64> = x.iter().zip(d).map(|(v, di)| (v + step * di).clamp(0.0, 1.0)).collect();
            if trial == x {
                continue;
            }
            let s = scorer.score(&trial);
            if s.better_than(&best) {
                x = trial;
                best = s;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    (x, best)
}

fn collect(problem: &Problem, method: String, refined: Vec<(Vec<f64>, Score)>, evaluations: usize) -> OracleResult {
    let mut feasible: Vec<(Vec<f64>, Score)> = refined.into_iter().filter(|(_, s)| s.violation == 0.0).collect();
    feasible.sort_by(|a, b| a.1.f.total_cmp(&b.1.f));
    let mut kept: Vec<(Vec<f64>, Score)> = Vec::new();
    for (u, s) in feasible {
        if kept.iter().all(|(k, _)| euclid(k, &u) > 1e-2) {
            kept.push((u, s));
        }
        if kept.len() == TOP_OPTIMA {
            break;
        }
    }
    let local_optima: Vec<LocalOptimum> = kept
        .into_iter()
        .map(|(u, _)| {
            let x = problem.from_unit(&u);
            let (f, c) = problem.evaluate(&x);
            LocalOptimum { x, f, c }
        })
        .collect();
    OracleResult {
        problem: problem.name.clone(),
        method,
        best: local_optima.first().cloned(),
        local_optima,
        evaluations,
    }
}

/// Dense grid with `resolution` points per axis followed by local polishing
/// of the best discrete local minima. Requires `d ≤ 3`.
pub fn grid_oracle(problem: &Problem, resolution: usize) -> Result<OracleResult> {
    let d = problem.dim();
    if d > 3 {
        return Err(Error::InvalidArgument(format!("grid oracle supports d ≤ 3, got {d}")));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    let total = resolution
        .checked_pow(d as u32)
        .filter(|t| *t <= MAX_GRID_POINTS)
        .ok_or_else(|| Error::InvalidArgument(format!("{resolution}^{d} grid points exceed {MAX_GRID_POINTS}")))?;
    let h = 1.0 / (resolution - 1) as f64;
    let coords = |mut idx: usize| -> Vec<f64> {
        let mut u = vec![0.0; d];
        for v in u.iter_mut() {
            *v = (idx % resolution) as f64 * h;
            idx /= resolution;
        }
        u
    };
    let mut scorer = Scorer { problem, evaluations: 0 };
    let scores: Vec<Score> = (0..total).map(|i| scorer.score(&coords(i))).collect();

    let offsets: Vec<Vec<isize>> = (0..3usize.pow(d as u32))
        .map(|mut k| {
            (0..d)
                .map(|_| {
                    let o = (k % 3) as isize - 1;
                    k /= 3;
                    o
                })
                .collect()
        })
        .filter(|o: &Vec<isize>| o.iter().any(|v| *v != 0))
        .collect();
    let strides: Vec<usize> = (0..d).map(|k| resolution.pow(k as u32)).collect();
    let mut minima: Vec<usize> = (0..total)
        .filter(|&i| {
            let s = scores[i];
            if s.violation != 0.0 {
                return false;
            }
            offsets.iter().all(|o| {
                let mut j = i as isize;
                for k in 0..d {
                    let pos = (i / strides[k]) % resolution;
                    let np = pos as isize + o[k];
                    if np < 0 || np >= resolution as isize {
                        return true;
                    }
                    j += o[k] * strides[k] as isize;
                }
                let n = scores[j as usize];
                !(n.violation == 0.0 && n.f < s.f)
            })
        })
        .collect();
    minima.sort_by(|&a, &b| scores[a].f.total_cmp(&scores[b].f));
    minima.truncate(200);

    let dirs = directions(d, 8 * d * d + 8);
    let settings = RefineSettings::new(2.0 * h);
    let refined = minima.iter().map(|&i| refine(&mut scorer, &coords(i), &settings, &dirs)).collect();
    let evaluations = scorer.evaluations;
    Ok(collect(problem, format!("grid {resolution}^{d} + pattern search"), refined, evaluations))
}

/// Pattern search from `starts` Sobol points, feasibility first.
pub fn multistart_oracle(problem: &Problem, starts: usize) -> Result<OracleResult> {
    if starts == 0 {
        return Err(Error::InvalidArgument("need at least one start".into()));
    }
    let d = problem.dim();
    let mut stream = SobolStream::new(d)?;
    let dirs = directions(d, 4 * d);
    let settings = RefineSettings { max_evaluations: 4_000, ..RefineSettings::new(0.1) };
    let mut scorer = Scorer { problem, evaluations: 0 };
    let refined = (0..starts).map(|_| refine(&mut scorer, &stream.next_point(), &settings, &dirs)).collect();
    let evaluations = scorer.evaluations;
    Ok(collect(problem, format!("{starts} Sobol starts + pattern search"), refined, evaluations))
}

/// Grid oracle for `d ≤ 3`, otherwise [`MULTISTART_POINTS`] Sobol starts.
pub fn estimate_optimum(problem: &Problem, resolution: usize) -> Result<OracleResult> {
    if problem.dim() <= 3 {
        grid_oracle(problem, resolution)
    } else {
        multistart_oracle(problem, MULTISTART_POINTS)
    }
}

/// Default grid resolution for a dimension.
pub fn default_resolution(dim: usize) -> usize {
    match dim {
        1 => 20_001,
        2 => 2_001,
        _ => 201,
    }
}
