//! Constrained Thompson-sampling line search and incumbent selection.
//!
//! Candidates are spread along `x + α p`, `α ∈ [0, 1]`, by a 1-D Sobol
//! sequence with `α = 0` always included. Each posterior sample path over
//! the candidates nominates its best feasible candidate, or its least
//! violating one when no candidate is feasible under that path.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{jittered_cholesky, JITTER_LADDER};
use crate::quasirandom::SobolStream;
use crate::surrogate::FittedGP;
use crate::{Error, Result};

/// The segment `{clip(origin + α direction) : α ∈ [0, 1]}` in normalized
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub origin: Vec<f64>,
    pub direction: Vec<f64>,
    /// Number of candidate step sizes, including `α = 0`.
    pub candidates: usize,
}

impl Segment {
    pub fn new(origin: Vec<f64>, direction: Vec<f64>, candidates: usize) -> Result<Self> {
        if origin.len() != direction.len() {
            return Err(Error::InvalidArgument("segment origin and direction differ in dimension".into()));
        }
        if candidates == 0 {
            return Err(Error::InvalidArgument("segment needs at least one candidate".into()));
        }
        Ok(Self { origin, direction, candidates })
    }

    /// Largest useful step in `[0, 1]`: beyond it every moving coordinate is
    /// pinned at a bound and the clipped path no longer changes.
    pub fn reach(&self) -> f64 {
        self.origin
            .iter()
            .zip(&self.direction)
            .filter(|(_, p)| **p != 0.0)
            .map(|(o, p)| if *p > 0.0 { (1.0 - o) / p } else { -o / p })
            .fold(0.0, f64::max)
            .clamp(0.0, 1.0)
    }

    /// Step sizes: the 1-D Sobol points from index 1 on, scaled by
    /// [`Segment::reach`].
    pub fn alphas(&self) -> Vec<f64> {
        let reach = self.reach();
        let mut stream = SobolStream::starting_at(1, 1).expect("dimension 1 is supported");
        (0..self.candidates).map(|_| reach * stream.next_point()[0]).collect()
    }

    pub fn point_at(&self, alpha: f64) -> Vec<f64> {
        self.origin.iter().zip(&self.direction).map(|(o, p)| (o + alpha * p).clamp(0.0, 1.0)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Subsample,
    Linesearch,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Subsample => "subsample",
            Phase::Linesearch => "linesearch",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "init" => Ok(Phase::Init),
            "subsample" => Ok(Phase::Subsample),
            "linesearch" => Ok(Phase::Linesearch),
            other => Err(crate::Error::InvalidArgument(format!("unknown phase `{other}`"))),
        }
    }
}

/// One oracle query in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    pub index: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub c: Vec<f64>,
    pub phase: Phase,
    pub iteration: usize,
}

/// `Σ max(0, -cᵢ)`.
pub fn total_violation(c: &[f64]) -> f64 {
    c.iter().map(|v| (-v).max(0.0)).sum()
}

/// Ordering key: feasible points first by objective, then infeasible points
/// by total violation.
fn compare_key(f_a: f64, c_a: &[f64], f_b: f64, c_b: &[f64]) -> Ordering {
    let va = total_violation(c_a);
    let vb = total_violation(c_b);
    match (va > 0.0, vb > 0.0) {
        (false, false) => f_a.total_cmp(&f_b),
        (true, true) => va.total_cmp(&vb),
        (a, b) => a.cmp(&b),
    }
}

impl EvaluatedPoint {
    pub fn feasible(&self) -> bool {
        self.c.iter().all(|v| *v >= 0.0)
    }

    pub fn violation(&self) -> f64 {
        total_violation(&self.c)
    }

    /// Strictly better than `other` under the incumbent order.
    pub fn better_than(&self, other: &EvaluatedPoint) -> bool {
        compare_key(self.f, &self.c, other.f, &other.c) == Ordering::Less
    }
}

/// Position of the incumbent: best feasible objective, otherwise least
/// violation, earliest position on ties.
pub fn incumbent_position(points: &[EvaluatedPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if best.is_none_or(|b| p.better_than(&points[b])) {
            best = Some(i);
        }
    }
    best
}

pub fn select_incumbent(points: &[EvaluatedPoint]) -> Result<&EvaluatedPoint> {
    incumbent_position(points)
        .map(|i| &points[i])
        .ok_or_else(|| Error::InvalidArgument("cannot select an incumbent from an empty list".into()))
}

/// One joint sample over all candidates: objective values and one vector
/// per constraint, raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub f: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

/// Candidate indices ordered best-first under the incumbent order of the path.
pub fn rank_candidates(path: &PathSample) -> Vec<usize> {
    let n = path.f.len();
    let cs: Vec<Vec<f64>> = (0..n).map(|j| path.c.iter().map(|c| c[j]).collect()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| compare_key(path.f[a], &cs[a], path.f[b], &cs[b]).then(a.cmp(&b)));
    order
}

/// Each path's best candidate not already taken by an earlier path.
pub fn select_from_paths(paths: &[PathSample]) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(paths.len());
    for path in paths {
        let ranking = rank_candidates(path);
        let pick = ranking.iter().copied().find(|j| !chosen.contains(j)).unwrap_or(ranking[0]);
        chosen.push(pick);
    }
    chosen
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThompsonSelection {
    pub points: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub candidate_indices: Vec<usize>,
    /// Some model's candidate covariance could not be factorised and was
    /// sampled marginally instead.
    pub marginal_fallback: bool,
}

/// `count` joint sample paths of one model over `points`, raw units.
fn sample_paths(
    gp: &FittedGP,
    points: &[Vec<f64>],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, bool)> {
    let (mean, cov) = gp.posterior_mean_cov(points)?;
    let n = points.len();
    let (factor, marginal) = match jittered_cholesky(&cov, &JITTER_LADDER) {
        Ok((chol, _)) => (chol.l(), false),
        Err(_) => (DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(0.0).sqrt())), true),
    };
    let s = gp.standardization();
    let paths = (0..count)
        .map(|_| {
            let eps = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let draw = &mean + &factor * eps;
            draw.iter().map(|&v| s.invert(v)).collect()
        })
        .collect();
    Ok((paths, marginal))
}

/// Thompson sampling of `count` distinct points on `segment`.
///
/// One seed is drawn from `rng`; every model then samples from its own
/// stream of that seed, so the objective's paths do not depend on how many
/// constraints there are.
pub fn thompson_select(
    gp_f: &FittedGP,
    gp_cs: &[FittedGP],
    segment: &Segment,
    count: usize,
    rng: &mut impl RngCore,
) -> Result<ThompsonSelection> {
    if count == 0 || count > segment.candidates {
        return Err(Error::InvalidArgument(format!(
            "cannot select {count} points from {} candidates",
            segment.candidates
        )));
    }
    let alphas = segment.alphas();
    let points: Vec<Vec<f64>> = alphas.iter().map(|&a| segment.point_at(a)).collect();
    let seed = rng.next_u64();
    let stream_rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let (f_paths, mut marginal) = sample_paths(gp_f, &points, count, &mut stream_rng(0))?;
    let mut c_paths = Vec::with_capacity(gp_cs.len());
    for (i, gp) in gp_cs.iter().enumerate() {
        let (paths, fallback) = sample_paths(gp, &points, count, &mut stream_rng(i as u64 + 1))?;
        marginal |= fallback;
        c_paths.push(paths);
    }
    let samples: Vec<PathSample> = (0..count)
        .map(|j| PathSample { f: f_paths[j].clone(), c: c_paths.iter().map(|c| c[j].clone()).collect() })
        .collect();
    let chosen = select_from_paths(&samples);
    Ok(ThompsonSelection {
        points: chosen.iter().map(|&j| points[j].clone()).collect(),
        alphas: chosen.iter().map(|&j| alphas[j]).collect(),
        candidate_indices: chosen,
        marginal_fallback: marginal,
    })
}
