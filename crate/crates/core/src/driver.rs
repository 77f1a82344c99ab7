//! The outer optimisation loop and a random-search baseline.
//!
//! One query evaluates the objective and every constraint at the same point
//! and costs one unit of budget. Each iteration sub-samples a small ball
//! around the iterate, refits all surrogates, solves the local subproblem for
//! a search direction and spends a few evaluations on a Thompson-sampling
//! line search along it. All model and subproblem computations happen in the
//! unit cube; oracles and traces use raw coordinates.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conesolver::SolveStatus;
use crate::kernel::KernelHyperparameters;
use crate::linesearch::{incumbent_position, thompson_select, EvaluatedPoint, Phase, Segment};
use crate::quasirandom::{ball_samples, SobolStream};
use crate::subproblem::{solve_direction, LocalModelSet, StepBox, SubproblemConfig, Variant};
use crate::surrogate::{fit, posterior_joint, Dataset, FitConfig, FittedGP};
use crate::{Error, Result};

/// A black-box function of the raw inputs.
pub type Oracle = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `min f(x)` subject to `cᵢ(x) ≥ 0` over a box.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: Oracle,
    pub constraints: Vec<Oracle>,
    /// Standard deviation of additive observation noise on the objective.
    pub objective_noise: f64,
    /// Per-constraint observation noise standard deviations.
    pub constraint_noise: Vec<f64>,
    pub known_optimum: Option<f64>,
    /// Fixed raw starting point; otherwise drawn uniformly per seed.
    pub initial_point: Option<Vec<f64>>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("constraints", &self.constraints.len())
            .field("known_optimum", &self.known_optimum)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument("bounds must be nonempty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u && l.is_finite() && u.is_finite())) {
            return Err(Error::InvalidArgument("every lower bound must be below its upper bound".into()));
        }
        Ok(Self {
            name: name.into(),
            lower,
            upper,
            objective: Arc::new(objective),
            constraints: Vec::new(),
            objective_noise: 0.0,
            constraint_noise: Vec::new(),
            known_optimum: None,
            initial_point: None,
        })
    }

    /// Add a constraint `c(x) ≥ 0`.
    pub fn with_constraint(mut self, c: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.constraints.push(Arc::new(c));
        self.constraint_noise.push(0.0);
        self
    }

    pub fn with_known_optimum(mut self, value: f64) -> Self {
        self.known_optimum = Some(value);
        self
    }

    pub fn with_initial_point(mut self, x: Vec<f64>) -> Self {
        self.initial_point = Some(x);
        self
    }

    /// Same noise standard deviation on every output.
    pub fn with_noise(mut self, std: f64) -> Self {
        self.objective_noise = std;
        self.constraint_noise = vec![std; self.constraints.len()];
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| ((v - l) / (u - l)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, hi))| l + v * (hi - l)).collect()
    }

    /// Noise-free objective and constraint values.
    pub fn evaluate(&self, x: &[f64]) -> (f64, Vec<f64>) {
        ((self.objective)(x), self.constraints.iter().map(|c| c(x)).collect())
    }
}

/// How surrogate hyperparameters are set during a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperSetting {
    /// Fixed isotropic lengthscale (unit-cube units) and output scale.
    Frozen {
        lengthscale: f64,
        output_scale: f64,
    },
    Learn,
}

/// Candidate set for the next iterate after a line search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterateRule {
    /// Best of the current iterate and the line-search evaluations.
    #[default]
    KeepBest,
    /// Best of the line-search evaluations only.
    LineSearchOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Total number of oracle queries.
    pub budget: usize,
    /// Ball sub-samples per iteration; `None` means `d + 1`.
    pub subsamples: Option<usize>,
    pub ls_budget: usize,
    pub ls_candidates: usize,
    /// Sub-sampling radius in unit-cube coordinates.
    pub ball_radius: f64,
    pub delta_f: f64,
    pub delta_c: f64,
    /// `δ_f` used until a feasible point has been observed.
    pub delta_f_infeasible: f64,
    pub slack_penalty: f64,
    pub clip_eps: f64,
    /// Bound on `‖p‖∞` in unit-cube coordinates.
    pub trust_bound: Option<f64>,
    /// Keep `x_t + p` inside the box in the subproblem.
    pub box_constrained_steps: bool,
    /// Halve the trust bound after a line search without improvement and
    /// double it (up to `trust_bound`) after an improving step that used at
    /// least half of it.
    pub adaptive_trust: bool,
    pub hyper: HyperSetting,
    pub noise_variance: f64,
    pub iterate_rule: IterateRule,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            subsamples: None,
            ls_budget: 3,
            ls_candidates: 100,
            ball_radius: 0.05,
            delta_f: 0.2,
            delta_c: 0.2,
            delta_f_infeasible: 0.5,
            slack_penalty: 100.0,
            clip_eps: 1e-5,
            trust_bound: Some(1.0),
            box_constrained_steps: true,
            adaptive_trust: true,
            hyper: HyperSetting::Learn,
            noise_variance: 1e-4,
            iterate_rule: IterateRule::KeepBest,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_deltas(mut self, delta_f: f64, delta_c: f64) -> Self {
        self.delta_f = delta_f;
        self.delta_c = delta_c;
        self
    }

    pub fn with_frozen_lengthscale(mut self, lengthscale: f64) -> Self {
        self.hyper = HyperSetting::Frozen { lengthscale, output_scale: 1.0 };
        self
    }

    pub fn subsamples_for(&self, dim: usize) -> usize {
        self.subsamples.unwrap_or(dim + 1)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.budget == 0 {
            return bad("budget must be positive");
        }
        if self.subsamples_for(dim) == 0 || self.ls_budget == 0 {
            return bad("sub-sample count and line-search budget must be positive");
        }
        if self.budget < self.subsamples_for(dim) + self.ls_budget {
            return bad("budget must cover at least one sub-sampling round and one line search");
        }
        if self.ls_candidates < self.ls_budget {
            return bad("line-search candidates must be at least the line-search budget");
        }
        if !(self.ball_radius > 0.0) {
            return bad("ball radius must be positive");
        }
        for d in [self.delta_f, self.delta_c, self.delta_f_infeasible] {
            if !(d > 0.0 && d <= 0.5) {
                return bad("every delta must lie in (0, 0.5]");
            }
        }
        if let HyperSetting::Frozen { lengthscale, output_scale } = self.hyper {
            if !(lengthscale > 0.0 && output_scale > 0.0) {
                return bad("frozen hyperparameters must be positive");
            }
        }
        if !(self.noise_variance >= 0.0) {
            return bad("noise variance must be nonnegative");
        }
        self.subproblem(self.delta_f, None, self.trust_bound).validate()
    }

    fn subproblem(&self, delta_f: f64, x: Option<&[f64]>, trust_bound: Option<f64>) -> SubproblemConfig {
        let step_box = x.filter(|_| self.box_constrained_steps).map(|x| {
            let d = x.len();
            StepBox::around(x, &vec![0.0; d], &vec![1.0; d])
        });
        SubproblemConfig {
            step_box,
            delta_f,
            delta_c: self.delta_c,
            variant: Variant::Robust,
            slack_penalty: self.slack_penalty,
            clip_eps: self.clip_eps,
            trust_bound,
            ..SubproblemConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Iterate at which the local models were built, raw coordinates.
    pub x: Vec<f64>,
    pub step_norm: Option<f64>,
    /// Trust bound used for this iteration's subproblem.
    pub trust_radius: Option<f64>,
    /// Search direction in unit-cube coordinates.
    pub direction: Option<Vec<f64>>,
    pub used_fallback: bool,
    pub status: Option<SolveStatus>,
    pub delta_f: f64,
    pub marginal_sampling: bool,
    pub incumbent_f: f64,
    pub incumbent_feasible: bool,
    /// Why the line search was skipped, if it was.
    pub note: Option<String>,
}

/// Incumbent after each evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSoFar {
    pub f: f64,
    pub feasible: bool,
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub problem: String,
    pub algorithm: String,
    pub dim: usize,
    pub num_constraints: usize,
    pub config: RunConfig,
    pub evaluations: Vec<EvaluatedPoint>,
    pub best_so_far: Vec<BestSoFar>,
    pub iterations: Vec<IterationRecord>,
    pub abort_reason: Option<String>,
}

impl RunTrace {
    fn new(problem: &Problem, algorithm: &str, config: &RunConfig) -> Self {
        Self {
            problem: problem.name.clone(),
            algorithm: algorithm.to_string(),
            dim: problem.dim(),
            num_constraints: problem.num_constraints(),
            config: config.clone(),
            evaluations: Vec::new(),
            best_so_far: Vec::new(),
            iterations: Vec::new(),
            abort_reason: None,
        }
    }

    /// Best point over all evaluations.
    pub fn final_incumbent(&self) -> Option<&EvaluatedPoint> {
        incumbent_position(&self.evaluations).map(|i| &self.evaluations[i])
    }

    pub fn aborted(&self) -> bool {
        self.abort_reason.is_some()
    }

    fn push(&mut self, point: EvaluatedPoint) {
        let best = match self.evaluations.last().zip(self.best_so_far.last()) {
            Some((_, prev)) => {
                let prev_point = &self.evaluations[incumbent_position(&self.evaluations).unwrap_or(0)];
                if point.better_than(prev_point) {
                    summary(&point)
                } else {
                    *prev
                }
            }
            None => summary(&point),
        };
        self.evaluations.push(point);
        self.best_so_far.push(best);
    }
}

fn summary(p: &EvaluatedPoint) -> BestSoFar {
    BestSoFar { f: p.f, feasible: p.feasible(), violation: p.violation() }
}

/// Oracle access with budget accounting and observation noise.
struct Evaluator<'a> {
    problem: &'a Problem,
    noise_rng: ChaCha8Rng,
    trace: RunTrace,
}

impl Evaluator<'_> {
    fn used(&self) -> usize {
        self.trace.evaluations.len()
    }

    /// Evaluate at unit-cube point `u`; `Err` carries the abort reason.
    fn evaluate(&mut self, u: &[f64], phase: Phase, iteration: usize) -> std::result::Result<usize, String> {
        let x = self.problem.from_unit(u);
        let (mut f, mut c) = self.problem.evaluate(&x);
        let index = self.used();
        if !f.is_finite() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOracle { index }.to_string());
        }
        if self.problem.objective_noise > 0.0 {
            f += self.problem.objective_noise * self.noise_rng.sample::<f64, _>(StandardNormal);
        }
        for (ci, sd) in c.iter_mut().zip(&self.problem.constraint_noise) {
            if *sd > 0.0 {
                *ci += sd * self.noise_rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.trace.push(EvaluatedPoint { index, x, f, c, phase, iteration });
        Ok(index)
    }
}

/// Datasets of every model, in unit-cube inputs.
struct Models {
    objective: Dataset,
    constraints: Vec<Dataset>,
    warm: Vec<Option<KernelHyperparameters>>,
}

impl Models {
    fn add(&mut self, u: &[f64], point: &EvaluatedPoint) -> Result<()> {
        self.objective.push(u.to_vec(), point.f)?;
        for (data, c) in self.constraints.iter_mut().zip(&point.c) {
            data.push(u.to_vec(), *c)?;
        }
        Ok(())
    }

    fn fit_all(&mut self, config: &RunConfig, dim: usize) -> Result<(FittedGP, Vec<FittedGP>)> {
        let mut fitted = Vec::with_capacity(1 + self.constraints.len());
        for (i, data) in std::iter::once(&self.objective).chain(&self.constraints).enumerate() {
            let fit_config = match &config.hyper {
                HyperSetting::Frozen { lengthscale, output_scale } => FitConfig::frozen(
                    KernelHyperparameters::isotropic(dim, *lengthscale, *output_scale, config.noise_variance)?,
                ),
                HyperSetting::Learn => FitConfig {
                    noise_variance: config.noise_variance,
                    warm_start: self.warm[i].clone(),
                    ..FitConfig::learn(config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
                },
            };
            let gp = fit(data, &fit_config)?;
            self.warm[i] = Some(gp.hyper().clone());
            fitted.push(gp);
        }
        let objective = fitted.remove(0);
        Ok((objective, fitted))
    }
}

/// Run the optimiser on `problem`.
///
/// Invalid configurations are errors; a non-finite oracle value ends the run
/// early and is reported through [`RunTrace::abort_reason`].
/// Floor of the adaptive trust bound, unit-cube units.
pub const MIN_TRUST_RADIUS: f64 = 1e-4;

pub fn run(problem: &Problem, config: &RunConfig) -> Result<RunTrace> {
    let d = problem.dim();
    let m = problem.num_constraints();
    config.validate(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);
    let mut ev = Evaluator { problem, noise_rng, trace: RunTrace::new(problem, "bayesqp", config) };

    let mut x_t: Vec<f64> = match &problem.initial_point {
        Some(x) => {
            if x.len() != d {
                return Err(Error::InvalidArgument("initial point has the wrong dimension".into()));
            }
            problem.to_unit(x)
        }
        None => (0..d).map(|_| rng.random::<f64>()).collect(),
    };
    let mut models =
        Models { objective: Dataset::default(), constraints: vec![Dataset::default(); m], warm: vec![None; m + 1] };
    macro_rules! evaluate {
        ($u:expr, $phase:expr, $iter:expr) => {
            match ev.evaluate($u, $phase, $iter) {
                Ok(idx) => {
                    models.add($u, &ev.trace.evaluations[idx])?;
                    idx
                }
                Err(reason) => {
                    ev.trace.abort_reason = Some(reason);
                    return Ok(ev.trace);
                }
            }
        };
    }
    let mut x_t_index = evaluate!(&x_t, Phase::Init, 0);

    let unit_lower = vec![0.0; d];
    let unit_upper = vec![1.0; d];
    let mut ball_stream = SobolStream::starting_at(d + 1, 1)?;
    let mut multipliers = vec![0.0; m];
    let mut trust_radius = config.trust_bound;
    let k = config.subsamples_for(d);
    let mut iteration = 0;
    while ev.used() < config.budget {
        iteration += 1;
        let n_sub = k.min(config.budget - ev.used());
        for u in ball_samples(&x_t, config.ball_radius, n_sub, &unit_lower, &unit_upper, &mut ball_stream)? {
            evaluate!(&u, Phase::Subsample, iteration);
        }
        if ev.used() >= config.budget {
            break;
        }
        let feasible_seen = ev.trace.evaluations.iter().any(EvaluatedPoint::feasible);
        let delta_f = if feasible_seen { config.delta_f } else { config.delta_f_infeasible };
        let mut record = IterationRecord {
            iteration,
            x: problem.from_unit(&x_t),
            step_norm: None,
            trust_radius,
            direction: None,
            used_fallback: false,
            status: None,
            delta_f,
            marginal_sampling: false,
            incumbent_f: f64::NAN,
            incumbent_feasible: false,
            note: None,
        };

        let step = models.fit_all(config, d).and_then(|(gp_f, gp_cs)| {
            let objective = posterior_joint(&gp_f, &x_t)?;
            let constraints = gp_cs.iter().map(|gp| posterior_joint(gp, &x_t)).collect::<Result<Vec<_>>>()?;
            let local = LocalModelSet::new(objective, constraints)?;
            let dir = solve_direction(&local, &multipliers, &config.subproblem(delta_f, Some(&x_t), trust_radius))?;
            Ok((gp_f, gp_cs, dir))
        });
        let mut moved = false;
        match step {
            Ok((gp_f, gp_cs, dir)) => {
                let norm = dir.p.norm();
                record.step_norm = Some(norm);
                record.direction = Some(dir.p.iter().copied().collect());
                record.used_fallback = dir.used_fallback;
                record.status = Some(dir.status);
                multipliers = dir.multipliers.iter().copied().collect();
                let segment = Segment::new(x_t.clone(), dir.p.iter().copied().collect(), config.ls_candidates)?;
                if norm >= 1e-12 && norm.is_finite() && segment.reach() * norm >= 1e-12 {
                    let count = config.ls_budget.min(config.budget - ev.used());
                    let selection = thompson_select(&gp_f, &gp_cs, &segment, count, &mut rng)?;
                    record.marginal_sampling = selection.marginal_fallback;
                    let mut candidates = vec![x_t_index];
                    for u in &selection.points {
                        candidates.push(evaluate!(u, Phase::Linesearch, iteration));
                    }
                    let skip = match config.iterate_rule {
                        IterateRule::KeepBest => 0,
                        IterateRule::LineSearchOnly if candidates.len() > 1 => 1,
                        IterateRule::LineSearchOnly => 0,
                    };
                    let points: Vec<EvaluatedPoint> =
                        candidates[skip..].iter().map(|&i| ev.trace.evaluations[i].clone()).collect();
                    let best = skip + incumbent_position(&points).unwrap_or(0);
                    let improved = ev.trace.evaluations[candidates[best]].better_than(&ev.trace.evaluations[x_t_index]);
                    if config.adaptive_trust {
                        let step = if best > 0 {
                            selection.points[best - 1].iter().zip(&x_t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                        } else {
                            0.0
                        };
                        trust_radius = trust_radius.zip(config.trust_bound).map(|(r, max)| match improved {
                            true if step >= 0.5 * r => (2.0 * r).min(max),
                            true => r,
                            false => (0.5 * r).max(MIN_TRUST_RADIUS),
                        });
                    }
                    if best > 0 {
                        x_t = selection.points[best - 1].clone();
                        x_t_index = candidates[best];
                    }
                    moved = true;
                } else {
                    record.note = Some("degenerate search direction".into());
                }
            }
            Err(err) => {
                if matches!(err, Error::Subproblem { .. }) {
                    multipliers = vec![0.0; m];
                }
                record.note = Some(err.to_string());
            }
        }
        if !moved {
            let extra = config.ls_budget.min(config.budget - ev.used());
            for u in ball_samples(&x_t, config.ball_radius, extra, &unit_lower, &unit_upper, &mut ball_stream)? {
                evaluate!(&u, Phase::Subsample, iteration);
            }
        }
        if let Some(best) = ev.trace.final_incumbent() {
            record.incumbent_f = best.f;
            record.incumbent_feasible = best.feasible();
        }
        ev.trace.iterations.push(record);
    }
    Ok(ev.trace)
}

/// Uniform random search with the same trace format.
pub fn random_search(problem: &Problem, budget: usize, seed: u64) -> Result<RunTrace> {
    let config = RunConfig::new(budget).with_seed(seed);
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let mut ev = Evaluator { problem, noise_rng, trace: RunTrace::new(problem, "random", &config) };
    for _ in 0..budget {
        let u: Vec<f64> = (0..problem.dim()).map(|_| rng.random::<f64>()).collect();
        if let Err(reason) = ev.evaluate(&u, Phase::Init, 0) {
            ev.trace.abort_reason = Some(reason);
            break;
        }
    }
    Ok(ev.trace)
}

/// Step direction norm of each iteration, for diagnostics.
pub fn step_norms(trace: &RunTrace) -> DVector<f64> {
    DVector::from_iterator(trace.iterations.len(), trace.iterations.iter().map(|r| r.step_norm.unwrap_or(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(d: usize) -> Problem {
        Problem::new("bowl", vec![0.0; d], vec![1.0; d], |x: &[f64]| x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum())
            .unwrap()
    }

    fn frozen(budget: usize, seed: u64) -> RunConfig {
        RunConfig::new(budget).with_seed(seed).with_frozen_lengthscale(0.3)
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let problem = bowl(4);
        let trace = run(&problem, &frozen(120, 1)).unwrap();
        let best = trace.final_incumbent().unwrap();
        let dist = best.x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>().sqrt();
        assert!(dist < 0.05, "distance {dist}");
        assert_eq!(trace.evaluations.len(), 120);
    }

    #[test]
    fn budget_arithmetic() {
        let problem = bowl(2);
        let config = frozen(1 + 3 * (3 + 3), 2);
        let trace = run(&problem, &config).unwrap();
        assert_eq!(trace.iterations.len(), 3);
        assert_eq!(trace.evaluations.len(), 19);
        let ls = trace.evaluations.iter().filter(|e| e.phase == Phase::Linesearch).count();
        let degenerate = trace.iterations.iter().filter(|r| r.note.is_some()).count();
        assert_eq!(ls + 3 * degenerate, 9);
        let partial = run(&problem, &frozen(11, 2)).unwrap();
        assert_eq!(partial.evaluations.len(), 11);
    }

    #[test]
    fn inactive_constraint_does_not_change_iterates() {
        let plain = bowl(3);
        let constrained = bowl(3).with_constraint(|_: &[f64]| 1.0);
        let config = frozen(60, 5);
        let a = run(&plain, &config).unwrap();
        let b = run(&constrained, &config).unwrap();
        assert_eq!(a.iterations.len(), b.iterations.len());
        for (ra, rb) in a.iterations.iter().zip(&b.iterations) {
            let (pa, pb) = (ra.direction.as_ref().unwrap(), rb.direction.as_ref().unwrap());
            let diff = pa.iter().zip(pb).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-6, "iteration {}: {diff}", ra.iteration);
        }
    }

    #[test]
    fn runs_are_deterministic_and_monotone() {
        let problem = bowl(2).with_constraint(|x: &[f64]| 0.8 - x[0]);
        let a = run(&problem, &frozen(40, 9)).unwrap();
        let b = run(&problem, &frozen(40, 9)).unwrap();
        assert_eq!(a, b);
        for w in a.best_so_far.windows(2) {
            let worse = match (w[0].feasible, w[1].feasible) {
                (true, true) => w[1].f > w[0].f,
                (true, false) => true,
                (false, true) => false,
                (false, false) => w[1].violation > w[0].violation,
            };
            assert!(!worse);
        }
    }

    #[test]
    fn once_feasible_incumbent_stays_feasible() {
        let problem = bowl(2).with_constraint(|x: &[f64]| x[0] - 0.6);
        let trace = run(&problem, &frozen(60, 3)).unwrap();
        let first = trace.best_so_far.iter().position(|b| b.feasible);
        if let Some(i) = first {
            assert!(trace.best_so_far[i..].iter().all(|b| b.feasible));
        }
    }

    #[test]
    fn non_finite_oracle_aborts_with_trace() {
        let problem = Problem::new("nan", vec![0.0], vec![1.0], |x: &[f64]| if x[0] > 0.0 { f64::NAN } else { 0.0 })
            .unwrap()
            .with_initial_point(vec![0.0]);
        let trace = run(&problem, &frozen(20, 0)).unwrap();
        assert!(trace.aborted());
        assert!(trace.abort_reason.as_deref().unwrap().contains("non-finite"));
        assert_eq!(trace.evaluations.len(), 1);
    }

    #[test]
    fn random_search_properties() {
        let line = Problem::new("line", vec![0.0], vec![1.0], |x: &[f64]| x[0]).unwrap();
        let trace = random_search(&line, 10, 4).unwrap();
        assert_eq!(trace.evaluations.len(), 10);
        assert!(trace.best_so_far.windows(2).all(|w| w[1].f <= w[0].f));
        assert_eq!(trace, random_search(&line, 10, 4).unwrap());
    }

    #[test]
    fn rejects_invalid_configs() {
        let problem = bowl(2);
        assert!(run(&problem, &RunConfig::new(0)).is_err());
        assert!(run(&problem, &RunConfig::new(5)).is_err());
        assert!(run(&problem, &RunConfig::new(10).with_deltas(0.0, 0.2)).is_err());
        assert!(Problem::new("bad", vec![1.0], vec![0.0], |_: &[f64]| 0.0).is_err());
    }
}
