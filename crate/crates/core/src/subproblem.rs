//! Local search-direction subproblem built from joint GP posteriors.
//!
//! With `σ(p)² = σ² + pᵀΣ_∇p + 2pᵀΣ_∇,f` the variance of the linearised
//! model `f(x) + ∇f(x)ᵀp`, the robust program is
//!
//! ```text
//! minimise    ½ pᵀHp + μ_∇fᵀp + μ_f + q_f b_f
//! subject to  ‖L_fᵀ(1, p)‖ ≤ b_f
//!             ‖L_cᵢᵀ(1, p)‖ ≤ b_cᵢ
//!             -μ_∇cᵢᵀp + q_c b_cᵢ ≤ μ_cᵢ - zero_i
//!             b ≥ 0
//! ```
//!
//! where `q = Φ⁻¹(1 - δ)`, `L Lᵀ` is the stacked covariance of value and
//! gradient and `zero_i` is the raw feasibility threshold `0` expressed in
//! constraint `i`'s standardized units. The objective term is a value-at-risk
//! bound and each constraint row a chance constraint. The slacked variant
//! relaxes every constraint row by `s_i ≥ 0` at cost `ρ Σ s_i` and is always
//! feasible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::conesolver::{self, QuadraticConeProgram, SocBlock, SolveStatus, SolverSettings};
use crate::linalg::{jittered_cholesky, symmetrize, JITTER_LADDER};
use crate::surrogate::JointPosterior;
use crate::{Error, Result};

/// Posteriors of the objective and every constraint at the current iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModelSet {
    pub objective: JointPosterior,
    pub constraints: Vec<JointPosterior>,
}

impl LocalModelSet {
    pub fn new(objective: JointPosterior, constraints: Vec<JointPosterior>) -> Result<Self> {
        let d = objective.dim();
        for (i, c) in constraints.iter().enumerate() {
            if c.dim() != d || c.x != objective.x {
                return Err(Error::InvalidArgument(format!(
                    "constraint model {i} is not evaluated at the objective's query point"
                )));
            }
        }
        Ok(Self { objective, constraints })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Value-at-risk objective with chance constraints.
    Robust,
    /// Posterior means only; no cones.
    ExpectedValue,
    /// Robust program with penalised slack on every constraint row.
    Slacked,
    /// Robust objective, constraints dropped.
    UnconstrainedRobust,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubproblemConfig {
    /// Risk level of the objective in `(0, 0.5]`; above 0.5 the quantile is
    /// negative and the program is unbounded.
    pub delta_f: f64,
    /// Risk level of each constraint in `(0, 0.5]`.
    pub delta_c: f64,
    pub variant: Variant,
    pub slack_penalty: f64,
    pub clip_eps: f64,
    /// Optional bound `‖p‖∞ ≤ trust_bound`.
    pub trust_bound: Option<f64>,
    /// Optional coordinatewise bounds `lower ≤ p ≤ upper`, typically the
    /// box seen from the current iterate.
    pub step_box: Option<StepBox>,
    pub solver: SolverSettings,
}

/// Coordinatewise step bounds with `lower ≤ 0 ≤ upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StepBox {
    /// Steps that keep `x + p` inside `[lower, upper]`.
    pub fn around(x: &[f64], lower: &[f64], upper: &[f64]) -> Self {
        Self {
            lower: x.iter().zip(lower).map(|(v, l)| (l - v).min(0.0)).collect(),
            upper: x.iter().zip(upper).map(|(v, u)| (u - v).max(0.0)).collect(),
        }
    }
}

impl Default for SubproblemConfig {
    fn default() -> Self {
        Self {
            delta_f: 0.2,
            delta_c: 0.2,
            variant: Variant::Robust,
            slack_penalty: 100.0,
            clip_eps: 1e-5,
            trust_bound: None,
            step_box: None,
            solver: SolverSettings::default(),
        }
    }
}

impl SubproblemConfig {
    pub fn with_deltas(delta_f: f64, delta_c: f64) -> Self {
        Self { delta_f, delta_c, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, delta) in [("delta_f", self.delta_f), ("delta_c", self.delta_c)] {
            if !(delta > 0.0 && delta <= 0.5) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 0.5], got {delta}")));
            }
        }
        if !(self.slack_penalty > 0.0 && self.slack_penalty.is_finite()) {
            return Err(Error::InvalidArgument("slack penalty must be positive".into()));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::InvalidArgument("clip_eps must be positive".into()));
        }
        if let Some(tb) = self.trust_bound {
            if !(tb > 0.0) {
                return Err(Error::InvalidArgument("trust bound must be positive".into()));
            }
        }
        if let Some(b) = &self.step_box {
            if b.lower.len() != b.upper.len() || b.lower.iter().zip(&b.upper).any(|(l, u)| !(*l <= 0.0 && *u >= 0.0)) {
                return Err(Error::InvalidArgument("step box must have matching lengths and contain 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchDirection {
    pub p: DVector<f64>,
    /// Duals of the linearised constraint rows, clamped at zero.
    pub multipliers: DVector<f64>,
    pub slacks: DVector<f64>,
    pub b_f: f64,
    pub b_c: DVector<f64>,
    pub status: SolveStatus,
    pub used_fallback: bool,
    /// Optimal value of the program actually solved (standardized units).
    pub objective: f64,
}

/// `Φ⁻¹(1 - δ)`.
pub fn quantile(delta: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - delta)
}

/// `μ_∇²f - Σ ξᵢ μ_∇²cᵢ`, symmetrized.
pub fn lagrangian_hessian(models: &LocalModelSet, multipliers: &[f64]) -> Result<DMatrix<f64>> {
    if multipliers.len() != models.num_constraints() {
        return Err(Error::InvalidArgument(format!(
            "{} multipliers for {} constraints",
            multipliers.len(),
            models.num_constraints()
        )));
    }
    let mut h = models.objective.mu_hess.clone();
    for (xi, c) in multipliers.iter().zip(&models.constraints) {
        h -= &c.mu_hess * *xi;
    }
    symmetrize(&mut h);
    Ok(h)
}

/// Replace every eigenvalue below `eps` by `eps`.
pub fn clip_spd(h: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("Hessian contains non-finite entries".into()));
    }
    let mut sym = h.clone();
    symmetrize(&mut sym);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= eps {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(eps));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Lower Cholesky factor of `[var, cov_grad_fᵀ; cov_grad_f, cov_grad]`.
pub fn joint_cholesky(
    var: f64,
    cov_grad_f: &DVector<f64>,
    cov_grad: &DMatrix<f64>,
    ladder: &[f64],
) -> Result<DMatrix<f64>> {
    let d = cov_grad_f.len();
    let mut full = DMatrix::zeros(d + 1, d + 1);
    full[(0, 0)] = var;
    full.view_mut((1, 0), (d, 1)).copy_from(cov_grad_f);
    full.view_mut((0, 1), (1, d)).copy_from(&cov_grad_f.transpose());
    full.view_mut((1, 1), (d, d)).copy_from(cov_grad);
    let (chol, _) = jittered_cholesky(&full, ladder)?;
    Ok(chol.l())
}

fn stacked_cholesky(post: &JointPosterior) -> Result<DMatrix<f64>> {
    joint_cholesky(post.var_f, &post.cov_grad_f, &post.cov_grad, &JITTER_LADDER)
}

/// Column layout of the decision vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    d: usize,
    m: usize,
    robust: bool,
    slacked: bool,
}

impl Layout {
    fn b_f(&self) -> Option<usize> {
        self.robust.then_some(self.d)
    }

    fn b_c(&self, i: usize) -> Option<usize> {
        self.robust.then_some(self.d + 1 + i)
    }

    fn slack(&self, i: usize) -> Option<usize> {
        self.slacked.then(|| self.d + usize::from(self.robust) * (1 + self.m) + i)
    }

    fn len(&self) -> usize {
        self.d + usize::from(self.robust) * (1 + self.m) + usize::from(self.slacked) * self.m
    }
}

/// Cone `‖Lᵀ(1, p)‖ ≤ b` for the variable in column `b_col`.
fn variance_cone(l: &DMatrix<f64>, d: usize, n: usize, b_col: usize) -> SocBlock {
    let lt = l.transpose();
    let mut a = DMatrix::zeros(d + 1, n);
    a.view_mut((0, 0), (d + 1, d)).copy_from(&lt.columns(1, d));
    let mut c = DVector::zeros(n);
    c[b_col] = 1.0;
    SocBlock { a, b: lt.column(0).into_owned(), c, d: 0.0 }
}

fn build(
    models: &LocalModelSet,
    h: &DMatrix<f64>,
    config: &SubproblemConfig,
    layout: Layout,
) -> Result<QuadraticConeProgram> {
    config.validate()?;
    let d = layout.d;
    let n = layout.len();
    if h.shape() != (d, d) {
        return Err(Error::InvalidArgument(format!("Hessian is {:?}, expected {d}x{d}", h.shape())));
    }
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (d, d)).copy_from(h);
    let mut q = DVector::zeros(n);
    q.rows_mut(0, d).copy_from(&models.objective.mu_grad);
    let mut prog = QuadraticConeProgram::new(p, q);
    prog.objective_offset = models.objective.mu_f;

    let q_f = quantile(config.delta_f);
    let q_c = quantile(config.delta_c);
    if let Some(col) = layout.b_f() {
        prog.q[col] = q_f;
        prog.add_soc(variance_cone(&stacked_cholesky(&models.objective)?, d, n, col));
    }
    for i in 0..layout.m {
        let c = &models.constraints[i];
        let mut row = vec![0.0; n];
        for (entry, g) in row.iter_mut().zip(c.mu_grad.iter()) {
            *entry = -g;
        }
        if let Some(col) = layout.b_c(i) {
            row[col] = q_c;
        }
        if let Some(col) = layout.slack(i) {
            row[col] = -1.0;
            prog.q[col] = config.slack_penalty;
        }
        prog.add_linear_row(&row, c.mu_f - c.standardized_zero());
    }
    for i in 0..layout.m {
        if let Some(col) = layout.b_c(i) {
            prog.add_soc(variance_cone(&stacked_cholesky(&models.constraints[i])?, d, n, col));
        }
    }
    let nonneg: Vec<usize> = layout
        .b_f()
        .into_iter()
        .chain((0..layout.m).filter_map(|i| layout.b_c(i)))
        .chain((0..layout.m).filter_map(|i| layout.slack(i)))
        .collect();
    for col in nonneg {
        let mut row = vec![0.0; n];
        row[col] = -1.0;
        prog.add_linear_row(&row, 0.0);
    }
    if let Some(b) = &config.step_box {
        if b.lower.len() != d {
            return Err(Error::InvalidArgument(format!("step box has {} coordinates, expected {d}", b.lower.len())));
        }
    }
    let tb = config.trust_bound.unwrap_or(f64::INFINITY);
    for k in 0..d {
        let (lo, hi) = config.step_box.as_ref().map_or((-tb, tb), |b| (b.lower[k].max(-tb), b.upper[k].min(tb)));
        for (sign, rhs) in [(1.0, hi), (-1.0, -lo)] {
            if rhs.is_finite() {
                let mut row = vec![0.0; n];
                row[k] = sign;
                prog.add_linear_row(&row, rhs);
            }
        }
    }
    Ok(prog)
}

/// Robust program (or its unconstrained form for
/// [`Variant::UnconstrainedRobust`]) over `(p, b_f, b_c)`.
pub fn assemble(models: &LocalModelSet, h: &DMatrix<f64>, config: &SubproblemConfig) -> Result<QuadraticConeProgram> {
    let m = match config.variant {
        Variant::UnconstrainedRobust => 0,
        _ => models.num_constraints(),
    };
    build(models, h, config, Layout { d: models.dim(), m, robust: true, slacked: false })
}

/// Classical SQP quadratic program over `p` with posterior means only.
pub fn assemble_expected_value(
    models: &LocalModelSet,
    h: &DMatrix<f64>,
    config: &SubproblemConfig,
) -> Result<QuadraticConeProgram> {
    let layout = Layout { d: models.dim(), m: models.num_constraints(), robust: false, slacked: false };
    build(models, h, config, layout)
}

/// Robust program with slack `s ≥ 0` on every constraint row, over
/// `(p, b_f, b_c, s)`.
pub fn assemble_slacked(
    models: &LocalModelSet,
    h: &DMatrix<f64>,
    config: &SubproblemConfig,
) -> Result<QuadraticConeProgram> {
    let layout = Layout { d: models.dim(), m: models.num_constraints(), robust: true, slacked: true };
    build(models, h, config, layout)
}

fn extract(sol: &conesolver::ConeSolution, layout: Layout, used_fallback: bool) -> SearchDirection {
    let d = layout.d;
    let pick = |col: Option<usize>| col.map_or(0.0, |c| sol.z[c]);
    SearchDirection {
        p: sol.z.rows(0, d).into_owned(),
        multipliers: DVector::from_iterator(layout.m, sol.lin_duals.iter().take(layout.m).map(|v| v.max(0.0))),
        slacks: DVector::from_iterator(layout.m, (0..layout.m).map(|i| pick(layout.slack(i)).max(0.0))),
        b_f: pick(layout.b_f()),
        b_c: DVector::from_iterator(layout.m, (0..layout.m).map(|i| pick(layout.b_c(i)))),
        status: sol.status,
        used_fallback,
        objective: sol.objective,
    }
}

/// Build the clipped Lagrangian Hessian, solve the configured program and fall
/// back to the slacked program if it cannot be solved.
pub fn solve_direction(
    models: &LocalModelSet,
    prev_multipliers: &[f64],
    config: &SubproblemConfig,
) -> Result<SearchDirection> {
    config.validate()?;
    let h = clip_spd(&lagrangian_hessian(models, prev_multipliers)?, config.clip_eps)?;
    let active: Vec<usize> =
        (0..models.num_constraints()).filter(|&i| !certainly_satisfied(&models.constraints[i])).collect();
    if active.len() == models.num_constraints() {
        return solve_reduced(models, &h, config);
    }
    let reduced = LocalModelSet {
        objective: models.objective.clone(),
        constraints: active.iter().map(|&i| models.constraints[i].clone()).collect(),
    };
    let dir = solve_reduced(&reduced, &h, config)?;
    let m = models.num_constraints();
    let scatter = |v: &DVector<f64>| {
        let mut full = DVector::zeros(m);
        for (k, &i) in active.iter().enumerate() {
            full[i] = v[k];
        }
        full
    };
    Ok(SearchDirection {
        multipliers: scatter(&dir.multipliers),
        slacks: scatter(&dir.slacks),
        b_c: scatter(&dir.b_c),
        ..dir
    })
}

/// Constraint observed at a constant nonnegative value everywhere so far.
fn certainly_satisfied(c: &JointPosterior) -> bool {
    c.standardization.is_constant() && c.standardization.mean >= 0.0
}

fn solve_reduced(models: &LocalModelSet, h: &DMatrix<f64>, config: &SubproblemConfig) -> Result<SearchDirection> {
    let d = models.dim();
    let m = models.num_constraints();
    let layout = match config.variant {
        Variant::Robust => Layout { d, m, robust: true, slacked: false },
        Variant::ExpectedValue => Layout { d, m, robust: false, slacked: false },
        Variant::Slacked => Layout { d, m, robust: true, slacked: true },
        Variant::UnconstrainedRobust => Layout { d, m: 0, robust: true, slacked: false },
    };
    let primary = build(models, h, config, layout)?;
    let sol = conesolver::solve(&primary, &config.solver)?;
    if sol.status == SolveStatus::Optimal {
        let mut dir = extract(&sol, layout, false);
        if layout.m < m {
            dir.multipliers = DVector::zeros(m);
            dir.slacks = DVector::zeros(m);
            dir.b_c = DVector::zeros(m);
        }
        return Ok(dir);
    }
    if layout.slacked || layout.m == 0 || sol.status == SolveStatus::Unbounded {
        return Err(Error::Subproblem { robust: sol.status, slacked: None });
    }
    let fallback_layout = Layout { slacked: true, ..layout };
    let fallback = build(models, h, config, fallback_layout)?;
    let slacked = conesolver::solve(&fallback, &config.solver)?;
    if slacked.status == SolveStatus::Optimal {
        return Ok(extract(&slacked, fallback_layout, true));
    }
    Err(Error::Subproblem { robust: sol.status, slacked: Some(slacked.status) })
}
