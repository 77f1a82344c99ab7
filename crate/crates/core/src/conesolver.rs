//! Dense interior-point solver for convex quadratic programs with linear and
//! second-order cone constraints:
//!
//! ```text
//! minimise    ½ zᵀ P z + qᵀ z
//! subject to  G_lin z ≤ h_lin
//!             ‖A_j z + b_j‖₂ ≤ c_jᵀ z + d_j   for every cone block j
//! ```
//!
//! Internally the program is written as `G z + s = h`, `s ∈ K` with `K` the
//! product of the nonnegative orthant and one second-order cone per block,
//! and solved with a homogeneous self-dual embedding that keeps the
//! quadratic term in the objective. Steps use Nesterov–Todd scaling and a
//! Mehrotra predictor-corrector. The embedding makes infeasibility and
//! unboundedness certificates fall out of the same iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::norm_inf;
use crate::{Error, Result};

/// One constraint `‖A z + b‖₂ ≤ cᵀ z + d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SocBlock {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl SocBlock {
    /// Slack `cᵀz + d - ‖Az + b‖` (nonnegative when satisfied).
    pub fn margin(&self, z: &DVector<f64>) -> f64 {
        self.c.dot(z) + self.d - (&self.a * z + &self.b).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticConeProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lin_g: DMatrix<f64>,
    pub lin_h: DVector<f64>,
    pub soc_blocks: Vec<SocBlock>,
    /// Constant added to the reported objective.
    pub objective_offset: f64,
}

impl QuadraticConeProgram {
    /// Unconstrained program `min ½ zᵀPz + qᵀz`.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            lin_g: DMatrix::zeros(0, n),
            lin_h: DVector::zeros(0),
            soc_blocks: Vec::new(),
            objective_offset: 0.0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_linear(&self) -> usize {
        self.lin_h.len()
    }

    /// Append the row `row · z ≤ rhs`.
    pub fn add_linear_row(&mut self, row: &[f64], rhs: f64) {
        let m = self.lin_g.nrows();
        let n = self.num_vars();
        assert_eq!(row.len(), n, "row length must equal the number of variables");
        let mut g = std::mem::replace(&mut self.lin_g, DMatrix::zeros(0, 0)).insert_row(m, 0.0);
        g.row_mut(m).copy_from_slice(row);
        self.lin_g = g;
        self.lin_h = std::mem::replace(&mut self.lin_h, DVector::zeros(0)).push(rhs);
    }

    pub fn add_soc(&mut self, block: SocBlock) {
        self.soc_blocks.push(block);
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z) + self.objective_offset
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.p.shape() != (n, n) {
            return bad(format!("P is {:?}, expected {n}x{n}", self.p.shape()));
        }
        if self.lin_g.ncols() != n || self.lin_g.nrows() != self.lin_h.len() {
            return bad("linear constraint dimensions are inconsistent".into());
        }
        for (j, blk) in self.soc_blocks.iter().enumerate() {
            if blk.a.ncols() != n || blk.a.nrows() != blk.b.len() || blk.c.len() != n {
                return bad(format!("cone block {j} dimensions are inconsistent"));
            }
        }
        let finite =
            self.p.iter().chain(self.q.iter()).chain(self.lin_g.iter()).chain(self.lin_h.iter()).all(|v| v.is_finite())
                && self
                    .soc_blocks
                    .iter()
                    .all(|b| b.a.iter().chain(b.b.iter()).chain(b.c.iter()).all(|v| v.is_finite()) && b.d.is_finite());
        if !finite {
            return bad("program data must be finite".into());
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > 1e-9 * (1.0 + self.p.amax()) {
            return bad(format!("P is not symmetric (max asymmetry {asym:e})"));
        }
        if n > 0 {
            let min_eig = self.p.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-8 {
                return bad(format!("P is not positive semidefinite (min eigenvalue {min_eig:e})"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iters: usize,
    /// Relative tolerance on primal and dual residuals.
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    /// Tolerance of the infeasibility and unboundedness certificates.
    pub tol_infeas: f64,
    /// Looser feasibility and gap tolerance accepted when progress stalls.
    pub tol_reduced: f64,
    /// Diagonal regularisation of the KKT matrix, removed by refinement.
    pub static_reg: f64,
    pub refine_iters: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol_feas: 1e-9,
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-9,
            tol_infeas: 1e-8,
            tol_reduced: 1e-7,
            static_reg: 1e-9,
            refine_iters: 10,
            step_fraction: 0.99,
        }
    }
}

/// Max-norm residuals of the returned point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    /// Duality gap relative to `max(1, |objective|)`.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConeSolution {
    pub status: SolveStatus,
    pub z: DVector<f64>,
    pub lin_duals: DVector<f64>,
    pub soc_duals: Vec<DVector<f64>>,
    /// `½ zᵀPz + qᵀz + objective_offset`.
    pub objective: f64,
    pub kkt_residuals: KktResiduals,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
enum Cone {
    Nonneg { offset: usize, len: usize },
    Soc { offset: usize, len: usize },
}

impl Cone {
    fn range(&self) -> std::ops::Range<usize> {
        match *self {
            Cone::Nonneg { offset, len } | Cone::Soc { offset, len } => offset..offset + len,
        }
    }

    fn degree(&self) -> usize {
        match *self {
            Cone::Nonneg { len, .. } => len,
            Cone::Soc { .. } => 1,
        }
    }
}

/// `min ½xᵀPx + qᵀx` s.t. `Gx + s = h`, `s ∈ K`.
struct StandardForm {
    p: DMatrix<f64>,
    q: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    cones: Vec<Cone>,
}

impl StandardForm {
    fn from_program(prog: &QuadraticConeProgram) -> Self {
        let n = prog.num_vars();
        let ml = prog.num_linear();
        let rows = ml + prog.soc_blocks.iter().map(|b| b.b.len() + 1).sum::<usize>();
        let mut g = DMatrix::zeros(rows, n);
        let mut h = DVector::zeros(rows);
        let mut cones = Vec::new();
        if ml > 0 {
            g.rows_mut(0, ml).copy_from(&prog.lin_g);
            h.rows_mut(0, ml).copy_from(&prog.lin_h);
            cones.push(Cone::Nonneg { offset: 0, len: ml });
        }
        let mut offset = ml;
        for blk in &prog.soc_blocks {
            let k = blk.b.len();
            // s = (cᵀz + d, Az + b) = h - Gz
            g.row_mut(offset).copy_from(&(-blk.c.transpose()));
            h[offset] = blk.d;
            g.rows_mut(offset + 1, k).copy_from(&(-&blk.a));
            h.rows_mut(offset + 1, k).copy_from(&blk.b);
            cones.push(Cone::Soc { offset, len: k + 1 });
            offset += k + 1;
        }
        Self { p: prog.p.clone(), q: prog.q.clone(), g, h, cones }
    }

    fn degree(&self) -> usize {
        self.cones.iter().map(Cone::degree).sum()
    }
}

fn cone_identity(cones: &[Cone], m: usize) -> DVector<f64> {
    let mut e = DVector::zeros(m);
    for cone in cones {
        match *cone {
            Cone::Nonneg { offset, len } => e.rows_mut(offset, len).fill(1.0),
            Cone::Soc { offset, .. } => e[offset] = 1.0,
        }
    }
    e
}

/// Smallest "eigenvalue" of `v` with respect to the cone.
fn min_cone_value(cones: &[Cone], v: &DVector<f64>) -> f64 {
    cones
        .iter()
        .map(|cone| match *cone {
            Cone::Nonneg { offset, len } => v.rows(offset, len).min(),
            Cone::Soc { offset, len } => v[offset] - v.rows(offset + 1, len - 1).norm(),
        })
        .fold(f64::INFINITY, f64::min)
}

fn shift_into_cone(cones: &[Cone], v: &mut DVector<f64>) {
    let lowest = min_cone_value(cones, v);
    if lowest < 1e-8 {
        let e = cone_identity(cones, v.len());
        v.axpy(1.0 - lowest, &e, 1.0);
    }
}

/// Largest `α` with `u + α du` inside the cone (may be infinite).
fn max_step(cones: &[Cone], u: &DVector<f64>, du: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for cone in cones {
        match *cone {
            Cone::Nonneg { offset, len } => {
                for i in offset..offset + len {
                    if du[i] < 0.0 {
                        alpha = alpha.min(-u[i] / du[i]);
                    }
                }
            }
            Cone::Soc { offset, len } => {
                let u0 = u[offset];
                let d0 = du[offset];
                let u1 = u.rows(offset + 1, len - 1);
                let d1 = du.rows(offset + 1, len - 1);
                // (u0 + α d0)² - ‖u1 + α d1‖² = a α² + 2 b α + c
                let a = d0 * d0 - d1.norm_squared();
                let b = u0 * d0 - u1.dot(&d1);
                let c = (u0 * u0 - u1.norm_squared()).max(0.0);
                alpha = alpha.min(smallest_positive_root(a, b, c));
                if d0 < 0.0 {
                    alpha = alpha.min(-u0 / d0);
                }
            }
        }
    }
    alpha
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return f64::INFINITY;
    }
    if a.abs() <= 1e-14 * scale {
        return if b < 0.0 { -c / (2.0 * b) } else { f64::INFINITY };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let root = -(b + b.signum() * disc.sqrt());
    let mut best = f64::INFINITY;
    for r in [root / a, if root != 0.0 { c / root } else { f64::INFINITY }] {
        if r > 0.0 {
            best = best.min(r);
        }
    }
    best
}

/// Jordan product `u ∘ v`.
fn jordan_product(cones: &[Cone], u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for cone in cones {
        match *cone {
            Cone::Nonneg { offset, len } => {
                for i in offset..offset + len {
                    out[i] = u[i] * v[i];
                }
            }
            Cone::Soc { offset, len } => {
                out[offset] = u.rows(offset, len).dot(&v.rows(offset, len));
                for i in offset + 1..offset + len {
                    out[i] = u[offset] * v[i] + v[offset] * u[i];
                }
            }
        }
    }
    out
}

/// Solve `λ ∘ x = d` for `x`.
fn jordan_divide(cones: &[Cone], lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(d.len());
    for cone in cones {
        match *cone {
            Cone::Nonneg { offset, len } => {
                for i in offset..offset + len {
                    out[i] = d[i] / lambda[i];
                }
            }
            Cone::Soc { offset, len } => {
                let l0 = lambda[offset];
                let l1 = lambda.rows(offset + 1, len - 1);
                let d1 = d.rows(offset + 1, len - 1);
                let det = l0 * l0 - l1.norm_squared();
                let x0 = (l0 * d[offset] - l1.dot(&d1)) / det;
                out[offset] = x0;
                for (k, i) in (offset + 1..offset + len).enumerate() {
                    out[i] = (d1[k] - x0 * l1[k]) / l0;
                }
            }
        }
    }
    out
}

/// Block-diagonal Nesterov–Todd scaling `W` (symmetric) and its inverse, with
/// `W z = W⁻¹ s`.
fn nt_scaling(cones: &[Cone], s: &DVector<f64>, z: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = s.len();
    let mut w = DMatrix::zeros(m, m);
    let mut w_inv = DMatrix::zeros(m, m);
    for cone in cones {
        match *cone {
            Cone::Nonneg { offset, len } => {
                for i in offset..offset + len {
                    let v = (s[i] / z[i]).sqrt();
                    w[(i, i)] = v;
                    w_inv[(i, i)] = 1.0 / v;
                }
            }
            Cone::Soc { offset, len } => {
                let sb = s.rows(offset, len);
                let zb = z.rows(offset, len);
                let s_norm = (sb[0] * sb[0] - sb.rows(1, len - 1).norm_squared()).max(f64::MIN_POSITIVE).sqrt();
                let z_norm = (zb[0] * zb[0] - zb.rows(1, len - 1).norm_squared()).max(f64::MIN_POSITIVE).sqrt();
                let s_bar = sb / s_norm;
                let z_bar = zb / z_norm;
                let gamma = (0.5 * (1.0 + s_bar.dot(&z_bar))).sqrt();
                let mut w_bar = DVector::zeros(len);
                w_bar[0] = (s_bar[0] + z_bar[0]) / (2.0 * gamma);
                for k in 1..len {
                    w_bar[k] = (s_bar[k] - z_bar[k]) / (2.0 * gamma);
                }
                let eta = (s_norm / z_norm).sqrt();
                let w0 = w_bar[0];
                let denom = 1.0 + w0;
                for i in 0..len {
                    for j in 0..len {
                        let (fwd, inv) = match (i, j) {
                            (0, 0) => (w0, w0),
                            (0, _) => (w_bar[j], -w_bar[j]),
                            (_, 0) => (w_bar[i], -w_bar[i]),
                            _ => {
                                let v = f64::from(u8::from(i == j)) + w_bar[i] * w_bar[j] / denom;
                                (v, v)
                            }
                        };
                        w[(offset + i, offset + j)] = eta * fwd;
                        w_inv[(offset + i, offset + j)] = inv / eta;
                    }
                }
            }
        }
    }
    (w, w_inv)
}

/// Quasi-definite KKT matrix factorised once per iteration; solves are
/// refined against the unregularised matrix.
struct KktSystem {
    exact: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    refine_iters: usize,
}

impl KktSystem {
    fn new(p: &DMatrix<f64>, g: &DMatrix<f64>, lower: &DMatrix<f64>, reg: f64, refine_iters: usize) -> Self {
        let n = p.nrows();
        let m = g.nrows();
        let mut exact = DMatrix::zeros(n + m, n + m);
        exact.view_mut((0, 0), (n, n)).copy_from(p);
        exact.view_mut((n, 0), (m, n)).copy_from(g);
        exact.view_mut((0, n), (n, m)).copy_from(&g.transpose());
        exact.view_mut((n, n), (m, m)).copy_from(&(-lower));
        let mut regularised = exact.clone();
        for i in 0..n + m {
            regularised[(i, i)] += if i < n { reg } else { -reg };
        }
        Self { exact, lu: regularised.lu(), refine_iters }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let mut sol = self.lu.solve(rhs)?;
        let scale = 1.0 + norm_inf(rhs.as_slice());
        for _ in 0..self.refine_iters {
            let residual = rhs - &self.exact * &sol;
            if residual.amax() <= 1e-15 * scale {
                break;
            }
            let correction = self.lu.solve(&residual)?;
            sol += correction;
        }
        sol.iter().all(|v| v.is_finite()).then_some(sol)
    }
}

#[derive(Clone)]
struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    x: DVector<f64>,
    s: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Residuals {
    x: DVector<f64>,
    z: DVector<f64>,
    tau: f64,
}

/// Solve a quadratic cone program.
///
/// Returns `Err` only for malformed programs; every numerical outcome is
/// reported through [`ConeSolution::status`].
pub fn solve(program: &QuadraticConeProgram, settings: &SolverSettings) -> Result<ConeSolution> {
    program.validate()?;
    let sf = StandardForm::from_program(program);
    let n = sf.q.len();
    let m = sf.h.len();
    let nu = sf.degree() as f64;
    let e = cone_identity(&sf.cones, m);

    let init = KktSystem::new(&sf.p, &sf.g, &DMatrix::identity(m, m), settings.static_reg, settings.refine_iters);
    let rhs = stack(&(-&sf.q), &sf.h);
    let Some(sol) = init.solve(&rhs) else {
        return Ok(failure(program, &sf, n, SolveStatus::NumericalFailure, 0));
    };
    let x0 = sol.rows(0, n).into_owned();
    let z0 = sol.rows(n, m).into_owned();
    let mut s0 = -&z0;
    let mut z0 = z0;
    shift_into_cone(&sf.cones, &mut s0);
    shift_into_cone(&sf.cones, &mut z0);
    let mut it = Iterate { x: x0, s: s0, z: z0, tau: 1.0, kappa: 1.0 };

    let norm_q = sf.q.amax();
    let norm_h = if m > 0 { sf.h.amax() } else { 0.0 };
    let mut stalls = 0;
    // Best iterate meeting the reduced tolerances, returned if progress stalls.
    let mut best: Option<(f64, Iterate)> = None;
    for iter in 0..settings.max_iters {
        let px = &sf.p * &it.x;
        let gtz = sf.g.tr_mul(&it.z);
        let gx = &sf.g * &it.x;
        let xpx = it.x.dot(&px);
        let res = Residuals {
            x: &px + &gtz + &sf.q * it.tau,
            z: &gx + &it.s - &sf.h * it.tau,
            tau: sf.q.dot(&it.x) + sf.h.dot(&it.z) + it.kappa + xpx / it.tau,
        };

        // Convergence on the de-homogenised point.
        let inv_tau = 1.0 / it.tau;
        let pres = (&res.z * inv_tau).amax_or_zero();
        let dres = (&res.x * inv_tau).amax_or_zero();
        let pobj = 0.5 * xpx * inv_tau * inv_tau + sf.q.dot(&it.x) * inv_tau;
        let dobj = -0.5 * xpx * inv_tau * inv_tau - sf.h.dot(&it.z) * inv_tau;
        let gap = (pobj - dobj).abs();
        let primal_scale = 1.0 + norm_h.max((&gx * inv_tau).amax_or_zero()).max((&it.s * inv_tau).amax_or_zero());
        let dual_scale = 1.0 + norm_q.max((&px * inv_tau).amax_or_zero()).max((&gtz * inv_tau).amax_or_zero());
        let gap_scale = pobj.abs().min(dobj.abs());
        let converged = |tol_feas: f64, tol_gap_abs: f64, tol_gap_rel: f64| {
            pres <= tol_feas * primal_scale
                && dres <= tol_feas * dual_scale
                && (gap <= tol_gap_abs || gap <= tol_gap_rel * gap_scale)
        };
        if converged(settings.tol_feas, settings.tol_gap_abs, settings.tol_gap_rel) {
            return Ok(finish(program, &sf, &it, SolveStatus::Optimal, iter));
        }
        let reduced = settings.tol_reduced;
        if converged(reduced, reduced, reduced) {
            let merit = (pres / primal_scale).max(dres / dual_scale).max(gap.min(gap / gap_scale.max(1e-300)));
            if best.as_ref().is_none_or(|(m, _)| merit < *m) {
                best = Some((merit, it.clone()));
            }
        }
        let stalled = |it: &Iterate, status: SolveStatus, iter: usize| match &best {
            Some((_, b)) => finish(program, &sf, b, SolveStatus::Optimal, iter),
            None => finish(program, &sf, it, status, iter),
        };
        if iter + 1 == settings.max_iters {
            return Ok(stalled(&it, SolveStatus::IterLimit, settings.max_iters));
        }

        // Certificates.
        let htz = sf.h.dot(&it.z);
        if htz < 0.0 && gtz.amax_or_zero() <= settings.tol_infeas * -htz && it.tau < it.kappa.max(1e-12) * 1e3 {
            return Ok(finish(program, &sf, &it, SolveStatus::Infeasible, iter));
        }
        let qtx = sf.q.dot(&it.x);
        if qtx < 0.0
            && px.amax_or_zero() <= settings.tol_infeas * -qtx
            && (&gx + &it.s).amax_or_zero() <= settings.tol_infeas * -qtx
        {
            return Ok(finish(program, &sf, &it, SolveStatus::Unbounded, iter));
        }

        let (w, w_inv) = nt_scaling(&sf.cones, &it.s, &it.z);
        let lambda = &w * &it.z;
        let w2 = &w * &w;
        let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / (nu + 1.0);
        let kkt = KktSystem::new(&sf.p, &sf.g, &w2, settings.static_reg, settings.refine_iters);
        let Some(sol1) = kkt.solve(&stack(&(-&sf.q), &sf.h)) else {
            return Ok(stalled(&it, SolveStatus::NumericalFailure, iter));
        };
        let x1 = sol1.rows(0, n).into_owned();
        let z1 = sol1.rows(n, m).into_owned();
        let xi = &it.x * inv_tau;
        let q_xi = &sf.q + &sf.p * &xi * 2.0;
        let x1_xi = &x1 - &xi;
        let wz1 = &w * &z1;
        let denom = -x1_xi.dot(&(&sf.p * &x1_xi)) - wz1.norm_squared() - it.kappa * inv_tau;

        let newton = |d_x: &DVector<f64>,
                      d_z: &DVector<f64>,
                      d_tau: f64,
                      d_s: &DVector<f64>,
                      d_kappa: f64|
         -> Option<Direction> {
            let t = &w * jordan_divide(&sf.cones, &lambda, d_s);
            let sol2 = kkt.solve(&stack(&(-d_x), &(&t - d_z)))?;
            let x2 = sol2.rows(0, n).into_owned();
            let z2 = sol2.rows(n, m).into_owned();
            let num = -d_tau + d_kappa * inv_tau - q_xi.dot(&x2) - sf.h.dot(&z2);
            let dtau = num / denom;
            let dx = &x2 + &x1 * dtau;
            let dz = &z2 + &z1 * dtau;
            let ds = -&t - &w2 * &dz;
            let dkappa = -(d_kappa + it.kappa * dtau) * inv_tau;
            let finite = dtau.is_finite()
                && dkappa.is_finite()
                && dx.iter().chain(dz.iter()).chain(ds.iter()).all(|v| v.is_finite());
            finite.then_some(Direction { x: dx, s: ds, z: dz, tau: dtau, kappa: dkappa })
        };
        let step_to_boundary = |d: &Direction| -> f64 {
            let mut a = max_step(&sf.cones, &it.s, &d.s).min(max_step(&sf.cones, &it.z, &d.z));
            if d.tau < 0.0 {
                a = a.min(-it.tau / d.tau);
            }
            if d.kappa < 0.0 {
                a = a.min(-it.kappa / d.kappa);
            }
            a
        };

        // Predictor.
        let lambda_sq = jordan_product(&sf.cones, &lambda, &lambda);
        let Some(affine) = newton(&res.x, &res.z, res.tau, &lambda_sq, it.tau * it.kappa) else {
            return Ok(stalled(&it, SolveStatus::NumericalFailure, iter));
        };
        let alpha_aff = step_to_boundary(&affine).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // Corrector.
        let second_order = jordan_product(&sf.cones, &(&w_inv * &affine.s), &(&w * &affine.z));
        let d_s = &lambda_sq + &second_order - &e * (sigma * mu);
        let d_kappa = it.tau * it.kappa + affine.tau * affine.kappa - sigma * mu;
        let Some(dir) =
            newton(&(&res.x * (1.0 - sigma)), &(&res.z * (1.0 - sigma)), res.tau * (1.0 - sigma), &d_s, d_kappa)
        else {
            return Ok(stalled(&it, SolveStatus::NumericalFailure, iter));
        };
        let alpha = (settings.step_fraction * step_to_boundary(&dir)).min(1.0);
        if !(alpha > 1e-10) {
            stalls += 1;
            if stalls >= 3 {
                return Ok(stalled(&it, SolveStatus::NumericalFailure, iter));
            }
        } else {
            stalls = 0;
        }
        it.x.axpy(alpha, &dir.x, 1.0);
        it.s.axpy(alpha, &dir.s, 1.0);
        it.z.axpy(alpha, &dir.z, 1.0);
        it.tau += alpha * dir.tau;
        it.kappa += alpha * dir.kappa;
        let healthy = it.tau > 0.0 && it.tau.is_finite() && it.kappa.is_finite() && it.x.iter().all(|v| v.is_finite());
        if !healthy {
            return Ok(stalled(&it, SolveStatus::NumericalFailure, iter + 1));
        }
    }
    Ok(finish(program, &sf, &it, SolveStatus::IterLimit, settings.max_iters))
}

trait AmaxOrZero {
    fn amax_or_zero(&self) -> f64;
}

impl AmaxOrZero for DVector<f64> {
    fn amax_or_zero(&self) -> f64 {
        norm_inf(self.as_slice())
    }
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn failure(
    program: &QuadraticConeProgram,
    sf: &StandardForm,
    n: usize,
    status: SolveStatus,
    iterations: usize,
) -> ConeSolution {
    let it = Iterate {
        x: DVector::zeros(n),
        s: DVector::zeros(sf.h.len()),
        z: DVector::zeros(sf.h.len()),
        tau: 1.0,
        kappa: 1.0,
    };
    finish(program, sf, &it, status, iterations)
}

fn finish(
    program: &QuadraticConeProgram,
    sf: &StandardForm,
    it: &Iterate,
    status: SolveStatus,
    iterations: usize,
) -> ConeSolution {
    // Certificates are returned unscaled; solutions are de-homogenised.
    let scale = match status {
        SolveStatus::Infeasible | SolveStatus::Unbounded => 1.0,
        _ => 1.0 / it.tau,
    };
    let x = &it.x * scale;
    let z = &it.z * scale;
    let s = &it.s * scale;
    let px = &sf.p * &x;
    let primal = (&sf.g * &x + &s - &sf.h).amax_or_zero();
    let dual = (&px + sf.g.tr_mul(&z) + &sf.q).amax_or_zero();
    let pobj = 0.5 * x.dot(&px) + sf.q.dot(&x);
    let dobj = -0.5 * x.dot(&px) - sf.h.dot(&z);
    let ml = program.num_linear();
    let soc_duals = sf
        .cones
        .iter()
        .filter_map(|cone| match cone {
            Cone::Soc { .. } => Some(z.rows_range(cone.range()).into_owned()),
            Cone::Nonneg { .. } => None,
        })
        .collect();
    ConeSolution {
        status,
        objective: pobj + program.objective_offset,
        lin_duals: z.rows(0, ml).into_owned(),
        soc_duals,
        z: x,
        kkt_residuals: KktResiduals { primal, dual, gap: (pobj - dobj).abs() / pobj.abs().max(1.0) },
        iterations,
    }
}

/// Independently recomputed optimality conditions of a candidate solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖Pz + q + G_linᵀλ - Σ (c_j y_j0 + A_jᵀ y_j1)‖∞`.
    pub stationarity: f64,
    /// Largest violation of a linear row or cone constraint.
    pub primal_infeasibility: f64,
    /// Largest violation of `λ ≥ 0` and `y_j0 ≥ ‖y_j1‖`.
    pub dual_infeasibility: f64,
    /// Largest `|dual · slack|` per row or cone.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal_infeasibility).max(self.dual_infeasibility).max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn verify_kkt(program: &QuadraticConeProgram, solution: &ConeSolution) -> KktReport {
    let z = &solution.z;
    let mut grad = &program.p * z + &program.q + program.lin_g.tr_mul(&solution.lin_duals);
    let mut report = KktReport::default();
    let lin_slack = &program.lin_h - &program.lin_g * z;
    for (i, (slack, dual)) in lin_slack.iter().zip(solution.lin_duals.iter()).enumerate() {
        let _ = i;
        report.primal_infeasibility = report.primal_infeasibility.max(-slack);
        report.dual_infeasibility = report.dual_infeasibility.max(-dual);
        report.complementarity = report.complementarity.max((slack * dual).abs());
    }
    for (blk, y) in program.soc_blocks.iter().zip(&solution.soc_duals) {
        let y0 = y[0];
        let y1 = y.rows(1, y.len() - 1);
        grad -= &blk.c * y0 + blk.a.tr_mul(&y1);
        let u = &blk.a * z + &blk.b;
        let t = blk.c.dot(z) + blk.d;
        report.primal_infeasibility = report.primal_infeasibility.max(u.norm() - t);
        report.dual_infeasibility = report.dual_infeasibility.max(y1.norm() - y0);
        report.complementarity = report.complementarity.max((t * y0 + u.dot(&y1)).abs());
    }
    report.stationarity = grad.amax_or_zero();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk_program() -> QuadraticConeProgram {
        let mut prog = QuadraticConeProgram::new(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 1.0]));
        prog.add_soc(SocBlock { a: DMatrix::identity(2, 2), b: DVector::zeros(2), c: DVector::zeros(2), d: 1.0 });
        prog
    }

    #[test]
    fn unconstrained_quadratic() {
        let prog = QuadraticConeProgram::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0));
        let sol = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.z[0], -1.0, epsilon = 1e-8);
        assert_relative_eq!(sol.objective, -0.5, epsilon = 1e-8);
        assert!(verify_kkt(&prog, &sol).within(1e-7));
    }

    #[test]
    fn linear_objective_on_disk() {
        let prog = disk_program();
        let sol = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let h = -std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(sol.z[0], h, epsilon = 1e-7);
        assert_relative_eq!(sol.z[1], h, epsilon = 1e-7);
        assert_relative_eq!(sol.objective, -std::f64::consts::SQRT_2, epsilon = 1e-8);
        let r = sol.kkt_residuals;
        assert!(r.primal < 1e-7 && r.dual < 1e-7 && r.gap < 1e-7, "{r:?}");
        assert!(verify_kkt(&prog, &sol).within(1e-7));
    }

    #[test]
    fn active_linear_bound() {
        let mut prog = QuadraticConeProgram::new(DMatrix::zeros(1, 1), DVector::from_element(1, -1.0));
        prog.add_linear_row(&[1.0], 2.0);
        let sol = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.z[0], 2.0, epsilon = 1e-7);
        assert_relative_eq!(sol.lin_duals[0], 1.0, epsilon = 1e-7);
        assert!(verify_kkt(&prog, &sol).within(1e-7));
    }

    #[test]
    fn detects_primal_infeasibility() {
        let mut prog = QuadraticConeProgram::new(DMatrix::identity(1, 1), DVector::zeros(1));
        prog.add_linear_row(&[1.0], -1.0);
        prog.add_linear_row(&[-1.0], -1.0);
        let sol = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn detects_unboundedness() {
        let mut prog = QuadraticConeProgram::new(DMatrix::zeros(1, 1), DVector::from_element(1, -1.0));
        prog.add_linear_row(&[-1.0], 0.0);
        let sol = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn verify_kkt_flags_perturbation_and_zero_program() {
        let prog = QuadraticConeProgram::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0));
        let mut sol = solve(&prog, &SolverSettings::default()).unwrap();
        sol.z[0] += 0.1;
        assert!(verify_kkt(&prog, &sol).stationarity > 0.05);

        let zero = QuadraticConeProgram::new(DMatrix::zeros(1, 1), DVector::zeros(1));
        let trivial = ConeSolution {
            status: SolveStatus::Optimal,
            z: DVector::zeros(1),
            lin_duals: DVector::zeros(0),
            soc_duals: vec![],
            objective: 0.0,
            kkt_residuals: KktResiduals::default(),
            iterations: 0,
        };
        assert_eq!(verify_kkt(&zero, &trivial).max(), 0.0);
    }

    #[test]
    fn rejects_malformed_programs() {
        let indefinite = QuadraticConeProgram::new(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1));
        assert!(solve(&indefinite, &SolverSettings::default()).is_err());
        let wrong = QuadraticConeProgram::new(DMatrix::zeros(2, 2), DVector::zeros(1));
        assert!(solve(&wrong, &SolverSettings::default()).is_err());
    }

    #[test]
    fn solves_are_deterministic() {
        let prog = disk_program();
        let a = solve(&prog, &SolverSettings::default()).unwrap();
        let b = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(a, b);
    }

    fn random_soc_point(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
        let tail = DVector::from_fn(len - 1, |_, _| rng.random_range(-1.0..1.0));
        let head = tail.norm() + rng.random_range(0.01..1.0);
        stack(&DVector::from_element(1, head), &tail)
    }

    #[test]
    fn nt_scaling_maps_z_and_s_to_same_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cones = [Cone::Nonneg { offset: 0, len: 2 }, Cone::Soc { offset: 2, len: 4 }];
        for _ in 0..20 {
            let s = stack(&DVector::from_fn(2, |_, _| rng.random_range(0.1..2.0)), &random_soc_point(&mut rng, 4));
            let z = stack(&DVector::from_fn(2, |_, _| rng.random_range(0.1..2.0)), &random_soc_point(&mut rng, 4));
            let (w, w_inv) = nt_scaling(&cones, &s, &z);
            assert!((&w * &z - &w_inv * &s).amax() < 1e-10);
            assert!((&w * &w_inv - DMatrix::identity(6, 6)).amax() < 1e-10);
            assert_eq!(w, w.transpose());
        }
    }

    #[test]
    fn jordan_division_inverts_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cones = [Cone::Nonneg { offset: 0, len: 1 }, Cone::Soc { offset: 1, len: 3 }];
        let lambda = stack(&DVector::from_element(1, 0.7), &random_soc_point(&mut rng, 3));
        let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let d = jordan_product(&cones, &lambda, &x);
        assert!((jordan_divide(&cones, &lambda, &d) - x).amax() < 1e-12);
    }

    #[test]
    fn step_length_hits_cone_boundary() {
        let cones = [Cone::Soc { offset: 0, len: 2 }];
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let du = DVector::from_vec(vec![0.0, 1.0]);
        assert_relative_eq!(max_step(&cones, &u, &du), 1.0, epsilon = 1e-14);
        let inward = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(max_step(&cones, &u, &inward), f64::INFINITY);
        let orthant = [Cone::Nonneg { offset: 0, len: 2 }];
        let d = DVector::from_vec(vec![-0.5, 1.0]);
        assert_relative_eq!(max_step(&orthant, &DVector::from_vec(vec![1.0, 1.0]), &d), 2.0);
    }

    #[test]
    fn degenerate_zero_cost_epigraph() {
        // min ½p² + p with a free epigraph variable: ‖(1, p)‖ ≤ b, b ≥ 0
        let mut p = DMatrix::zeros(2, 2);
        p[(0, 0)] = 1.0;
        let mut prog = QuadraticConeProgram::new(p, DVector::from_vec(vec![1.0, 0.0]));
        prog.add_linear_row(&[0.0, -1.0], 0.0);
        prog.add_soc(SocBlock {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            b: DVector::from_vec(vec![1.0, 0.0]),
            c: DVector::from_vec(vec![0.0, 1.0]),
            d: 0.0,
        });
        let sol = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, -0.5, epsilon = 1e-7);
        assert!((sol.z[0] + 1.0).abs() < 1e-5);
    }
}
