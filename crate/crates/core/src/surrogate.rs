//! Second-order Gaussian-process surrogate.
//!
//! A [`FittedGP`] is built once per model and iteration; the Gram matrix is
//! factorised a single time and reused for the value, gradient and Hessian
//! posteriors at any query point. Inputs live in the unit cube and targets
//! are standardized before fitting, so every posterior moment returned here is
//! in standardized output units (see [`Standardization`]).
//!
//! Hyperparameters are either frozen or learnt by maximising the log marginal
//! likelihood over log-lengthscales and log-output-scale with a projected
//! BFGS ascent; the noise variance is never learnt.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::KernelHyperparameters;
use crate::linalg::{jittered_cholesky, symmetrize, JITTER_LADDER};
use crate::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Observations of one black-box function in normalized coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidArgument(format!("{} inputs but {} targets", inputs.len(), targets.len())));
        }
        let mut data = Self::default();
        for (x, y) in inputs.into_iter().zip(targets) {
            data.push(x, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if let Some(first) = self.inputs.first() {
            if first.len() != x.len() {
                return Err(Error::InvalidArgument(format!(
                    "input of dimension {} added to dataset of dimension {}",
                    x.len(),
                    first.len()
                )));
            }
        }
        if x.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
            return Err(Error::InvalidArgument(format!("input {x:?} outside the unit cube")));
        }
        if !y.is_finite() {
            return Err(Error::InvalidArgument("target must be finite".into()));
        }
        self.inputs.push(x);
        self.targets.push(y);
        Ok(())
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }
}

/// Affine output transform `y_std = (y - mean) / std`.
///
/// `std` is the sample standard deviation (divisor `n - 1`), clamped below at
/// `1e-8`; a single observation uses `std = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

/// Lower clamp on the standardization scale.
pub const STD_FLOOR: f64 = 1e-8;

impl Standardization {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    /// True when the targets were constant up to [`STD_FLOOR`].
    pub fn is_constant(&self) -> bool {
        self.std <= STD_FLOOR
    }

    pub fn from_targets(targets: &[f64]) -> Self {
        let n = targets.len();
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = targets.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, std: 1.0 };
        }
        let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1) as f64;
        Self { mean, std: var.sqrt().max(STD_FLOOR) }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert(&self, y_std: f64) -> f64 {
        y_std * self.std + self.mean
    }
}

/// How kernel hyperparameters are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum HyperMode {
    Frozen(KernelHyperparameters),
    Learn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: HyperMode,
    /// Fixed noise variance used in learn mode.
    pub noise_variance: f64,
    /// Lengthscale box; `None` means `[0.001, 2d]`.
    pub lengthscale_bounds: Option<(f64, f64)>,
    pub output_scale_bounds: (f64, f64),
    /// Number of ascent starts in learn mode without a warm start.
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Start the ascent from these hyperparameters only.
    pub warm_start: Option<KernelHyperparameters>,
}

impl FitConfig {
    pub fn frozen(hyper: KernelHyperparameters) -> Self {
        Self { mode: HyperMode::Frozen(hyper), ..Self::learn(0) }
    }

    pub fn learn(seed: u64) -> Self {
        Self {
            mode: HyperMode::Learn,
            noise_variance: 1e-4,
            lengthscale_bounds: None,
            output_scale_bounds: (0.05, 20.0),
            restarts: 4,
            max_iters: 100,
            seed,
            warm_start: None,
        }
    }
}

/// A GP conditioned on a dataset, ready for posterior queries.
#[derive(Clone, Debug)]
pub struct FittedGP {
    dataset: Dataset,
    hyper: KernelHyperparameters,
    standardization: Standardization,
    /// Lower Cholesky factor of `k(X, X) + (σ² + jitter) I`.
    gram_cholesky: DMatrix<f64>,
    jitter: f64,
    /// `K⁻¹ y_std` (zero prior mean).
    alpha: DVector<f64>,
}

/// Posterior moments of `(f, ∇f)` and the Hessian mean at one point, in
/// standardized output units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPosterior {
    pub x: Vec<f64>,
    pub mu_f: f64,
    pub var_f: f64,
    pub mu_grad: DVector<f64>,
    pub cov_grad: DMatrix<f64>,
    /// `Cov[∇f, f]`.
    pub cov_grad_f: DVector<f64>,
    pub mu_hess: DMatrix<f64>,
    pub standardization: Standardization,
}

impl JointPosterior {
    pub fn dim(&self) -> usize {
        self.mu_grad.len()
    }

    /// Raw value `0` expressed in this model's standardized units.
    pub fn standardized_zero(&self) -> f64 {
        self.standardization.apply(0.0)
    }

    /// The same moments in raw output units.
    pub fn destandardized(&self) -> JointPosterior {
        let s = self.standardization.std;
        JointPosterior {
            x: self.x.clone(),
            mu_f: self.standardization.invert(self.mu_f),
            var_f: self.var_f * s * s,
            mu_grad: &self.mu_grad * s,
            cov_grad: &self.cov_grad * (s * s),
            cov_grad_f: &self.cov_grad_f * (s * s),
            mu_hess: &self.mu_hess * s,
            standardization: Standardization::IDENTITY,
        }
    }
}

/// Fit a GP to `dataset`, learning hyperparameters if requested.
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<FittedGP> {
    let dim = dataset.dim().ok_or_else(|| Error::InvalidArgument("cannot fit a GP to an empty dataset".into()))?;
    let standardization = Standardization::from_targets(dataset.targets());
    let y = DVector::from_iterator(dataset.len(), dataset.targets().iter().map(|&t| standardization.apply(t)));
    let hyper = match &config.mode {
        HyperMode::Frozen(h) => {
            if h.dim() != dim {
                return Err(Error::InvalidArgument(format!(
                    "hyperparameters of dimension {} for data of dimension {dim}",
                    h.dim()
                )));
            }
            h.clone()
        }
        HyperMode::Learn => learn_hyperparameters(dataset.inputs(), &y, config)?,
    };
    condition(dataset.clone(), hyper, standardization, y)
}

fn condition(
    dataset: Dataset,
    hyper: KernelHyperparameters,
    standardization: Standardization,
    y: DVector<f64>,
) -> Result<FittedGP> {
    let gram = gram_matrix(dataset.inputs(), &hyper);
    let (chol, jitter) = jittered_cholesky(&gram, &JITTER_LADDER)?;
    let alpha = chol.solve(&y);
    Ok(FittedGP { dataset, hyper, standardization, gram_cholesky: chol.l(), jitter, alpha })
}

fn gram_matrix(inputs: &[Vec<f64>], hyper: &KernelHyperparameters) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hyper.output_scale + hyper.noise_variance;
        for j in 0..i {
            let v = hyper.value_unchecked(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Log marginal likelihood of the standardized targets of `dataset`.
pub fn log_marginal_likelihood(dataset: &Dataset, hyper: &KernelHyperparameters) -> Result<f64> {
    let standardization = Standardization::from_targets(dataset.targets());
    let y = DVector::from_iterator(dataset.len(), dataset.targets().iter().map(|&t| standardization.apply(t)));
    mll_standardized(dataset.inputs(), &y, hyper)
}

pub(crate) fn mll_standardized(inputs: &[Vec<f64>], y: &DVector<f64>, hyper: &KernelHyperparameters) -> Result<f64> {
    let gram = gram_matrix(inputs, hyper);
    let (chol, _) = jittered_cholesky(&gram, &JITTER_LADDER)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * y.len() as f64 * LN_2PI)
}

/// Pairwise squared differences per input dimension, shared by every MLL
/// evaluation of one fit.
struct SquaredDiffs {
    per_dim: Vec<DMatrix<f64>>,
}

impl SquaredDiffs {
    fn new(inputs: &[Vec<f64>]) -> Self {
        let n = inputs.len();
        let d = inputs.first().map_or(0, Vec::len);
        let per_dim = (0..d)
            .map(|k| {
                DMatrix::from_fn(n, n, |i, j| {
                    let t = inputs[i][k] - inputs[j][k];
                    t * t
                })
            })
            .collect();
        Self { per_dim }
    }
}

/// Log marginal likelihood and its gradient with respect to
/// `(log ℓ₁, …, log ℓ_d, log s²)`; `None` if the Gram matrix cannot be factorised.
fn mll_and_gradient(diffs: &SquaredDiffs, y: &DVector<f64>, theta: &[f64], noise: f64) -> Option<(f64, Vec<f64>)> {
    let d = diffs.per_dim.len();
    let n = y.len();
    let inv_l2: Vec<f64> = theta[..d].iter().map(|t| (-2.0 * t).exp()).collect();
    let scale = theta[d].exp();
    let mut kse = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let r2: f64 = (0..d).map(|k| diffs.per_dim[k][(i, j)] * inv_l2[k]).sum();
            let v = scale * (-0.5 * r2).exp();
            kse[(i, j)] = v;
            kse[(j, i)] = v;
        }
    }
    let mut gram = kse.clone();
    for i in 0..n {
        gram[(i, i)] += noise;
    }
    let (chol, _) = jittered_cholesky(&gram, &JITTER_LADDER).ok()?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
    if !value.is_finite() {
        return None;
    }
    // W = α αᵀ - K⁻¹; dL/dθ = ½ tr(W ∂K/∂θ)
    let mut w = chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let mut grad = vec![0.0; d + 1];
    for j in 0..n {
        for i in 0..n {
            let wk = w[(i, j)] * kse[(i, j)];
            grad[d] += wk;
            for k in 0..d {
                grad[k] += wk * diffs.per_dim[k][(i, j)] * inv_l2[k];
            }
        }
    }
    for g in &mut grad {
        *g *= 0.5;
    }
    Some((value, grad))
}

fn learn_hyperparameters(inputs: &[Vec<f64>], y: &DVector<f64>, config: &FitConfig) -> Result<KernelHyperparameters> {
    let d = inputs[0].len();
    let (l_lo, l_hi) =
        config.lengthscale_bounds.unwrap_or_else(|| KernelHyperparameters::default_lengthscale_bounds(d));
    let (s_lo, s_hi) = config.output_scale_bounds;
    let mut lower = vec![l_lo.ln(); d];
    let mut upper = vec![l_hi.ln(); d];
    lower.push(s_lo.ln());
    upper.push(s_hi.ln());
    let clamp = |theta: &mut [f64]| {
        for (t, (lo, hi)) in theta.iter_mut().zip(lower.iter().zip(&upper)) {
            *t = t.clamp(*lo, *hi);
        }
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(warm) = &config.warm_start {
        let mut t: Vec<f64> = warm.lengthscales.iter().map(|l| l.ln()).collect();
        t.push(warm.output_scale.ln());
        starts.push(t);
    } else {
        let mut init = vec![(d as f64).sqrt().ln(); d];
        init.push(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for s in 0..config.restarts.max(1) {
            let start =
                if s == 0 { init.clone() } else { init.iter().map(|t| t + rng.random_range(-1.5..1.5)).collect() };
            starts.push(start);
        }
    }

    let diffs = SquaredDiffs::new(inputs);
    let objective = |theta: &[f64]| mll_and_gradient(&diffs, y, theta, config.noise_variance);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mut start in starts {
        clamp(&mut start);
        if let Some((value, theta)) = projected_bfgs_ascent(&objective, start, &lower, &upper, config.max_iters) {
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, theta));
            }
        }
    }
    let (_, theta) = best.ok_or(Error::NotPositiveDefinite { ladder: JITTER_LADDER.to_vec() })?;
    KernelHyperparameters::new(theta[..d].iter().map(|t| t.exp()).collect(), theta[d].exp(), config.noise_variance)
}

/// Maximise `objective` over the box `[lower, upper]` with BFGS steps projected
/// onto the box and an Armijo backtracking line search.
fn projected_bfgs_ascent(
    objective: &impl Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    start: Vec<f64>,
    lower: &[f64],
    upper: &[f64],
    max_iters: usize,
) -> Option<(f64, Vec<f64>)> {
    let n = start.len();
    let project = |v: &mut DVector<f64>| {
        for i in 0..n {
            v[i] = v[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = DVector::from_vec(start);
    let (mut fx, g) = objective(x.as_slice())?;
    // Work with the minimisation of -objective.
    let mut grad = -DVector::from_vec(g);
    let mut h_inv = DMatrix::<f64>::identity(n, n);

    for _ in 0..max_iters {
        let mut projected = grad.clone();
        for i in 0..n {
            let at_lower = x[i] <= lower[i] + 1e-12 && grad[i] > 0.0;
            let at_upper = x[i] >= upper[i] - 1e-12 && grad[i] < 0.0;
            if at_lower || at_upper {
                projected[i] = 0.0;
            }
        }
        if projected.amax() < 1e-5 {
            break;
        }
        let mut dir = -(&h_inv * &projected);
        if dir.dot(&projected) >= 0.0 {
            h_inv.fill_with_identity();
            dir = -projected.clone();
        }
        let longest = dir.amax();
        if longest > 2.0 {
            dir *= 2.0 / longest;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial = &x + &dir * step;
            project(&mut trial);
            let moved = &trial - &x;
            if moved.amax() < 1e-12 {
                break;
            }
            if let Some((ft, gt)) = objective(trial.as_slice()) {
                // ascent on the objective == descent on its negative
                if ft >= fx - 1e-4 * grad.dot(&moved) {
                    accepted = Some((trial, ft, -DVector::from_vec(gt)));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, grad_new)) = accepted else {
            break;
        };
        let s = &x_new - &x;
        let yv = &grad_new - &grad;
        let sy = s.dot(&yv);
        if sy > 1e-10 {
            let rho = 1.0 / sy;
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            // H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            h_inv.ger(-rho, &hy, &s, 1.0);
            h_inv.ger(-rho, &s, &hy, 1.0);
            h_inv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        }
        let improvement = f_new - fx;
        x = x_new;
        fx = f_new;
        grad = grad_new;
        if improvement.abs() < 1e-10 * (1.0 + fx.abs()) {
            break;
        }
    }
    Some((fx, x.iter().copied().collect()))
}

impl FittedGP {
    /// A GP with no observations: posterior equals prior.
    pub fn prior(hyper: KernelHyperparameters) -> Self {
        Self {
            dataset: Dataset::default(),
            hyper,
            standardization: Standardization::IDENTITY,
            gram_cholesky: DMatrix::zeros(0, 0),
            jitter: 0.0,
            alpha: DVector::zeros(0),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn hyper(&self) -> &KernelHyperparameters {
        &self.hyper
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn gram_cholesky(&self) -> &DMatrix<f64> {
        &self.gram_cholesky
    }

    /// Diagonal jitter that was needed on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "query point {x:?} does not match GP dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn cross_kernel(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let inputs = self.dataset.inputs();
        DMatrix::from_fn(inputs.len(), points.len(), |i, j| self.hyper.value_unchecked(&inputs[i], &points[j]))
    }

    /// Posterior mean vector and covariance matrix of `f` at several points.
    pub fn posterior_mean_cov(&self, points: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        for p in points {
            self.check_point(p)?;
        }
        let m = points.len();
        let mut cov = DMatrix::from_fn(m, m, |i, j| self.hyper.value_unchecked(&points[i], &points[j]));
        if self.dataset.is_empty() {
            return Ok((DVector::zeros(m), cov));
        }
        let kx = self.cross_kernel(points);
        let mean = kx.tr_mul(&self.alpha);
        let v = self
            .gram_cholesky
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::Numerical("singular Gram factor".into()))?;
        cov -= v.tr_mul(&v);
        symmetrize(&mut cov);
        Ok((mean, cov))
    }
}

/// Posterior mean and variance of `f(x)`, standardized units.
pub fn posterior_f(gp: &FittedGP, x: &[f64]) -> Result<(f64, f64)> {
    let (mean, cov) = gp.posterior_mean_cov(&[x.to_vec()])?;
    Ok((mean[0], cov[(0, 0)].max(0.0)))
}

/// Joint posterior over `f(x)`, `∇f(x)` and the Hessian mean at `x`.
pub fn posterior_joint(gp: &FittedGP, x: &[f64]) -> Result<JointPosterior> {
    gp.check_point(x)?;
    let d = gp.dim();
    let hyper = &gp.hyper;
    let inputs = gp.dataset.inputs();
    let n = inputs.len();
    let inv_l2: Vec<f64> = hyper.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();

    let mut kvec = DVector::zeros(n);
    // Gᵀ, one row per training point: ∇ₓ k(x, x_j)ᵀ
    let mut grads_t = DMatrix::zeros(n, d);
    let mut mu_hess = DMatrix::zeros(d, d);
    let mut weight_sum = 0.0;
    let mut scaled = vec![0.0; d];
    for (j, xj) in inputs.iter().enumerate() {
        let k = hyper.value_and_scaled_diff(x, xj, &mut scaled);
        kvec[j] = k;
        for i in 0..d {
            grads_t[(j, i)] = -k * scaled[i];
        }
        let w = gp.alpha[j] * k;
        weight_sum += w;
        for a in 0..d {
            for b in 0..d {
                mu_hess[(a, b)] += w * scaled[a] * scaled[b];
            }
        }
    }
    for a in 0..d {
        mu_hess[(a, a)] -= weight_sum * inv_l2[a];
    }
    symmetrize(&mut mu_hess);

    let mut cov_grad =
        DMatrix::from_diagonal(&DVector::from_iterator(d, inv_l2.iter().map(|v| hyper.output_scale * v)));
    let (mu_f, mu_grad, var_f, cov_grad_f) = if n == 0 {
        (0.0, DVector::zeros(d), hyper.output_scale, DVector::zeros(d))
    } else {
        let mu_f = kvec.dot(&gp.alpha);
        let mu_grad = grads_t.tr_mul(&gp.alpha);
        let l = &gp.gram_cholesky;
        let v = l.solve_lower_triangular(&kvec).ok_or_else(|| Error::Numerical("singular Gram factor".into()))?;
        let u = l.solve_lower_triangular(&grads_t).ok_or_else(|| Error::Numerical("singular Gram factor".into()))?;
        cov_grad -= u.tr_mul(&u);
        let cov_grad_f = -u.tr_mul(&v);
        let var_f = (hyper.output_scale - v.dot(&v)).max(0.0);
        (mu_f, mu_grad, var_f, cov_grad_f)
    };
    symmetrize(&mut cov_grad);
    Ok(JointPosterior {
        x: x.to_vec(),
        mu_f,
        var_f,
        mu_grad,
        cov_grad,
        cov_grad_f,
        mu_hess,
        standardization: gp.standardization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let targets = inputs
            .iter()
            .map(|x| x.iter().enumerate().map(|(i, v)| ((i + 1) as f64 * 3.0 * v).sin()).sum::<f64>())
            .collect();
        Dataset::new(inputs, targets).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![0.5]], vec![]).is_err());
        assert!(Dataset::new(vec![vec![1.5]], vec![0.0]).is_err());
        assert!(Dataset::new(vec![vec![0.5], vec![0.1, 0.2]], vec![0.0, 1.0]).is_err());
        assert!(Dataset::new(vec![vec![0.5]], vec![f64::NAN]).is_err());
        let d = Dataset::new(vec![vec![0.5, 0.5]], vec![1.0]).unwrap();
        assert_eq!(d.dim(), Some(2));
        assert!(fit(&Dataset::default(), &FitConfig::learn(0)).is_err());
    }

    #[test]
    fn standardization_uses_sample_std() {
        let s = Standardization::from_targets(&[10.0, 12.0, 14.0]);
        assert_eq!(s.mean, 12.0);
        assert_relative_eq!(s.std, 2.0, max_relative = 1e-15);
        let z: Vec<f64> = [10.0, 12.0, 14.0].iter().map(|&y| s.apply(y)).collect();
        assert_relative_eq!(z.as_slice(), [-1.0, 0.0, 1.0].as_slice(), epsilon = 1e-15);
        assert_eq!(Standardization::from_targets(&[3.0]).std, 1.0);
        assert_eq!(Standardization::from_targets(&[3.0, 3.0]).std, 1e-8);
        assert_relative_eq!(s.invert(s.apply(17.5)), 17.5, max_relative = 1e-15);
    }

    #[test]
    fn single_point_conditioning() {
        let hyper = KernelHyperparameters::isotropic(2, 0.3, 1.0, 1e-4).unwrap();
        let data = Dataset::new(vec![vec![0.4, 0.6]], vec![5.0]).unwrap();
        let gp = fit(&data, &FitConfig::frozen(hyper)).unwrap();
        // one point standardizes to 0
        assert_eq!(gp.alpha()[0], 0.0);
        let (mu, var) = posterior_f(&gp, &[0.4, 0.6]).unwrap();
        assert_relative_eq!(gp.standardization().invert(mu), 5.0, epsilon = 1e-12);
        assert!(var < 2e-4);

        // prior with raw (unstandardized) target 1: alpha = y / (1 + σ²)
        let mut manual = FittedGP::prior(KernelHyperparameters::isotropic(1, 0.3, 1.0, 1e-4).unwrap());
        let d1 = Dataset::new(vec![vec![0.2]], vec![1.0]).unwrap();
        manual = condition(d1, manual.hyper.clone(), Standardization::IDENTITY, DVector::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(manual.alpha()[0], 1.0 / (1.0 + 1e-4), max_relative = 1e-14);
        let (mu, _) = posterior_f(&manual, &[0.2]).unwrap();
        assert!((mu - 1.0).abs() < 1e-4 * 1.01);
    }

    #[test]
    fn mll_closed_forms() {
        let hyper = KernelHyperparameters::isotropic(1, 1.0, 1.0, 0.0).unwrap();
        let x = vec![vec![0.5]];
        let v0 = mll_standardized(&x, &DVector::from_vec(vec![0.0]), &hyper).unwrap();
        assert_relative_eq!(v0, -0.9189385332046727, max_relative = 1e-14);
        let v1 = mll_standardized(&x, &DVector::from_vec(vec![1.0]), &hyper).unwrap();
        assert_relative_eq!(v1, -1.4189385332046727, max_relative = 1e-14);
        let data = Dataset::new(x, vec![4.0]).unwrap();
        assert_relative_eq!(log_marginal_likelihood(&data, &hyper).unwrap(), v0, max_relative = 1e-14);
    }

    #[test]
    fn mll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_dataset(&mut rng, 15, 3);
        let s = Standardization::from_targets(data.targets());
        let y = DVector::from_iterator(15, data.targets().iter().map(|&t| s.apply(t)));
        let diffs = SquaredDiffs::new(data.inputs());
        let theta = vec![-1.0, -0.5, 0.2, 0.3];
        let (v, g) = mll_and_gradient(&diffs, &y, &theta, 1e-4).unwrap();
        let hyper =
            KernelHyperparameters::new(theta[..3].iter().map(|t| t.exp()).collect(), theta[3].exp(), 1e-4).unwrap();
        assert_relative_eq!(v, mll_standardized(data.inputs(), &y, &hyper).unwrap(), max_relative = 1e-10);
        for i in 0..4 {
            let h = 1e-6;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (mll_and_gradient(&diffs, &y, &tp, 1e-4).unwrap().0
                - mll_and_gradient(&diffs, &y, &tm, 1e-4).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn learning_does_not_decrease_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_dataset(&mut rng, 25, 2);
        let gp = fit(&data, &FitConfig::learn(1)).unwrap();
        let init = KernelHyperparameters::isotropic(2, 2f64.sqrt(), 1.0, 1e-4).unwrap();
        let learned = log_marginal_likelihood(&data, gp.hyper()).unwrap();
        assert!(learned >= log_marginal_likelihood(&data, &init).unwrap());
        let (lo, hi) = KernelHyperparameters::default_lengthscale_bounds(2);
        assert!(gp.hyper().lengthscales.iter().all(|l| (lo..=hi).contains(l)));
        assert_eq!(gp.hyper().noise_variance, 1e-4);
    }

    #[test]
    fn cholesky_and_alpha_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_dataset(&mut rng, 30, 4);
        let hyper = KernelHyperparameters::isotropic(4, 0.4, 1.0, 1e-4).unwrap();
        let gp = fit(&data, &FitConfig::frozen(hyper.clone())).unwrap();
        let k = gram_matrix(data.inputs(), &hyper);
        let l = gp.gram_cholesky();
        let rebuilt = l * l.transpose();
        let rel = (&rebuilt - &k).norm() / k.norm();
        assert!(rel < 1e-8 + gp.jitter() * 30.0);
        let s = gp.standardization();
        let y = DVector::from_iterator(30, data.targets().iter().map(|&t| s.apply(t)));
        assert!((&k * gp.alpha() - y).norm() < 1e-6);
    }

    #[test]
    fn prior_reversion_far_from_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs: Vec<Vec<f64>> =
            (0..10).map(|_| vec![rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1]).collect();
        let targets = (0..10).map(|i| i as f64).collect();
        let data = Dataset::new(inputs, targets).unwrap();
        let hyper = KernelHyperparameters::isotropic(2, 0.05, 1.7, 1e-4).unwrap();
        let gp = fit(&data, &FitConfig::frozen(hyper)).unwrap();
        let (mu, var) = posterior_f(&gp, &[1.0, 1.0]).unwrap();
        assert!(mu.abs() < 1e-6);
        assert!((var - 1.7).abs() < 1e-6);
    }

    #[test]
    fn near_interpolation_at_training_points() {
        let inputs = vec![vec![0.1, 0.1], vec![0.5, 0.9], vec![0.9, 0.3], vec![0.4, 0.4]];
        let data = Dataset::new(inputs.clone(), vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let hyper = KernelHyperparameters::isotropic(2, 0.2, 1.0, 1e-4).unwrap();
        let gp = fit(&data, &FitConfig::frozen(hyper)).unwrap();
        let s = gp.standardization();
        for (x, y) in inputs.iter().zip(data.targets()) {
            let (mu, _) = posterior_f(&gp, x).unwrap();
            assert!((mu - s.apply(*y)).abs() < 1e-3);
        }
    }

    #[test]
    fn posterior_agrees_with_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = random_dataset(&mut rng, 20, 3);
        let hyper = KernelHyperparameters::isotropic(3, 0.5, 1.2, 1e-3).unwrap();
        let gp = fit(&data, &FitConfig::frozen(hyper.clone())).unwrap();
        let k = gram_matrix(data.inputs(), &hyper);
        let s = gp.standardization();
        let y = DVector::from_iterator(20, data.targets().iter().map(|&t| s.apply(t)));
        let lu = k.clone().lu();
        let x = vec![0.3, 0.6, 0.2];
        let kx =
            DVector::from_iterator(20, data.inputs().iter().map(|xi| crate::kernel::eval_k(&x, xi, &hyper).unwrap()));
        let mu_ref = kx.dot(&lu.solve(&y).unwrap());
        let var_ref = 1.2 - kx.dot(&lu.solve(&kx).unwrap());
        let (mu, var) = posterior_f(&gp, &x).unwrap();
        assert!((mu - mu_ref).abs() < 1e-8);
        assert!((var - var_ref).abs() < 1e-8);
    }

    #[test]
    fn empty_prior_moments() {
        let hyper = KernelHyperparameters::new(vec![0.5, 2.0], 3.0, 1e-4).unwrap();
        let gp = FittedGP::prior(hyper);
        let jp = posterior_joint(&gp, &[0.3, 0.8]).unwrap();
        assert_eq!(jp.mu_f, 0.0);
        assert_eq!(jp.var_f, 3.0);
        assert_eq!(jp.mu_grad, DVector::zeros(2));
        assert_relative_eq!(jp.cov_grad, DMatrix::from_diagonal(&DVector::from_vec(vec![12.0, 0.75])), epsilon = 1e-14);
        assert_eq!(jp.cov_grad_f, DVector::zeros(2));
        assert_eq!(jp.mu_hess, DMatrix::zeros(2, 2));
    }

    #[test]
    fn joint_covariance_factorises() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = random_dataset(&mut rng, 12, 3);
        let hyper = KernelHyperparameters::isotropic(3, 0.3, 1.0, 1e-4).unwrap();
        let gp = fit(&data, &FitConfig::frozen(hyper)).unwrap();
        for x in [data.inputs()[0].clone(), vec![0.5, 0.5, 0.5], vec![0.99, 0.01, 0.5]] {
            let jp = posterior_joint(&gp, &x).unwrap();
            let d = jp.dim();
            let mut full = DMatrix::zeros(d + 1, d + 1);
            full[(0, 0)] = jp.var_f;
            for i in 0..d {
                full[(0, i + 1)] = jp.cov_grad_f[i];
                full[(i + 1, 0)] = jp.cov_grad_f[i];
                for j in 0..d {
                    full[(i + 1, j + 1)] = jp.cov_grad[(i, j)];
                }
            }
            assert!(jittered_cholesky(&full, &JITTER_LADDER).is_ok());
            assert_eq!(jp.cov_grad, jp.cov_grad.transpose());
            assert_eq!(jp.mu_hess, jp.mu_hess.transpose());
        }
    }

    #[test]
    fn destandardization_scales_moments() {
        let data = Dataset::new(vec![vec![0.1], vec![0.5], vec![0.9]], vec![1.0, 3.0, 2.0]).unwrap();
        let hyper = KernelHyperparameters::isotropic(1, 0.3, 1.0, 1e-4).unwrap();
        let gp = fit(&data, &FitConfig::frozen(hyper)).unwrap();
        let jp = posterior_joint(&gp, &[0.4]).unwrap();
        let raw = jp.destandardized();
        let s = jp.standardization.std;
        assert_relative_eq!(raw.mu_f, jp.mu_f * s + 2.0, max_relative = 1e-14);
        assert_relative_eq!(raw.mu_grad[0], jp.mu_grad[0] * s, max_relative = 1e-14);
        assert_relative_eq!(raw.cov_grad[(0, 0)], jp.cov_grad[(0, 0)] * s * s, max_relative = 1e-14);
        assert_relative_eq!(jp.standardized_zero(), -2.0 / s, max_relative = 1e-14);
    }
}
