//! Squared-exponential (ARD) kernel
//!
//! `k(x, x') = s² · exp(-½ Σᵢ (xᵢ - x'ᵢ)² / ℓᵢ²)`
//!
//! together with the derivative blocks needed by the joint posterior over a
//! function, its gradient and its Hessian mean. With `Λ = diag(ℓᵢ²)` and
//! `δ = x - x'`:
//!
//! * `∇ₓ k = -k Λ⁻¹ δ`
//! * `∂²k / ∂x ∂x'ᵀ = k (Λ⁻¹ - Λ⁻¹ δ δᵀ Λ⁻¹)`, the prior `Cov[∇f(x), ∇f(x')]`
//! * `∂²k / ∂x ∂xᵀ = k (Λ⁻¹ δ δᵀ Λ⁻¹ - Λ⁻¹)`
//!
//! Third and fourth order blocks are never formed: only the Hessian mean is
//! used downstream.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Kernel hyperparameters in normalized-input units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparameters {
    /// Per-dimension lengthscales `ℓᵢ`.
    pub lengthscales: Vec<f64>,
    /// Signal variance `s²`.
    pub output_scale: f64,
    /// Observation noise variance added to the Gram diagonal.
    pub noise_variance: f64,
}

impl KernelHyperparameters {
    pub fn new(lengthscales: Vec<f64>, output_scale: f64, noise_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::InvalidArgument("kernel needs at least one lengthscale".into()));
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be finite and positive, got {lengthscales:?}"
            )));
        }
        if !(output_scale.is_finite() && output_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("output scale must be positive, got {output_scale}")));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise variance must be nonnegative, got {noise_variance}")));
        }
        Ok(Self { lengthscales, output_scale, noise_variance })
    }

    /// Same lengthscale in every dimension.
    pub fn isotropic(dim: usize, lengthscale: f64, output_scale: f64, noise_variance: f64) -> Result<Self> {
        Self::new(vec![lengthscale; dim], output_scale, noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Default lengthscale bounds `[0.001, 2d]` for a `dim`-dimensional input.
    pub fn default_lengthscale_bounds(dim: usize) -> (f64, f64) {
        (1e-3, 2.0 * dim as f64)
    }

    fn check(&self, x: &[f64], x2: &[f64]) -> Result<()> {
        let d = self.dim();
        if x.len() != d || x2.len() != d {
            return Err(Error::InvalidArgument(format!(
                "kernel expects points of dimension {d}, got {} and {}",
                x.len(),
                x2.len()
            )));
        }
        if x.iter().chain(x2).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel inputs must be finite".into()));
        }
        Ok(())
    }

    pub(crate) fn value_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((a, b), l) in x.iter().zip(x2).zip(&self.lengthscales) {
            let t = (a - b) / l;
            r2 += t * t;
        }
        self.output_scale * (-0.5 * r2).exp()
    }

    /// `k` and `Λ⁻¹ (x - x')`.
    pub(crate) fn value_and_scaled_diff(&self, x: &[f64], x2: &[f64], scaled: &mut [f64]) -> f64 {
        let mut r2 = 0.0;
        for i in 0..x.len() {
            let l2 = self.lengthscales[i] * self.lengthscales[i];
            let diff = x[i] - x2[i];
            r2 += diff * diff / l2;
            scaled[i] = diff / l2;
        }
        self.output_scale * (-0.5 * r2).exp()
    }
}

/// Kernel value `k(x, x2)`.
pub fn eval_k(x: &[f64], x2: &[f64], hyper: &KernelHyperparameters) -> Result<f64> {
    hyper.check(x, x2)?;
    Ok(hyper.value_unchecked(x, x2))
}

/// Gradient of `k(x, x2)` with respect to its first argument.
pub fn grad_k(x: &[f64], x2: &[f64], hyper: &KernelHyperparameters) -> Result<DVector<f64>> {
    hyper.check(x, x2)?;
    let mut scaled = vec![0.0; x.len()];
    let k = hyper.value_and_scaled_diff(x, x2, &mut scaled);
    Ok(DVector::from_iterator(x.len(), scaled.iter().map(|s| -k * s)))
}

/// Mixed second derivative `∂²k / ∂x ∂x2ᵀ`, the prior gradient cross-covariance.
pub fn cross_hess_k(x: &[f64], x2: &[f64], hyper: &KernelHyperparameters) -> Result<DMatrix<f64>> {
    hyper.check(x, x2)?;
    let d = x.len();
    let mut scaled = vec![0.0; d];
    let k = hyper.value_and_scaled_diff(x, x2, &mut scaled);
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let diag = if i == j { 1.0 / (hyper.lengthscales[i] * hyper.lengthscales[i]) } else { 0.0 };
        k * (diag - scaled[i] * scaled[j])
    }))
}

/// Second derivative `∂²k / ∂x ∂xᵀ` in the first argument.
pub fn hess_k(x: &[f64], x2: &[f64], hyper: &KernelHyperparameters) -> Result<DMatrix<f64>> {
    Ok(-cross_hess_k(x, x2, hyper)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn iso(d: usize, l: f64) -> KernelHyperparameters {
        KernelHyperparameters::isotropic(d, l, 1.0, 0.0).unwrap()
    }

    // Central finite differences, used only as an independent oracle.
    fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn value_at_identical_inputs_is_output_scale() {
        let h = iso(3, 0.4);
        assert_eq!(eval_k(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], &h).unwrap(), 1.0);
        let h2 = KernelHyperparameters::isotropic(1, 1.0, 2.5, 0.0).unwrap();
        assert_eq!(eval_k(&[0.7], &[0.7], &h2).unwrap(), 2.5);
    }

    #[test]
    fn closed_form_values() {
        assert_relative_eq!(eval_k(&[0.0], &[1.0], &iso(1, 1.0)).unwrap(), (-0.5f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(
            eval_k(&[0.0, 0.0], &[3.0, 4.0], &iso(2, 1.0)).unwrap(),
            (-12.5f64).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            eval_k(&[0.0, 0.0], &[3.0, 4.0], &iso(2, 1.0)).unwrap(),
            3.726653172078671e-6,
            max_relative = 1e-12
        );
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let h = iso(2, 1.0);
        assert!(matches!(eval_k(&[0.0], &[0.0, 1.0], &h), Err(Error::InvalidArgument(_))));
        assert!(matches!(grad_k(&[0.0, 0.0, 0.0], &[0.0, 1.0], &h), Err(Error::InvalidArgument(_))));
        assert!(cross_hess_k(&[0.0], &[0.0], &h).is_err());
        assert!(hess_k(&[f64::NAN, 0.0], &[0.0, 0.0], &h).is_err());
    }

    #[test]
    fn gradient_examples() {
        let h = iso(1, 1.0);
        assert_eq!(grad_k(&[0.3], &[0.3], &h).unwrap()[0], 0.0);
        let g = grad_k(&[0.0], &[1.0], &h).unwrap()[0];
        let fd = fd_grad(|x| eval_k(x, &[1.0], &h).unwrap(), &[0.0], 1e-5)[0];
        assert_relative_eq!(g, 0.6065306597126334, max_relative = 1e-12);
        assert!((g - fd).abs() < 1e-9);

        let h3 = iso(3, 0.5);
        let x = [0.2, 0.5, 0.9];
        let x2 = [0.4, 0.1, 0.9];
        let g = grad_k(&x, &x2, &h3).unwrap();
        for i in 0..3 {
            let expected = (x2[i] - x[i]).signum();
            if x2[i] == x[i] {
                assert_eq!(g[i], 0.0);
            } else {
                assert_eq!(g[i].signum(), expected);
            }
        }
    }

    #[test]
    fn cross_hessian_examples() {
        let ls = vec![0.5, 2.0];
        let h = KernelHyperparameters::new(ls.clone(), 1.0, 0.0).unwrap();
        let c = cross_hess_k(&[0.1, 0.2], &[0.1, 0.2], &h).unwrap();
        assert_relative_eq!(c, DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.25])), epsilon = 1e-15);

        let c = cross_hess_k(&[0.0], &[1.0], &iso(1, 1.0)).unwrap();
        assert!(c[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn hessian_examples() {
        let c = hess_k(&[0.2, 0.4], &[0.2, 0.4], &iso(2, 1.0)).unwrap();
        assert_relative_eq!(c, -DMatrix::<f64>::identity(2, 2), epsilon = 1e-15);
        let c = hess_k(&[0.0], &[2.0], &iso(1, 1.0)).unwrap();
        assert_relative_eq!(c[(0, 0)], 3.0 * (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(c[(0, 0)], 0.4060058497098381, max_relative = 1e-12);
    }

    fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0..1.0f64, d)
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..=8).prop_flat_map(|d| (point(d), point(d), proptest::collection::vec(0.2..1.5f64, d)))
    }

    proptest! {
        #[test]
        fn symmetric_in_arguments((x, x2, ls) in case()) {
            let h = KernelHyperparameters::new(ls, 1.3, 0.0).unwrap();
            prop_assert_eq!(eval_k(&x, &x2, &h).unwrap(), eval_k(&x2, &x, &h).unwrap());
        }

        #[test]
        fn derivative_chain_matches_finite_differences((x, x2, ls) in case()) {
            let h = KernelHyperparameters::new(ls, 1.0, 0.0).unwrap();
            let d = x.len();
            let step = 1e-5;
            let g = grad_k(&x, &x2, &h).unwrap();
            let fd = fd_grad(|p| eval_k(p, &x2, &h).unwrap(), &x, step);
            for i in 0..d {
                prop_assert!((g[i] - fd[i]).abs() <= 1e-4 * fd[i].abs().max(1e-2));
            }
            let cross = cross_hess_k(&x, &x2, &h).unwrap();
            let hess = hess_k(&x, &x2, &h).unwrap();
            for i in 0..d {
                let fd_cross = fd_grad(|p| grad_k(&x, p, &h).unwrap()[i], &x2, step);
                let fd_hess = fd_grad(|p| grad_k(p, &x2, &h).unwrap()[i], &x, step);
                for j in 0..d {
                    prop_assert!((cross[(i, j)] - fd_cross[j]).abs() < 1e-5);
                    prop_assert!((hess[(i, j)] - fd_hess[j]).abs() < 1e-4);
                }
            }
            prop_assert!((&hess - hess.transpose()).abs().max() < 1e-15);
        }

        #[test]
        fn blocks_are_stationary((x, x2, ls) in case(), shift in -3.0..3.0f64) {
            let h = KernelHyperparameters::new(ls, 1.0, 0.0).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let x2s: Vec<f64> = x2.iter().map(|v| v + shift).collect();
            prop_assert!((eval_k(&x, &x2, &h).unwrap() - eval_k(&xs, &x2s, &h).unwrap()).abs() < 1e-12);
            let g = grad_k(&x, &x2, &h).unwrap() - grad_k(&xs, &x2s, &h).unwrap();
            prop_assert!(g.amax() < 1e-10);
            let c = cross_hess_k(&x, &x2, &h).unwrap() - cross_hess_k(&xs, &x2s, &h).unwrap();
            prop_assert!(c.amax() < 1e-8);
        }

        #[test]
        fn gram_matrix_is_positive_semidefinite(
            pts in proptest::collection::vec(point(3), 1..12),
            noise in 0.0..1e-2f64,
        ) {
            let h = KernelHyperparameters::isotropic(3, 0.3, 1.0, noise).unwrap();
            let n = pts.len();
            let gram = DMatrix::from_fn(n, n, |i, j| {
                eval_k(&pts[i], &pts[j], &h).unwrap() + if i == j { noise } else { 0.0 }
            });
            let eig = gram.symmetric_eigenvalues();
            prop_assert!(eig.min() >= noise - 1e-10);
        }
    }
}
