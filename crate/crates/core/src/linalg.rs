use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::{Error, Result};

/// Diagonal jitter values tried, in order, before a factorisation is declared failed.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Cholesky factorisation retried with increasing diagonal jitter.
///
/// Returns the factor together with the jitter that made it succeed.
pub fn jittered_cholesky(matrix: &DMatrix<f64>, ladder: &[f64]) -> Result<(Cholesky<f64, Dyn>, f64)> {
    for &jitter in ladder {
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            let finite = chol.l_dirty().iter().all(|v| v.is_finite());
            if finite {
                return Ok((chol, jitter));
            }
        }
    }
    Err(Error::NotPositiveDefinite { ladder: ladder.to_vec() })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
