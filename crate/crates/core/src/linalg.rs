//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Replaces `a` with `(a + aᵀ) / 2`; the result is bit-exactly symmetric.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Crude condition estimate from the diagonal of a Cholesky factor.
pub fn cholesky_condition_estimate(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let d = l.diagonal();
    let max = d.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = d.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    (max / min).powi(2)
}

/// Solves `K x = b` for symmetric positive-definite `K`.
///
/// If the factorization fails, a ridge of `1e-8 · trace(K) / n` is added and
/// the solve retried; the applied ridge is returned alongside the solution.
pub fn spd_solve_with_ridge(
    k: &DMatrix<f64>,
    b: &DVector<f64>,
    what: &'static str,
) -> Result<(DVector<f64>, Option<f64>)> {
    if let Some(chol) = Cholesky::new(k.clone()) {
        return Ok((chol.solve(b), None));
    }
    let n = k.nrows();
    let ridge = 1e-8 * k.trace() / n as f64;
    let mut kr = k.clone();
    for i in 0..n {
        kr[(i, i)] += ridge;
    }
    match Cholesky::new(kr) {
        Some(chol) => {
            log::warn!("{what}: factorization failed, solved with ridge {ridge:e}");
            Ok((chol.solve(b), Some(ridge)))
        }
        None => Err(Error::Singular {
            what,
            condition_estimate: diagonal_condition_estimate(k),
        }),
    }
}

/// Solves `K x = b` for symmetric positive-definite `K` without regularization.
pub fn spd_solve(k: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let chol = Cholesky::new(k.clone()).ok_or_else(|| Error::Singular {
        what,
        condition_estimate: diagonal_condition_estimate(k),
    })?;
    let cond = cholesky_condition_estimate(&chol);
    if !cond.is_finite() || cond > 1e15 {
        return Err(Error::Singular {
            what,
            condition_estimate: cond,
        });
    }
    Ok(chol.solve(b))
}

fn diagonal_condition_estimate(k: &DMatrix<f64>) -> f64 {
    let d = k.diagonal();
    let max = d.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = d.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue relative to the largest; small dense matrices only.
pub fn min_eigen_ratio(k: &DMatrix<f64>) -> f64 {
    let eig = k.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    min / max
}
