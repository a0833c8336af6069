//! Dense helpers on top of `nalgebra`.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Replaces `a` with `(a + a^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            what,
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(what))?;
    let l = chol.l();
    if (0..l.nrows()).any(|i| !(l[(i, i)] > 0.0)) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(l)
}

/// Builds a square matrix from row vectors.
pub fn from_rows(rows: &[alloc::vec::Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for r in rows {
        if r.len() != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
