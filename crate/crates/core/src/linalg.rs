//! Small dense helpers shared across modules.
//!
//! Operators on `C^n` are vectorized column-major, `vec(X)[i + n*j] = X[(i, j)]`,
//! so `X -> A X B` becomes `kron(B^T, A)` acting on `vec(X)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

pub(crate) fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub(crate) fn vec_op(x: &CMatrix) -> DVector<C64> {
    DVector::from_column_slice(x.as_slice())
}

pub(crate) fn unvec_op(v: &DVector<C64>, n: usize) -> CMatrix {
    CMatrix::from_column_slice(n, n, v.as_slice())
}

/// Superoperator matrix of `X -> A X B`.
pub(crate) fn sandwich(a: &CMatrix, b: &CMatrix) -> CMatrix {
    kron(&b.transpose(), a)
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Max-entry deviation of `U^dagger U` from the identity.
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    let n = u.nrows();
    let g = u.adjoint() * u;
    max_abs(&(g - CMatrix::identity(n, n)))
}

pub(crate) fn check_square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare(m.nrows(), m.ncols()));
    }
    Ok(m.nrows())
}

/// Largest singular value of a real matrix.
pub fn spectral_norm(m: &RMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn elimination_det(m: &CMatrix) -> C64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut det = ONE;
    for col in 0..n {
        let (pivot, pivot_abs) = (col..n)
            .map(|r| (r, a[(r, col)].norm()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs == 0.0 {
            return ZERO;
        }
        if pivot != col {
            a.swap_rows(pivot, col);
            det = -det;
        }
        let p = a[(col, col)];
        det *= p;
        for r in (col + 1)..n {
            let f = a[(r, col)] / p;
            if f != ZERO {
                for c in col..n {
                    let v = a[(col, c)];
                    a[(r, c)] -= f * v;
                }
            }
        }
    }
    det
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k as f64 + 1.0);
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}
