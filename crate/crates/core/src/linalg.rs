//! Small dense solvers on row-major square matrices.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Solves `A x = b` by Gaussian elimination with partial pivoting. Returns
/// `None` when a pivot falls below `tol` in magnitude.
pub fn solve_pivoted<T: Real>(a: &[T], b: &[T], tol: T) -> Option<Vec<T>> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix must be {n}x{n}");
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().partial_cmp(&m[j * n + col].abs()).unwrap_or(std::cmp::Ordering::Equal))?;
        if !(m[piv * n + col].abs() > tol) {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f != T::zero() {
                for k in col..n {
                    m[r * n + k] = m[r * n + k] - f * m[col * n + k];
                }
                x[r] = x[r] - f * x[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for k in r + 1..n {
            s = s - m[r * n + k] * x[k];
        }
        x[r] = s / m[r * n + r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`, in place of a copy of `a`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &[T], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Shape(format!("expected {n}x{n} matrix, got {} entries", a.len())));
        }
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let (n, l) = (self.n, &self.l);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - l[i * n + k] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s = s - l[k * n + i] * b[k];
            }
            b[i] = s / l[i * n + i];
        }
    }
}
