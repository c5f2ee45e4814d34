//! Dense symmetric positive-definite factorization used on the hot paths.
//!
//! Matrices cross the public API as `nalgebra` types; the Cholesky kernel
//! itself runs on `faer`, which is several times faster at the sizes the
//! Type-II objective sees (n ~ 10^3).

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor `A = L Lᵀ` of a symmetric positive-definite matrix.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    dim: usize,
}

impl SpdFactor {
    /// Factor a symmetric matrix given in `nalgebra` form. Only the lower
    /// triangle is read.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape(format!(
                "cannot factor a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        Self::from_faer(Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]))
    }

    /// Factor a matrix already held in `faer` storage.
    pub fn from_faer(a: Mat<f64>) -> Result<Self> {
        let dim = a.nrows();
        match a.llt(Side::Lower) {
            Ok(llt) => Ok(Self { llt, dim }),
            Err(_) => {
                let (index, pivot) = first_bad_pivot(&a);
                Err(Error::NotPositiveDefinite { index, pivot })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.dim, "rhs length");
        let mut rhs = Mat::from_fn(self.dim, 1, |i, _| b[i]);
        self.llt.solve_in_place(&mut rhs);
        DVector::from_fn(self.dim, |i, _| rhs[(i, 0)])
    }

    /// `bᵀ A⁻¹ b` via a single forward substitution: `‖L⁻¹ b‖²`.
    pub fn inv_quad(&self, b: &DVector<f64>) -> f64 {
        assert_eq!(b.len(), self.dim, "rhs length");
        let l = self.llt.L();
        let mut w = b.as_slice().to_vec();
        let mut acc = 0.0;
        // column-oriented so each pass reads one contiguous column of L
        for k in 0..self.dim {
            let wk = w[k] / l[(k, k)];
            acc += wk * wk;
            let col = l.col(k);
            for i in k + 1..self.dim {
                w[i] -= col[i] * wk;
            }
        }
        acc
    }
}

/// Plain unblocked Cholesky run only to report where factorization broke.
fn first_bad_pivot(a: &Mat<f64>) -> (usize, f64) {
    let n = a.nrows();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return (j, d);
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    // faer rejected it but the plain sweep did not; report the smallest diagonal.
    let (index, pivot) =
        (0..n)
            .map(|i| (i, l[i * n + i] * l[i * n + i]))
            .fold(
                (0, f64::INFINITY),
                |acc, p| if p.1 < acc.1 { p } else { acc },
            );
    (index, pivot)
}
