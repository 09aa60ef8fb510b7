//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn symmetric_defect(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let vals = eig.eigenvalues.map(f);
    &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn sym_sqrt(m: &Matrix) -> Matrix {
    sym_apply(m, |l| l.max(0.0).sqrt())
}

pub fn sym_expm(m: &Matrix) -> Matrix {
    sym_apply(m, f64::exp)
}

/// 2-norm condition number; `f64::INFINITY` for a singular matrix.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn euclid(v: &Vector) -> f64 {
    v.norm()
}

pub fn from_slice(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

pub fn unit(dim: usize, k: usize) -> Vector {
    let mut e = Vector::zeros(dim);
    e[k] = 1.0;
    e
}

/// Solves a symmetric positive-definite system, falling back to LU.
pub fn spd_solve(a: &Matrix, b: &Vector) -> Option<Vector> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_diagonal() {
        let m = Matrix::from_diagonal(&from_slice(&[0.0, 1.0]));
        let e = sym_expm(&m);
        assert!((e[(1, 1)] - 1f64.exp()).abs() < 1e-14);
        assert!((e[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = sym_sqrt(&m);
        assert!((&r * &r - &m).norm() < 1e-13);
    }

    #[test]
    fn condition_of_singular_is_infinite() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(condition_number(&m) > 1e15);
    }
}
