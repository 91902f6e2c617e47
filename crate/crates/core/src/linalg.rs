//! Small dense linear-algebra helpers shared by the geometry and
//! certification code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::expr::Jet2;
use crate::model::ModelSpec;

/// Smallest and largest singular values.
pub fn singular_range(a: &DMatrix<f64>) -> (f64, f64) {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}

/// Full column rank in the relative sense `sigma_min > rel * sigma_max`.
pub fn full_column_rank(a: &DMatrix<f64>, rel: f64) -> bool {
    let (min, max) = singular_range(a);
    max > 0.0 && min > rel * max && a.nrows() >= a.ncols()
}

/// Moore-Penrose pseudoinverse, `None` when the matrix is numerically rank
/// deficient.
pub fn pinv(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !full_column_rank(a, 1e-12) {
        return None;
    }
    let (_, max) = singular_range(a);
    a.clone().pseudo_inverse(1e-14 * max).ok()
}

/// Least-squares solve `a x = b` via the pseudoinverse.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    pinv(a).map(|p| p * b)
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn sym_eig_range(a: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(a.clone()).eigenvalues;
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Jacobian of `(y, z) -> (G_x, G)` at fixed `x`: rows `G_{x_i, ybar}` then
/// `G_ybar`, shape `(m+1) x (n+1)`.
pub fn twist_matrix(spec: &ModelSpec, jet: &Jet2) -> DMatrix<f64> {
    let (m, yb) = (spec.m(), spec.space().ybar());
    let k = yb.len();
    let mut out = DMatrix::zeros(m + 1, k);
    for i in 0..m {
        for (c, j) in yb.clone().enumerate() {
            out[(i, c)] = jet.hessian[(i, j)];
        }
    }
    for (c, j) in yb.enumerate() {
        out[(m, c)] = jet.gradient[j];
    }
    out
}

/// `D_{xbar, ybar}` of `Gbar = x0 * G` at `x0 = -1`: the twist matrix with
/// its first `m` rows negated.
pub fn gbar_matrix(spec: &ModelSpec, jet: &Jet2) -> DMatrix<f64> {
    let mut out = twist_matrix(spec, jet);
    for i in 0..spec.m() {
        out.row_mut(i).neg_mut();
    }
    out
}

/// `(G_x, G)` at a point, from its jet.
pub fn twist_value(spec: &ModelSpec, jet: &Jet2) -> DVector<f64> {
    let m = spec.m();
    let mut v = DVector::zeros(m + 1);
    for i in 0..m {
        v[i] = jet.gradient[i];
    }
    v[m] = jet.value;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_is_left_inverse() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 1.0, 0.0]);
        let p = pinv(&a).unwrap();
        let id = &p * &a;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-12);
        let rank_def = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(pinv(&rank_def).is_none());
    }

    #[test]
    fn eig_range() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (lo, hi) = sym_eig_range(&a);
        assert!((lo - 1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }
}
