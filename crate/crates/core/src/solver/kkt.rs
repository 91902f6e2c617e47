// First-order optimality residual of a feasible assignment: the distance
// of the profit gradient from the cone spanned by the active constraint
// gradients.

use nalgebra::{DMatrix, DVector};

use super::penalty::Problem;
use super::SolverError;

/// Constraints with slack below this count as active.
const ACTIVE_TOL: f64 = 1e-6;

/// Lawson-Hanson nonnegative least squares `min ||A x - b||, x >= 0`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * (1.0 + a.amax() * b.amax());
    for _ in 0..3 * n.max(1) {
        let w = a.transpose() * (b - a * &x);
        let Some(j) = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&p, &q| w[p].total_cmp(&w[q]))
        else {
            break;
        };
        passive[j] = true;
        for _ in 0..3 * n.max(1) {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = a.select_columns(&idx);
            let sol = sub
                .svd(true, true)
                .solve(b, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            if sol.iter().all(|&s| s > 0.0) {
                for (k, &c) in idx.iter().enumerate() {
                    x[c] = sol[k];
                }
                break;
            }
            let mut alpha = 1.0_f64;
            for (k, &c) in idx.iter().enumerate() {
                if sol[k] <= 0.0 {
                    alpha = alpha.min(x[c] / (x[c] - sol[k]));
                }
            }
            for (k, &c) in idx.iter().enumerate() {
                x[c] += alpha * (sol[k] - x[c]);
                if x[c] <= 1e-15 {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
    x
}

/// `min over lambda >= 0 of || grad profit + sum lambda_a grad g_a ||` over
/// the active IC, IR and box constraints `g_a >= 0`.
pub(crate) fn stationarity(problem: &Problem, v: &[f64]) -> Result<f64, SolverError> {
    let (n, k) = (problem.agents.len(), problem.k);
    let (_, grad) = problem.profit(v)?;
    let (val, gg) = problem.utility_table(v)?;
    let dim = problem.dim();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let scale = |u: f64| ACTIVE_TOL * (1.0 + u.abs());
    for i in 0..n {
        let own = val[i * n + i];
        if own - problem.outside[i] <= scale(own) {
            let mut c = DVector::zeros(dim);
            c.rows_mut(i * k, k)
                .copy_from_slice(&gg[(i * n + i) * k..(i * n + i + 1) * k]);
            cols.push(c);
        }
        for j in 0..n {
            if j != i && own - val[i * n + j] <= scale(own) {
                let mut c = DVector::zeros(dim);
                for d in 0..k {
                    c[i * k + d] += gg[(i * n + i) * k + d];
                    c[j * k + d] -= gg[(i * n + j) * k + d];
                }
                cols.push(c);
            }
        }
    }
    for (c, (&x, &(lo, hi))) in v.iter().zip(&problem.bounds).enumerate() {
        if x - lo <= scale(lo) {
            let mut e = DVector::zeros(dim);
            e[c] = 1.0;
            cols.push(e);
        }
        if hi - x <= scale(hi) {
            let mut e = DVector::zeros(dim);
            e[c] = -1.0;
            cols.push(e);
        }
    }
    let b = -DVector::from_vec(grad);
    if cols.is_empty() {
        return Ok(b.norm());
    }
    let a = DMatrix::from_columns(&cols);
    let lambda = nnls(&a, &b);
    Ok((a * lambda - b).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_small_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let x = nnls(&a, &DVector::from_vec(vec![2.0, -3.0]));
        assert_eq!(x, DVector::from_vec(vec![2.0, 0.0]));
        // duplicate columns stay solvable
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = nnls(&a, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(((&a * x) - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-12);
    }
}
