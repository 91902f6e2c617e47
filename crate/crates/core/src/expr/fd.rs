// Third- and fourth-order derivatives by central differences of exact
// Hessians. Truncation error is O(h^2) in the step.

use nalgebra::DMatrix;

use super::{eval_jet2, Expr, ExprError};

/// Step for an order-`k` derivative at coordinate value `x`.
pub fn fd_step(k: usize, x: f64) -> f64 {
    let base = f64::EPSILON.powf(1.0 / k as f64).max(1e-4);
    base * x.abs().max(1.0)
}

fn shifted_hessian(
    e: &Expr,
    point: &[f64],
    shifts: &[(usize, f64)],
) -> Result<DMatrix<f64>, ExprError> {
    let mut p = point.to_vec();
    for &(i, h) in shifts {
        p[i] += h;
    }
    Ok(eval_jet2(e, &p)?.hessian)
}

fn check_index(e: &Expr, point: &[f64], idx: &[usize]) -> Result<(), ExprError> {
    let d = e.space().dim();
    if point.len() != d {
        return Err(ExprError::DimensionMismatch {
            expected: d,
            found: point.len(),
        });
    }
    match idx.iter().find(|&&i| i >= d) {
        Some(&i) => Err(ExprError::DimensionMismatch {
            expected: d,
            found: i + 1,
        }),
        None => Ok(()),
    }
}

/// `∂_var` of the Hessian: entry `(j, k)` approximates `∂³e / ∂var ∂j ∂k`.
pub fn hessian_slice_d1(e: &Expr, point: &[f64], var: usize) -> Result<DMatrix<f64>, ExprError> {
    check_index(e, point, &[var])?;
    let h = fd_step(3, point[var]);
    let plus = shifted_hessian(e, point, &[(var, h)])?;
    let minus = shifted_hessian(e, point, &[(var, -h)])?;
    Ok((plus - minus) / (2.0 * h))
}

/// `∂_a ∂_b` of the Hessian.
pub fn hessian_slice_d2(
    e: &Expr,
    point: &[f64],
    a: usize,
    b: usize,
) -> Result<DMatrix<f64>, ExprError> {
    check_index(e, point, &[a, b])?;
    if a == b {
        let h = fd_step(4, point[a]);
        let plus = shifted_hessian(e, point, &[(a, h)])?;
        let mid = eval_jet2(e, point)?.hessian;
        let minus = shifted_hessian(e, point, &[(a, -h)])?;
        return Ok((plus - mid * 2.0 + minus) / (h * h));
    }
    let ha = fd_step(4, point[a]);
    let hb = fd_step(4, point[b]);
    let pp = shifted_hessian(e, point, &[(a, ha), (b, hb)])?;
    let pm = shifted_hessian(e, point, &[(a, ha), (b, -hb)])?;
    let mp = shifted_hessian(e, point, &[(a, -ha), (b, hb)])?;
    let mm = shifted_hessian(e, point, &[(a, -ha), (b, -hb)])?;
    Ok((pp - pm - mp + mm) / (4.0 * ha * hb))
}

/// Mixed partial derivative of order 3 or 4, indexed by variable positions.
pub fn eval_deriv_fd(e: &Expr, point: &[f64], multi_index: &[usize]) -> Result<f64, ExprError> {
    check_index(e, point, multi_index)?;
    match *multi_index {
        [a, j, k] => Ok(hessian_slice_d1(e, point, a)?[(j, k)]),
        [a, b, j, k] => Ok(hessian_slice_d2(e, point, a, b)?[(j, k)]),
        _ => Err(ExprError::InvalidOrder(multi_index.len())),
    }
}
