use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::CertifyError;
use crate::linalg::{lstsq, sym_eig_range};
use crate::model::sample::{box_corners, sample_box};
use crate::model::{FamilyKind, ModelSpec};

/// Residual below which a stationary agent is accepted.
const ROOT_TOL: f64 = 1e-10;
/// Agents closer than this are the same root.
const ROOT_DEDUP: f64 = 1e-6;

fn require_type_free_profit(spec: &ModelSpec) -> Result<(), CertifyError> {
    let yb = spec.space().ybar();
    if spec.pi().references_only(|v| yb.contains(&v)) {
        Ok(())
    } else {
        Err(CertifyError::Precondition(
            "the principal's utility must depend on (y, z) only".into(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalWitness {
    pub ybar: Vec<f64>,
    pub x: Vec<f64>,
    /// Largest eigenvalue of `pi_ybar,ybar + G_ybar,ybar` at the root.
    pub eig_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalReport {
    pub pass: bool,
    /// Fraction of sampled `ybar` at which some `x in cl(X)` solves
    /// `pi_ybar + G_ybar = 0`.
    pub premise_coverage: f64,
    /// Every root has a negative definite Hessian sum beyond `tol`.
    pub uniform: bool,
    /// `-max eig_max` over all roots.
    pub margin: f64,
    /// For the quasilinear family: pass with full premise coverage.
    pub b_star_convex: Option<bool>,
    pub samples: usize,
    pub roots: usize,
    pub tol: f64,
    pub witnesses: Vec<LocalWitness>,
    /// Sampled `ybar` without a stationary agent.
    pub uncovered: Vec<Vec<f64>>,
}

/// `pi_ybar(ybar) + G_ybar(x, ybar)` and its x-Jacobian `G_{x_i ybar_l}`.
fn stationarity(
    spec: &ModelSpec,
    x: &[f64],
    ybar: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>), CertifyError> {
    let (m, yb) = (spec.m(), spec.space().ybar());
    let p = spec.point_ybar(x, ybar);
    let gj = spec.g().jet2(&p)?;
    let (_, pg) = spec.pi().eval_grad(&p)?;
    let f = DVector::from_iterator(yb.len(), yb.clone().map(|l| pg[l] + gj.gradient[l]));
    let mut j = DMatrix::zeros(yb.len(), m);
    for (r, l) in yb.enumerate() {
        for i in 0..m {
            j[(r, i)] = gj.hessian[(i, l)];
        }
    }
    Ok((f, j))
}

fn clamp(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Projected Gauss-Newton for a root of the stationarity map in `cl(X)`.
fn find_root(spec: &ModelSpec, ybar: &[f64], start: &[f64]) -> Option<Vec<f64>> {
    let bounds = &spec.domains().x;
    let mut x = start.to_vec();
    let (mut f, mut j) = stationarity(spec, &x, ybar).ok()?;
    for _ in 0..50 {
        let norm = f.norm();
        if norm < 1e-14 {
            break;
        }
        let delta = lstsq(&j, &f)?;
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let mut trial: Vec<f64> = x
                .iter()
                .zip(delta.iter())
                .map(|(a, d)| a - alpha * d)
                .collect();
            clamp(&mut trial, bounds);
            if let Ok((ft, jt)) = stationarity(spec, &trial, ybar) {
                if ft.norm() < norm {
                    next = Some((trial, ft, jt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let (xt, ft, jt) = next?;
        x = xt;
        f = ft;
        j = jt;
    }
    (f.norm() < ROOT_TOL).then_some(x)
}

fn roots_at(spec: &ModelSpec, ybar: &[f64], starts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut roots: Vec<Vec<f64>> = Vec::new();
    for s in starts {
        if let Some(r) = find_root(spec, ybar, s) {
            let dup = roots
                .iter()
                .any(|q| q.iter().zip(&r).all(|(a, b)| (a - b).abs() < ROOT_DEDUP));
            if !dup {
                roots.push(r);
            }
        }
    }
    roots
}

/// Local test of envelope concavity: wherever an agent in `cl(X)` has
/// `pi_ybar + G_ybar = 0`, the sum `pi_ybar,ybar + G_ybar,ybar` must be
/// negative semidefinite.
pub fn local_gbar_star_test(
    spec: &ModelSpec,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<LocalReport, CertifyError> {
    require_type_free_profit(spec)?;
    let xb = &spec.domains().x;
    let mut starts = box_corners(xb);
    starts.push(xb.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
    starts.extend(sample_box(xb, 8, seed.wrapping_add(17)));
    let ybars = sample_box(&spec.ybar_bounds(), samples, seed);

    let per_sample: Vec<Result<Vec<LocalWitness>, CertifyError>> = ybars
        .par_iter()
        .map(|yb| {
            roots_at(spec, yb, &starts)
                .into_iter()
                .map(|x| {
                    let p = spec.point_ybar(&x, yb);
                    let k = yb.len();
                    let m = spec.m();
                    let h = spec
                        .pi()
                        .jet2(&p)?
                        .hessian
                        .view((m, m), (k, k))
                        .into_owned()
                        + spec.g().jet2(&p)?.hessian.view((m, m), (k, k));
                    let (_, eig_max) = sym_eig_range(&h);
                    Ok(LocalWitness {
                        ybar: yb.clone(),
                        x,
                        eig_max,
                    })
                })
                .collect()
        })
        .collect();

    let mut covered = 0;
    let mut roots = 0;
    let mut margin = f64::INFINITY;
    let mut witnesses = Vec::new();
    let mut uncovered = Vec::new();
    for (yb, r) in ybars.iter().zip(per_sample) {
        let rs = r?;
        if rs.is_empty() {
            uncovered.push(yb.clone());
            continue;
        }
        covered += 1;
        roots += rs.len();
        for w in rs {
            margin = margin.min(-w.eig_max);
            if w.eig_max > tol * w.eig_max.abs().max(1.0) {
                witnesses.push(w);
            }
        }
    }
    let pass = witnesses.is_empty();
    let premise_coverage = if samples == 0 {
        0.0
    } else {
        covered as f64 / samples as f64
    };
    let b_star_convex = match spec.family() {
        Some(f) if f.kind == FamilyKind::Quasilinear => Some(pass && covered == samples),
        _ => None,
    };
    Ok(LocalReport {
        pass,
        premise_coverage,
        uniform: roots > 0 && margin > tol,
        margin: if roots > 0 { margin } else { 0.0 },
        b_star_convex,
        samples,
        roots,
        tol,
        witnesses,
        uncovered,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformReport {
    pub is_gbar_star_concave: bool,
    pub max_gap: f64,
    pub grid_tol: f64,
    /// Product where the gap is largest.
    pub worst: Vec<f64>,
    pub x0_grid: Vec<f64>,
}

/// Uniform grid on `[lo, hi]` with `-1` inserted.
pub fn x0_grid(interval: (f64, f64), count: usize) -> Result<Vec<f64>, CertifyError> {
    let (lo, hi) = interval;
    if !(lo <= -1.0 && (-1.0..0.0).contains(&hi)) {
        return Err(CertifyError::Precondition(format!(
            "X0 = [{lo}, {hi}] must be negative and contain -1"
        )));
    }
    let mut g: Vec<f64> = if count <= 1 {
        Vec::new()
    } else {
        (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect()
    };
    g.push(-1.0);
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    Ok(g)
}

/// `G` on agents x products.
fn g_table(
    spec: &ModelSpec,
    agents: &[Vec<f64>],
    products: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, CertifyError> {
    agents
        .par_iter()
        .map(|x| {
            products
                .iter()
                .map(|yb| {
                    spec.g()
                        .eval(&spec.point_ybar(x, yb))
                        .map_err(CertifyError::from)
                })
                .collect()
        })
        .collect()
}

fn double_transform_table(g: &[Vec<f64>], x0s: &[f64], psi: &[f64]) -> Vec<f64> {
    // psi^Gbar(x, x0) = min_ybar x0 G(x, ybar) - psi(ybar)
    let first: Vec<Vec<f64>> = g
        .iter()
        .map(|row| {
            x0s.iter()
                .map(|&x0| {
                    row.iter()
                        .zip(psi)
                        .map(|(gv, p)| x0 * gv - p)
                        .fold(f64::INFINITY, f64::min)
                })
                .collect()
        })
        .collect();
    // phi^Gbar*(ybar) = min_{x, x0} x0 G(x, ybar) - phi(x, x0)
    (0..psi.len())
        .map(|p| {
            g.iter()
                .zip(&first)
                .flat_map(|(row, f)| x0s.iter().zip(f).map(move |(&x0, fv)| x0 * row[p] - fv))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `(psi^Gbar)^Gbar*` on the product grid, with both minimizations taken
/// over the finite grids.
pub fn gbar_double_transform(
    spec: &ModelSpec,
    products: &[Vec<f64>],
    agents: &[Vec<f64>],
    x0s: &[f64],
    psi: &[f64],
) -> Result<Vec<f64>, CertifyError> {
    if psi.len() != products.len() {
        return Err(CertifyError::Invalid(
            "one value per product expected".into(),
        ));
    }
    Ok(double_transform_table(
        &g_table(spec, agents, products)?,
        x0s,
        psi,
    ))
}

/// Discrete envelope test `pi == (pi^Gbar)^Gbar*` on finite grids of
/// products `(y, z)` and agents, with `x0` on a grid of `interval`.
pub fn gbar_transform_check(
    spec: &ModelSpec,
    products: &[Vec<f64>],
    agents: &[Vec<f64>],
    interval: (f64, f64),
    x0_count: usize,
    grid_tol: f64,
) -> Result<TransformReport, CertifyError> {
    require_type_free_profit(spec)?;
    if products.is_empty() || agents.is_empty() {
        return Err(CertifyError::Invalid(
            "transform grids must be nonempty".into(),
        ));
    }
    let x0s = x0_grid(interval, x0_count)?;
    let pi = products
        .iter()
        .map(|yb| spec.pi().eval(&spec.point_ybar(&agents[0], yb)))
        .collect::<Result<Vec<_>, _>>()?;
    let dbl = gbar_double_transform(spec, products, agents, &x0s, &pi)?;
    let (mut max_gap, mut worst) = (0.0, products[0].clone());
    for (k, (d, p)) in dbl.iter().zip(&pi).enumerate() {
        let gap = (d - p).abs();
        if gap > max_gap {
            max_gap = gap;
            worst = products[k].clone();
        }
    }
    Ok(TransformReport {
        is_gbar_star_concave: max_gap < grid_tol,
        max_gap,
        grid_tol,
        worst,
        x0_grid: x0s,
    })
}
