use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{CertifyError, Verdict};
use crate::expr::hessian_slice_d1;
use crate::linalg::{full_column_rank, gbar_matrix, pinv, sym_eig_range};
use crate::model::sample::{box_corners, sample_box};
use crate::model::ModelSpec;

/// Default absolute eigenvalue tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default number of low-discrepancy samples.
pub const DEFAULT_SAMPLES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionSample {
    pub point: Vec<f64>,
    /// Symmetrized `(n+1) x (n+1)` criterion matrix, row-major.
    pub matrix: Vec<f64>,
    pub dim: usize,
    /// Frobenius norm of `A - A^T` before symmetrization.
    pub asymmetry: f64,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl CriterionSample {
    /// Sample of a symmetric matrix.
    pub fn new(point: &[f64], sym: &DMatrix<f64>, asymmetry: f64) -> CriterionSample {
        let (eig_min, eig_max) = sym_eig_range(sym);
        CriterionSample {
            point: point.to_vec(),
            matrix: sym.transpose().as_slice().to_vec(),
            dim: sym.nrows(),
            asymmetry,
            eig_min,
            eig_max,
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrix)
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.eig_min.abs().max(self.eig_max.abs())
    }
}

/// `pi_{,kj} - pi_{,l} Gbar^{i,l} Gbar_{i,kj}` over the `(y, z)` block,
/// evaluated at `x0 = -1`, with the Moore-Penrose pseudoinverse as left
/// inverse.
pub fn criterion_matrix(spec: &ModelSpec, point: &[f64]) -> Result<CriterionSample, CertifyError> {
    let (m, yb) = (spec.m(), spec.space().ybar());
    let k = yb.len();
    let gj = spec.g().jet2(point)?;
    let pj = spec.pi().jet2(point)?;
    let mbar = gbar_matrix(spec, &gj);
    if !full_column_rank(&mbar, 1e-8) {
        return Err(CertifyError::RankDeficient {
            point: point.to_vec(),
        });
    }
    let left = pinv(&mbar).ok_or_else(|| CertifyError::RankDeficient {
        point: point.to_vec(),
    })?;
    let pi_grad = DVector::from_iterator(k, yb.clone().map(|j| pj.gradient[j]));
    // w_i = pi_l Gbar^{i,l}
    let w = left.transpose() * &pi_grad;
    let block = |h: &DMatrix<f64>| h.view((m, m), (k, k)).into_owned();
    let mut a = block(&pj.hessian);
    for i in 0..m {
        if w[i] != 0.0 {
            // Gbar_{x_i, kj} = -G_{x_i, kj}
            let t = block(&hessian_slice_d1(spec.g(), point, i)?);
            a += t * w[i];
        }
    }
    // Gbar_{x0, kj} = G_{,kj}
    a -= block(&gj.hessian) * w[m];
    let asymmetry = (&a - a.transpose()).norm();
    let sym = (&a + a.transpose()) * 0.5;
    if !sym.iter().all(|v| v.is_finite()) {
        return Err(CertifyError::Expr(crate::expr::ExprError::NonFinite));
    }
    Ok(CriterionSample::new(point, &sym, asymmetry))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub verdict: Verdict,
    /// Uniform modulus: `-max eig_max` on the concave side, `min eig_min` on
    /// the convex side, 0 otherwise.
    pub lambda: f64,
    /// Closed-form criterion margin when the model is one of the example
    /// families.
    pub epsilon: Option<f64>,
    pub samples_used: usize,
    pub seed: u64,
    pub tol: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub max_norm: f64,
    pub max_asymmetry: f64,
    pub left_inverse: &'static str,
    /// Sample points whose evaluation failed.
    pub failures: Vec<String>,
    pub counterexamples: Vec<CriterionSample>,
}

fn effective_tol(tol: f64, s: &CriterionSample) -> f64 {
    tol * s.norm().max(1.0)
}

/// Classify a set of criterion samples. `interior` holds the low-discrepancy
/// samples, `corners` the vertices of the sampled box; uniform moduli must
/// hold at both, strictness only at the interior ones.
pub fn classify(
    interior: &[CriterionSample],
    corners: &[CriterionSample],
    tol: f64,
) -> (Verdict, f64, Vec<CriterionSample>) {
    let all: Vec<&CriterionSample> = interior.iter().chain(corners).collect();
    if all.iter().all(|s| s.norm() <= effective_tol(tol, s)) {
        return (Verdict::Linear, 0.0, Vec::new());
    }
    let pos = all.iter().find(|s| s.eig_max > effective_tol(tol, s));
    let neg = all.iter().find(|s| s.eig_min < -effective_tol(tol, s));
    match (pos, neg) {
        (Some(p), Some(n)) => (Verdict::Indefinite, 0.0, vec![(*p).clone(), (*n).clone()]),
        (None, _) => {
            let worst = all
                .iter()
                .max_by(|a, b| a.eig_max.total_cmp(&b.eig_max))
                .unwrap();
            let lambda = -worst.eig_max;
            if lambda > tol {
                (Verdict::UniformlyConcave, lambda, Vec::new())
            } else if interior.iter().all(|s| s.eig_max < -effective_tol(tol, s)) {
                (Verdict::StrictlyConcaveSampled, 0.0, vec![(*worst).clone()])
            } else {
                (Verdict::Concave, 0.0, vec![(*worst).clone()])
            }
        }
        (Some(_), None) => {
            let worst = all
                .iter()
                .min_by(|a, b| a.eig_min.total_cmp(&b.eig_min))
                .unwrap();
            let lambda = worst.eig_min;
            if lambda > tol {
                (Verdict::UniformlyConvex, lambda, Vec::new())
            } else if interior.iter().all(|s| s.eig_min > effective_tol(tol, s)) {
                (Verdict::StrictlyConvexSampled, 0.0, vec![(*worst).clone()])
            } else {
                (Verdict::Convex, 0.0, vec![(*worst).clone()])
            }
        }
    }
}

/// Certify concavity or convexity of the principal's objective from the
/// sign of the criterion matrix at `samples` Halton points of the shrunken
/// box `X x Y x Z` and at its corners.
pub fn certify_lemma49(
    spec: &ModelSpec,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<CertificationReport, CertifyError> {
    certify_with(spec, samples, tol, seed, |p| criterion_matrix(spec, p))
}

/// Sampling and classification shared by the generic and closed-form
/// certificates.
pub(crate) fn certify_with(
    spec: &ModelSpec,
    samples: usize,
    tol: f64,
    seed: u64,
    matrix: impl Fn(&[f64]) -> Result<CriterionSample, CertifyError> + Sync,
) -> Result<CertificationReport, CertifyError> {
    let bounds = spec.xyz_bounds();
    let interior_pts = sample_box(&bounds, samples, seed);
    let corner_pts = box_corners(&bounds);
    let eval = |pts: &[Vec<f64>]| -> Vec<Result<CriterionSample, CertifyError>> {
        pts.par_iter().map(|p| matrix(p)).collect()
    };
    let mut failures = Vec::new();
    let mut split = |res: Vec<Result<CriterionSample, CertifyError>>| -> Vec<CriterionSample> {
        let mut ok = Vec::new();
        for r in res {
            match r {
                Ok(s) => ok.push(s),
                Err(e) => failures.push(e.to_string()),
            }
        }
        ok
    };
    let interior = split(eval(&interior_pts));
    let corners = split(eval(&corner_pts));
    let all = interior.iter().chain(&corners);
    let eig_min = all.clone().map(|s| s.eig_min).fold(f64::INFINITY, f64::min);
    let eig_max = all
        .clone()
        .map(|s| s.eig_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_norm = all.clone().map(|s| s.norm()).fold(0.0, f64::max);
    let max_asymmetry = all.map(|s| s.asymmetry).fold(0.0, f64::max);

    let (verdict, lambda, counterexamples) = if !failures.is_empty() || max_asymmetry >= 1e-6 {
        (Verdict::Inconclusive, 0.0, Vec::new())
    } else {
        classify(&interior, &corners, tol)
    };
    let epsilon = super::closed_form::family_margin(spec, &interior_pts)
        .ok()
        .flatten();
    Ok(CertificationReport {
        verdict,
        lambda,
        epsilon,
        samples_used: interior_pts.len() + corner_pts.len(),
        seed,
        tol,
        eig_min,
        eig_max,
        max_norm,
        max_asymmetry,
        left_inverse: "moore_penrose",
        failures,
        counterexamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, Contract, Domains};

    #[test]
    fn quasilinear_matrix() {
        let spec = builtin("quasilinear").unwrap();
        let s = criterion_matrix(&spec, &[0.3, 0.6, 0.5]).unwrap();
        let a = s.matrix();
        assert!((a[(0, 0)] + 1.0).abs() < 1e-12);
        assert!(a[(0, 1)].abs() < 1e-12 && a[(1, 1)].abs() < 1e-12);
        assert!(s.asymmetry < 1e-12);
    }

    #[test]
    fn zero_sum_matrix_vanishes() {
        let spec = builtin("zero_sum_profit").unwrap();
        for p in sample_box(&spec.xyz_bounds(), 64, 2) {
            assert!(criterion_matrix(&spec, &p).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn profit_independent_of_contract() {
        let d = Domains {
            x: vec![(0.0, 1.0)],
            y: vec![(0.0, 1.0)],
            z: (0.0, 1.0),
        };
        let spec =
            ModelSpec::from_strings(d, "x1*y1 - z - z^2", "x1^2", Contract::new(vec![0.0], 0.0))
                .unwrap();
        assert_eq!(
            criterion_matrix(&spec, &[0.5, 0.5, 0.5]).unwrap().norm(),
            0.0
        );
    }

    #[test]
    fn rank_deficiency_reported() {
        let d = Domains {
            x: vec![(0.0, 1.0)],
            y: vec![(0.0, 1.0)],
            z: (0.0, 1.0),
        };
        let spec = ModelSpec::from_strings(d, "x1*y1", "z", Contract::new(vec![0.0], 0.0)).unwrap();
        assert!(matches!(
            criterion_matrix(&spec, &[0.5, 0.5, 0.5]),
            Err(CertifyError::RankDeficient { .. })
        ));
    }

    #[test]
    fn builtin_verdicts() {
        let v = |name: &str| certify_lemma49(&builtin(name).unwrap(), 256, DEFAULT_TOL, 1).unwrap();
        assert_eq!(v("zero_sum_profit").verdict, Verdict::Linear);
        assert_eq!(v("quasilinear").verdict, Verdict::Concave);
        let ps = v("price_sensitive");
        assert_eq!(ps.verdict, Verdict::UniformlyConcave);
        // -f''/f' = -1/(1 + z) is largest at z_max = 1
        assert!((ps.lambda - 0.5).abs() < 1e-6, "{}", ps.lambda);
        assert_eq!(v("inhomogeneous").verdict, Verdict::StrictlyConcaveSampled);
    }

    #[test]
    fn flipped_cost_is_convex() {
        let d = Domains {
            x: vec![(0.0, 1.0)],
            y: vec![(0.0, 1.0)],
            z: (0.0, 1.0),
        };
        let spec = ModelSpec::from_strings(
            d,
            "x1*y1 - z - z^2/2",
            "z + y1^2/2",
            Contract::new(vec![0.0], 0.0),
        )
        .unwrap();
        let r = certify_lemma49(&spec, 128, DEFAULT_TOL, 1).unwrap();
        // A_yy = +1 but A_zz = -1/(1+z): indefinite
        assert_eq!(r.verdict, Verdict::Indefinite);
        assert_eq!(r.counterexamples.len(), 2);
        let spec = ModelSpec::from_strings(
            Domains {
                x: vec![(0.0, 1.0)],
                y: vec![(0.0, 1.0)],
                z: (0.0, 1.0),
            },
            "x1*y1 - z",
            "z + y1^2/2",
            Contract::new(vec![0.0], 0.0),
        )
        .unwrap();
        assert_eq!(
            certify_lemma49(&spec, 128, DEFAULT_TOL, 1).unwrap().verdict,
            Verdict::Convex
        );
    }
}
