use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::lemma49::certify_with;
use super::{CertificationReport, CertifyError, CriterionSample};
use crate::expr::{hessian_slice_d1, Expr};
use crate::linalg::{pinv, sym_eig_range};
use crate::model::{Family, FamilyKind, ModelSpec};

/// Threshold below which a closed-form denominator counts as zero.
const DENOM_TOL: f64 = 1e-12;

/// Derivative data of `b`, `f` and `a` at one point, with `P` the
/// pseudoinverse of `b_{i,l}` so that `b^{i,l} = P[l, i]`.
struct Parts {
    m: usize,
    n: usize,
    b_y: DVector<f64>,
    b_yy: DMatrix<f64>,
    /// `b_{i,kj}` per `i`.
    b_xyy: Vec<DMatrix<f64>>,
    p: DMatrix<f64>,
    f_z: f64,
    f_zz: f64,
    f_xz: DVector<f64>,
    f_xzz: DVector<f64>,
    a_y: DVector<f64>,
    a_yy: DMatrix<f64>,
}

fn family_of(spec: &ModelSpec) -> Result<&Family, CertifyError> {
    match spec.family() {
        Some(f) if f.kind != FamilyKind::ZeroSumProfit => Ok(f),
        Some(f) => Err(CertifyError::FamilyMismatch(format!(
            "{} has no closed-form criterion",
            f.kind
        ))),
        None => Err(CertifyError::FamilyMismatch(
            "model was not built from a family template".into(),
        )),
    }
}

fn y_block(h: &DMatrix<f64>, m: usize, n: usize) -> DMatrix<f64> {
    h.view((m, m), (n, n)).into_owned()
}

impl Parts {
    fn at(fam: &Family, point: &[f64]) -> Result<Parts, CertifyError> {
        let sp = fam.b.space();
        let (m, n, z) = (sp.m, sp.n, sp.z());
        let bj = fam.b.jet2(point)?;
        let fj = fam.f.jet2(point)?;
        let aj = fam.a.jet2(point)?;
        let bxy = bj.hessian.view((0, m), (m, n)).into_owned();
        let p = pinv(&bxy).ok_or_else(|| CertifyError::RankDeficient {
            point: point.to_vec(),
        })?;
        let third = |e: &Expr, i: usize| hessian_slice_d1(e, point, i);
        let mut b_xyy = Vec::with_capacity(m);
        let mut f_xzz = DVector::zeros(m);
        for i in 0..m {
            b_xyy.push(y_block(&third(&fam.b, i)?, m, n));
            f_xzz[i] = third(&fam.f, i)?[(z, z)];
        }
        Ok(Parts {
            m,
            n,
            b_y: bj.gradient.rows(m, n).into_owned(),
            b_yy: y_block(&bj.hessian, m, n),
            b_xyy,
            p,
            f_z: fj.gradient[z],
            f_zz: fj.hessian[(z, z)],
            f_xz: DVector::from_iterator(m, (0..m).map(|i| fj.hessian[(i, z)])),
            f_xzz,
            a_y: aj.gradient.rows(m, n).into_owned(),
            a_yy: y_block(&aj.hessian, m, n),
        })
    }

    /// `c_l b^{i,l} v_i`.
    fn contract(&self, c: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (c.transpose() * &self.p * v)[0]
    }

    /// `c_l b^{i,l} b_{i,kj}`.
    fn contract_third(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let w = self.p.transpose() * c;
        let mut out = DMatrix::zeros(self.n, self.n);
        for i in 0..self.m {
            out += &self.b_xyy[i] * w[i];
        }
        out
    }

    /// `-b_{,kj} + b_{,l} b^{i,l} b_{i,kj}`.
    fn robert2(&self) -> DMatrix<f64> {
        self.contract_third(&self.b_y) - &self.b_yy
    }

    /// Bracket and `h` of the inhomogeneous family with cost.
    fn robert3(&self, point: &[f64]) -> Result<(DMatrix<f64>, f64), CertifyError> {
        let bpf = self.contract(&self.b_y, &self.f_xz);
        let apf = self.contract(&self.a_y, &self.f_xz);
        let denom = 1.0 - bpf / self.f_z;
        if !self.f_z.is_finite() || self.f_z.abs() < DENOM_TOL || denom.abs() < DENOM_TOL {
            return Err(CertifyError::SingularDenominator {
                point: point.to_vec(),
            });
        }
        let bracket = &self.a_yy - self.contract_third(&self.a_y)
            + self.robert2() * ((1.0 - apf) / (denom * self.f_z));
        let bpfzz = self.contract(&self.b_y, &self.f_xzz);
        let h = self.contract(&self.a_y, &self.f_xzz)
            + (apf - 1.0) * (bpfzz - self.f_zz) / (self.f_z - bpf);
        Ok((bracket, h))
    }
}

fn quad(a: &DMatrix<f64>, xi: &[f64]) -> Result<f64, CertifyError> {
    if xi.len() != a.nrows() {
        return Err(CertifyError::Invalid(format!(
            "direction needs {} components",
            a.nrows()
        )));
    }
    let v = DVector::from_column_slice(xi);
    Ok((v.transpose() * a * &v)[0])
}

/// Quadratic form of the homogeneous price-sensitivity criterion
/// `{a_kj - b_{,kj}/f' + (b_{,l}/f' - a_l) b^{i,l} b_{i,kj}} xi^k xi^j`
/// for `G = b - f(z)`, `pi = z - a(y)`.
pub fn criterion_example1(
    spec: &ModelSpec,
    point: &[f64],
    xi: &[f64],
) -> Result<f64, CertifyError> {
    let fam = family_of(spec)?;
    let z = spec.space().z();
    if !fam.f.references_only(|v| v == z) {
        return Err(CertifyError::FamilyMismatch(
            "f must depend on z only".into(),
        ));
    }
    let pp = Parts::at(fam, point)?;
    if !(pp.f_z > 0.0) {
        return Err(CertifyError::FamilyMismatch(format!(
            "f'(z) = {} is not positive",
            pp.f_z
        )));
    }
    let coef = &pp.b_y / pp.f_z - &pp.a_y;
    let bracket = &pp.a_yy - &pp.b_yy / pp.f_z + pp.contract_third(&coef);
    quad(&bracket, xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Example2Value {
    /// `{-b_{,kj} + b_{,l} b^{i,l} b_{i,kj}} xi^k xi^j`.
    pub form: f64,
    /// `h = f - b_{,l} b^{i,l} f_{i,}`.
    pub h: f64,
    pub h_z: f64,
    pub h_zz: f64,
}

impl Example2Value {
    /// `h` strictly increasing and convex in `z` at the point.
    pub fn increasing_convex(&self) -> bool {
        self.h_z > 0.0 && self.h_zz >= 0.0
    }

    /// `h` strictly increasing and concave in `z` at the point.
    pub fn increasing_concave(&self) -> bool {
        self.h_z > 0.0 && self.h_zz <= 0.0
    }
}

/// Zero-cost inhomogeneous criterion for `G = b - f(x, z)`, `pi = z`.
pub fn criterion_example2(
    spec: &ModelSpec,
    point: &[f64],
    xi: &[f64],
) -> Result<Example2Value, CertifyError> {
    let fam = family_of(spec)?;
    if !fam.a.variables().is_empty() || fam.a.eval(point)? != 0.0 {
        return Err(CertifyError::FamilyMismatch(
            "profit must be z (a = 0)".into(),
        ));
    }
    let pp = Parts::at(fam, point)?;
    let fj = fam.f.eval_grad(point)?;
    let f_x = fj.1.rows(0, pp.m).into_owned();
    Ok(Example2Value {
        form: quad(&pp.robert2(), xi)?,
        h: fj.0 - pp.contract(&pp.b_y, &f_x),
        h_z: pp.f_z - pp.contract(&pp.b_y, &pp.f_xz),
        h_zz: pp.f_zz - pp.contract(&pp.b_y, &pp.f_xzz),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Example3Value {
    pub form: f64,
    pub h: f64,
}

/// Inhomogeneous criterion with cost for `G = b - f(x, z)`, `pi = z - a(y)`.
pub fn criterion_example3(
    spec: &ModelSpec,
    point: &[f64],
    xi: &[f64],
) -> Result<Example3Value, CertifyError> {
    let fam = family_of(spec)?;
    let pp = Parts::at(fam, point)?;
    let (bracket, h) = pp.robert3(point)?;
    Ok(Example3Value {
        form: quad(&bracket, xi)?,
        h,
    })
}

/// Closed-form bracket matrix and `h` value at a point for any non zero-sum
/// family. The criterion matrix of the family is `diag(-bracket, -h)`.
pub fn closed_form_bracket(
    spec: &ModelSpec,
    point: &[f64],
) -> Result<(DMatrix<f64>, f64), CertifyError> {
    let fam = family_of(spec)?;
    Parts::at(fam, point)?.robert3(point)
}

/// Criterion matrix from the closed forms: `diag(-bracket, -h)` for the
/// example families and zero for zero-sum profits.
pub fn closed_form_matrix(
    spec: &ModelSpec,
    point: &[f64],
) -> Result<CriterionSample, CertifyError> {
    if let Some(f) = spec.family() {
        if f.kind == FamilyKind::ZeroSumProfit {
            let k = spec.n() + 1;
            return Ok(CriterionSample::new(point, &DMatrix::zeros(k, k), 0.0));
        }
    }
    let (bracket, h) = closed_form_bracket(spec, point)?;
    let n = bracket.nrows();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(&(-&bracket));
    a[(n, n)] = -h;
    let asymmetry = (&a - a.transpose()).norm();
    let sym = (&a + a.transpose()) * 0.5;
    Ok(CriterionSample::new(point, &sym, asymmetry))
}

/// Certificate from the closed-form criterion on the same samples as
/// [`certify_lemma49`](super::certify_lemma49).
pub fn certify_closed_form(
    spec: &ModelSpec,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<CertificationReport, CertifyError> {
    if spec.family().is_none() {
        return Err(CertifyError::FamilyMismatch(
            "model was not built from a family template".into(),
        ));
    }
    certify_with(spec, samples, tol, seed, |p| closed_form_matrix(spec, p))
}

/// Signed margin `max over s = +-1 of min over points of eig_min(s * bracket)`
/// when the model is a non zero-sum family.
pub fn family_margin(spec: &ModelSpec, points: &[Vec<f64>]) -> Result<Option<f64>, CertifyError> {
    if family_of(spec).is_err() || points.is_empty() {
        return Ok(None);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let (e_min, e_max) = sym_eig_range(&closed_form_bracket(spec, p)?.0);
        lo = lo.min(e_min);
        hi = hi.max(e_max);
    }
    Ok(Some(lo.max(-hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::criterion_matrix;
    use crate::expr::VarSpace;
    use crate::model::sample::sample_box;
    use crate::model::{builtin, Contract, Domains, Measure};

    fn family_model(kind: FamilyKind, b: &str, f: &str, a: &str) -> ModelSpec {
        let fam = Family::parse(kind, VarSpace::new(1, 1), b, Some(f), Some(a)).unwrap();
        let d = Domains {
            x: vec![(0.5, 1.5)],
            y: vec![(0.0, 1.0)],
            z: (0.0, 1.0),
        };
        ModelSpec::from_family(d, fam, Contract::new(vec![0.0], 0.0), Measure::Uniform).unwrap()
    }

    #[test]
    fn example1_quasilinear_is_one() {
        let spec = builtin("quasilinear").unwrap();
        assert!((criterion_example1(&spec, &[0.3, 0.4, 0.5], &[1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            criterion_example1(&spec, &[0.3, 0.4, 0.5], &[0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn example1_rejects_inhomogeneous() {
        let spec = builtin("inhomogeneous").unwrap();
        assert!(matches!(
            criterion_example1(&spec, &[0.3, 0.4, 0.5], &[1.0]),
            Err(CertifyError::FamilyMismatch(_))
        ));
        let zs = builtin("zero_sum_profit").unwrap();
        assert!(matches!(
            criterion_example3(&zs, &[0.3, 0.4, 0.5], &[1.0]),
            Err(CertifyError::FamilyMismatch(_))
        ));
    }

    #[test]
    fn example2_hand_values() {
        let spec = family_model(FamilyKind::Quasilinear, "x1*y1", "z", "0");
        let v = criterion_example2(&spec, &[0.7, 0.4, 0.3], &[1.0]).unwrap();
        assert_eq!(v.form, 0.0);
        assert!((v.h - 0.3).abs() < 1e-15);
        assert_eq!((v.h_z, v.h_zz), (1.0, 0.0));
        let q = builtin("quasilinear").unwrap();
        assert!(criterion_example2(&q, &[0.7, 0.4, 0.3], &[1.0]).is_err());
    }

    #[test]
    fn example3_reduces_to_example1() {
        let spec = builtin("quasilinear").unwrap();
        let v = criterion_example3(&spec, &[0.3, 0.4, 0.5], &[1.0]).unwrap();
        assert!((v.form - 1.0).abs() < 1e-12);
        assert!(v.h.abs() < 1e-12);
        let ps = builtin("price_sensitive").unwrap();
        for p in sample_box(&ps.xyz_bounds(), 20, 3) {
            let e1 = criterion_example1(&ps, &p, &[0.7]).unwrap();
            let e3 = criterion_example3(&ps, &p, &[0.7]).unwrap().form;
            assert!((e1 - e3).abs() < 1e-10 * e1.abs().max(1.0));
        }
    }

    #[test]
    fn example3_without_cost_matches_example2() {
        let spec = family_model(
            FamilyKind::Inhomogeneous,
            "x1*y1 + y1^2*x1^2/4",
            "z + x1*z^2/2",
            "0",
        );
        for p in sample_box(&spec.xyz_bounds(), 20, 5) {
            let e2 = criterion_example2(&spec, &p, &[1.0]).unwrap();
            let e3 = criterion_example3(&spec, &p, &[1.0]).unwrap();
            // with a = 0 the bracket is form / h_z and h = h_zz / h_z
            assert!((e3.form - e2.form / e2.h_z).abs() < 1e-9, "{e3:?} {e2:?}");
            assert!((e3.h - e2.h_zz / e2.h_z).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_matches_generic_matrix() {
        let spec = family_model(
            FamilyKind::Inhomogeneous,
            "x1*y1 + y1^2*x1^2/4",
            "z + x1*z^2/2 + x1^2*z",
            "y1^2/3",
        );
        for p in sample_box(&spec.xyz_bounds(), 50, 7) {
            let a = criterion_matrix(&spec, &p).unwrap().matrix();
            let (bracket, h) = closed_form_bracket(&spec, &p).unwrap();
            assert!((a[(0, 0)] + bracket[(0, 0)]).abs() < 1e-6 * bracket[(0, 0)].abs().max(1.0));
            assert!((a[(1, 1)] + h).abs() < 1e-6 * h.abs().max(1.0));
            assert!(a[(0, 1)].abs() < 1e-6);
        }
    }

    #[test]
    fn closed_form_certificates_match_generic_ones() {
        for name in crate::model::BUILTIN_NAMES {
            let spec = builtin(name).unwrap();
            let a = crate::certify::certify_lemma49(&spec, 256, 1e-8, 3).unwrap();
            let b = certify_closed_form(&spec, 256, 1e-8, 3).unwrap();
            assert_eq!(a.verdict, b.verdict, "{name}");
            assert!((a.lambda - b.lambda).abs() < 1e-6);
        }
        let d = Domains {
            x: vec![(0.0, 1.0)],
            y: vec![(0.0, 1.0)],
            z: (0.0, 1.0),
        };
        let plain =
            ModelSpec::from_strings(d, "x1*y1 - z", "z", Contract::new(vec![0.0], 0.0)).unwrap();
        assert!(certify_closed_form(&plain, 16, 1e-8, 0).is_err());
    }

    #[test]
    fn singular_denominator() {
        // f_z = x and b_y b^{x,y} f_{x,z} = x, so the denominator vanishes identically
        let spec = family_model(FamilyKind::Inhomogeneous, "x1*y1", "x1*z", "0");
        assert!(matches!(
            criterion_example3(&spec, &[1.0, 0.5, 0.2], &[1.0]),
            Err(CertifyError::SingularDenominator { .. })
        ));
    }

    #[test]
    fn margin_for_builtins() {
        let spec = builtin("price_sensitive").unwrap();
        let pts = sample_box(&spec.xyz_bounds(), 32, 1);
        assert!((family_margin(&spec, &pts).unwrap().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(
            family_margin(&builtin("zero_sum_profit").unwrap(), &pts).unwrap(),
            None
        );
    }
}
