use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::CertifyError;
use crate::geometry::{segment_second_differences, solve_g_segment};
use crate::linalg::{lstsq, twist_matrix, twist_value};
use crate::model::sample::sample_box;
use crate::model::{marginal_rate, Contract, ModelSpec};

/// Default tolerance of the fourth-order test.
pub const FOURTH_ORDER_TOL: f64 = 1e-6;
/// Step of the central second difference in `s`.
const S_STEP: f64 = 1e-3;
/// Number of t-steps of the segment used for the direct comparison.
const T_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourthOrderSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub from: Contract,
    pub to: Contract,
    pub t0: f64,
    /// `d^2/ds^2 ((1/G_z) d^2/dt^2 G)` at `s = 0`.
    pub value: f64,
    /// Second difference in `t` of `G(x1, y_t, z_t)` at `t0` on the segment
    /// of `x0`.
    pub direct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourthOrderReport {
    pub min: f64,
    pub max: f64,
    pub tol: f64,
    pub evaluated: usize,
    pub failed: usize,
    /// Configurations where the sign verdicts of both tests agree.
    pub agreements: usize,
    /// Disagreements where both values lie beyond `10 * tol` of zero.
    pub severe_disagreements: usize,
    /// Samples with `value > tol`.
    pub witnesses: Vec<FourthOrderSample>,
    /// Samples with `direct < -tol`.
    pub direct_witnesses: Vec<FourthOrderSample>,
    pub disagreements: Vec<FourthOrderSample>,
}

impl FourthOrderReport {
    pub fn agreement_rate(&self) -> f64 {
        if self.evaluated == 0 {
            return 0.0;
        }
        self.agreements as f64 / self.evaluated as f64
    }

    /// No sampled violation of the fourth-order inequality.
    pub fn supports_g3(&self) -> bool {
        self.evaluated > 0 && self.max <= self.tol
    }
}

/// Newton solve of `G_y/G_z(x, ybar) = target` for `x`, warm-started at
/// `start`, staying inside `cl(X)`.
fn solve_marginal(
    spec: &ModelSpec,
    ybar: &[f64],
    target: &DVector<f64>,
    start: &[f64],
) -> Result<Vec<f64>, CertifyError> {
    let bounds = &spec.domains().x;
    let mut x = start.to_vec();
    let resid = |x: &[f64]| -> Result<(DVector<f64>, DMatrix<f64>), CertifyError> {
        let (v, j) = marginal_rate(spec, x, ybar)?;
        Ok((DVector::from_vec(v) - target, j))
    };
    let (mut r, mut j) = resid(&x)?;
    let floor = 1e-15 * (1.0 + target.amax());
    for _ in 0..60 {
        let norm = r.norm();
        if norm <= floor {
            break;
        }
        let delta = lstsq(&j, &r)
            .ok_or_else(|| CertifyError::NoConvergence(format!("singular x-Jacobian at {x:?}")))?;
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x
                .iter()
                .zip(delta.iter())
                .map(|(a, d)| a - alpha * d)
                .collect();
            if let Ok((rt, jt)) = resid(&trial) {
                if rt.norm() < norm {
                    next = Some((trial, rt, jt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match next {
            Some((xt, rt, jt)) => {
                x = xt;
                r = rt;
                j = jt;
            }
            None => break,
        }
    }
    let res = r.norm();
    if res > 1e-12 * (1.0 + target.amax()) {
        return Err(CertifyError::NoConvergence(format!(
            "x_s solve stalled at residual {res:e}"
        )));
    }
    let inside = x
        .iter()
        .zip(bounds)
        .all(|(v, &(lo, hi))| *v >= lo - 1e-9 && *v <= hi + 1e-9);
    if !inside {
        return Err(CertifyError::DomainExit { point: x });
    }
    Ok(x)
}

/// `ydot^T G_{ybar ybar}(x, ybar) ydot / G_z(x, ybar)`.
fn curvature(
    spec: &ModelSpec,
    x: &[f64],
    ybar: &[f64],
    ydot: &DVector<f64>,
) -> Result<f64, CertifyError> {
    let jet = spec.g().jet2(&spec.point_ybar(x, ybar))?;
    let (m, k) = (spec.m(), ydot.len());
    let h = jet.hessian.view((m, m), (k, k));
    Ok((ydot.transpose() * h * ydot)[0] / jet.gradient[spec.space().z()])
}

/// Evaluate one configuration. The t-curve is the G-segment of `x0`
/// between `from` and `to`; its velocity at `t0` comes from differentiating
/// the segment equation. Along the s-curve on which `G_y/G_z(x_s, ybar_t0)`
/// is affine, the acceleration part `(G_ybar/G_z) . ybar''` of
/// `(1/G_z) d^2/dt^2 G` is affine in `s`, so the second s-difference only
/// sees the velocity part.
pub fn fourth_order_at(
    spec: &ModelSpec,
    x0: &[f64],
    x1: &[f64],
    from: &Contract,
    to: &Contract,
    step: usize,
) -> Result<FourthOrderSample, CertifyError> {
    if spec.m() != spec.n() {
        return Err(CertifyError::Invalid(
            "the fourth-order test needs m = n".into(),
        ));
    }
    if step == 0 || step >= T_STEPS {
        return Err(CertifyError::Invalid(format!(
            "t-step index must lie in 1..{T_STEPS}"
        )));
    }
    let seg = solve_g_segment(spec, x0, from, to, T_STEPS)?;
    let t0 = step as f64 / T_STEPS as f64;
    let ybar = seg.samples[step].contract().ybar();
    let phi = |c: &Contract| -> Result<DVector<f64>, CertifyError> {
        Ok(twist_value(spec, &spec.g().jet2(&spec.point(x0, c))?))
    };
    let chord = phi(to)? - phi(from)?;
    let jet = spec.g().jet2(&spec.point_ybar(x0, &ybar))?;
    let ydot =
        lstsq(&twist_matrix(spec, &jet), &chord).ok_or_else(|| CertifyError::RankDeficient {
            point: spec.point_ybar(x0, &ybar),
        })?;

    let p0 = DVector::from_vec(marginal_rate(spec, x0, &ybar)?.0);
    let p1 = DVector::from_vec(marginal_rate(spec, x1, &ybar)?.0);
    let dir = &p1 - &p0;
    let xm = solve_marginal(spec, &ybar, &(&p0 - &dir * S_STEP), x0)?;
    let xp = solve_marginal(spec, &ybar, &(&p0 + &dir * S_STEP), x0)?;
    let g = |x: &[f64]| curvature(spec, x, &ybar, &ydot);
    let value = (g(&xp)? - 2.0 * g(x0)? + g(&xm)?) / (S_STEP * S_STEP);
    let direct = segment_second_differences(spec, &seg, x1)?[step - 1];
    Ok(FourthOrderSample {
        x0: x0.to_vec(),
        x1: x1.to_vec(),
        from: from.clone(),
        to: to.clone(),
        t0,
        value,
        direct,
    })
}

fn agrees(s: &FourthOrderSample, tol: f64) -> bool {
    (s.value <= tol) == (s.direct >= -tol)
}

/// Sampled fourth-order test with cross-validation against the direct
/// segment-convexity test at the second agent.
pub fn fourth_order_test(
    spec: &ModelSpec,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<FourthOrderReport, CertifyError> {
    if spec.m() != spec.n() {
        return Err(CertifyError::Invalid(
            "the fourth-order test needs m = n".into(),
        ));
    }
    let (m, k) = (spec.m(), spec.n() + 1);
    let mut bounds = spec.domains().x.clone();
    bounds.extend(spec.domains().x.iter().cloned());
    bounds.extend(spec.ybar_bounds());
    bounds.extend(spec.ybar_bounds());
    bounds.push((0.0, 1.0));
    let pts = sample_box(&bounds, samples, seed);
    let results: Vec<Result<FourthOrderSample, CertifyError>> = pts
        .par_iter()
        .map(|p| {
            let x0 = &p[..m];
            let x1 = &p[m..2 * m];
            let from = Contract::from_ybar(&p[2 * m..2 * m + k]);
            let to = Contract::from_ybar(&p[2 * m + k..2 * m + 2 * k]);
            let step = 1 + ((p[2 * m + 2 * k] * (T_STEPS - 1) as f64) as usize).min(T_STEPS - 2);
            fourth_order_at(spec, x0, x1, &from, &to, step)
        })
        .collect();
    let mut report = FourthOrderReport {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        tol,
        evaluated: 0,
        failed: 0,
        agreements: 0,
        severe_disagreements: 0,
        witnesses: Vec::new(),
        direct_witnesses: Vec::new(),
        disagreements: Vec::new(),
    };
    for r in results {
        let Ok(s) = r else {
            report.failed += 1;
            continue;
        };
        report.evaluated += 1;
        report.min = report.min.min(s.value);
        report.max = report.max.max(s.value);
        if agrees(&s, tol) {
            report.agreements += 1;
        } else {
            if s.value.abs() >= 10.0 * tol && s.direct.abs() >= 10.0 * tol {
                report.severe_disagreements += 1;
            }
            report.disagreements.push(s.clone());
        }
        if s.value > tol {
            report.witnesses.push(s.clone());
        }
        if s.direct < -tol {
            report.direct_witnesses.push(s);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, Domains};

    fn violating_model() -> ModelSpec {
        let d = Domains {
            x: vec![(0.0, 0.4)],
            y: vec![(0.0, 1.0)],
            z: (0.0, 1.0),
        };
        ModelSpec::from_strings(
            d,
            "x1*y1 - x1^2*y1^3/3 - z",
            "z",
            Contract::new(vec![0.0], 0.0),
        )
        .unwrap()
    }

    #[test]
    fn quasilinear_expression_vanishes() {
        let spec = builtin("quasilinear").unwrap();
        let r = fourth_order_test(&spec, 64, FOURTH_ORDER_TOL, 1).unwrap();
        assert_eq!(r.failed, 0);
        assert!(
            r.min.abs() < 1e-9 && r.max.abs() < 1e-9,
            "{} {}",
            r.min,
            r.max
        );
        assert_eq!(r.agreements, r.evaluated);
    }

    #[test]
    fn builtins_support_g3() {
        for name in ["price_sensitive", "inhomogeneous"] {
            let spec = builtin(name).unwrap();
            let r = fourth_order_test(&spec, 64, FOURTH_ORDER_TOL, 3).unwrap();
            assert!(r.supports_g3(), "{name}: {r:?}");
            assert_eq!(r.severe_disagreements, 0);
        }
    }

    #[test]
    fn violation_seen_by_both_tests() {
        let spec = violating_model();
        let r = fourth_order_test(&spec, 128, FOURTH_ORDER_TOL, 5).unwrap();
        assert!(!r.witnesses.is_empty(), "{r:?}");
        assert!(!r.direct_witnesses.is_empty());
    }

    #[test]
    fn hand_configuration() {
        // for G = b(x, y) - z the expression reduces to -d^2/ds^2 of
        // ydot^2 b_yy(x_s, y); with b = x y - x^2 y^3 / 3 at y0 = y1 there is
        // no motion in y and the value is zero
        let spec = violating_model();
        let s = fourth_order_at(
            &spec,
            &[0.1],
            &[0.3],
            &Contract::new(vec![0.5], 0.1),
            &Contract::new(vec![0.5], 0.6),
            32,
        )
        .unwrap();
        assert!(s.value.abs() < 1e-9 && s.direct.abs() < 1e-12, "{s:?}");
    }

    #[test]
    fn rejects_unequal_dimensions() {
        let d = Domains {
            x: vec![(0.0, 1.0), (0.0, 1.0)],
            y: vec![(0.0, 1.0)],
            z: (0.0, 1.0),
        };
        let spec =
            ModelSpec::from_strings(d, "x1*y1 + x2*y1^2 - z", "z", Contract::new(vec![0.0], 0.0))
                .unwrap();
        assert!(matches!(
            fourth_order_test(&spec, 4, FOURTH_ORDER_TOL, 1),
            Err(CertifyError::Invalid(_))
        ));
    }
}
