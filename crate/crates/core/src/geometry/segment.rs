// G-segments: curves t -> (y_t, z_t) along which (G_x, G)(x0, .) moves on
// the chord between its values at the two endpoints.

use nalgebra::DVector;
use serde::Serialize;

use super::{GeometryError, IndirectUtility};
use crate::linalg::{lstsq, twist_matrix, twist_value};
use crate::model::sample::sample_box;
use crate::model::{Contract, ModelSpec};

/// Residual below which a segment point is accepted.
pub const SEGMENT_TOL: f64 = 1e-8;
/// Default number of uniform t-steps.
pub const DEFAULT_STEPS: usize = 64;
const MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSample {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: f64,
    pub residual: f64,
}

impl SegmentSample {
    pub fn contract(&self) -> Contract {
        Contract::new(self.y.clone(), self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GSegment {
    pub x0: Vec<f64>,
    pub from: Contract,
    pub to: Contract,
    pub samples: Vec<SegmentSample>,
}

fn phi(spec: &ModelSpec, x0: &[f64], ybar: &[f64]) -> Result<DVector<f64>, GeometryError> {
    let jet = spec.g().jet2(&spec.point_ybar(x0, ybar))?;
    Ok(twist_value(spec, &jet))
}

fn inside(spec: &ModelSpec, ybar: &[f64]) -> bool {
    ybar.iter().zip(spec.ybar_bounds()).all(|(v, (lo, hi))| {
        let slack = 1e-7 * (1.0 + (hi - lo));
        *v >= lo - slack && *v <= hi + slack
    })
}

/// Gauss-Newton on `(G_x, G)(x0, ybar) = target` with backtracking (step
/// halving) on the residual norm. Returns the iterate and its residual.
pub(crate) fn solve_point(
    spec: &ModelSpec,
    x0: &[f64],
    target: &DVector<f64>,
    start: &[f64],
    t: f64,
) -> Result<(Vec<f64>, f64), GeometryError> {
    let mut cur = start.to_vec();
    let mut r = phi(spec, x0, &cur)? - target;
    let floor = 1e-15 * (1.0 + target.amax());
    for _ in 0..MAX_ITER {
        let norm = r.norm();
        if norm <= floor {
            break;
        }
        let jet = spec.g().jet2(&spec.point_ybar(x0, &cur))?;
        let j = twist_matrix(spec, &jet);
        let Some(delta) = lstsq(&j, &r) else {
            return Err(GeometryError::NoConvergence {
                t,
                last: cur,
                residual: norm,
            });
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = cur
                .iter()
                .zip(delta.iter())
                .map(|(c, d)| c - alpha * d)
                .collect();
            if let Ok(v) = phi(spec, x0, &trial) {
                let rt = v - target;
                if rt.norm() < norm {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, rt)) => {
                cur = trial;
                r = rt;
            }
            None => break,
        }
        if !inside(spec, &cur) {
            return Err(GeometryError::LeftDomain { t, point: cur });
        }
    }
    let res = r.norm();
    if res < SEGMENT_TOL {
        Ok((cur, res))
    } else {
        Err(GeometryError::NoConvergence {
            t,
            last: cur,
            residual: res,
        })
    }
}

/// Solve the G-segment from `from` to `to` at agent `x0` on `steps` uniform
/// t-steps, by continuation with a secant predictor.
pub fn solve_g_segment(
    spec: &ModelSpec,
    x0: &[f64],
    from: &Contract,
    to: &Contract,
    steps: usize,
) -> Result<GSegment, GeometryError> {
    if steps < 2 {
        return Err(GeometryError::InvalidInput(
            "a segment needs at least 2 steps".into(),
        ));
    }
    if x0.len() != spec.m() || from.y.len() != spec.n() || to.y.len() != spec.n() {
        return Err(GeometryError::InvalidInput(
            "segment endpoint dimensions do not match the model".into(),
        ));
    }
    let (a, b) = (from.ybar(), to.ybar());
    if !inside(spec, &a) || !inside(spec, &b) {
        return Err(GeometryError::InvalidInput(
            "segment endpoints must lie in cl(Y x Z)".into(),
        ));
    }
    if a == b {
        let samples = (0..=steps)
            .map(|k| SegmentSample {
                t: k as f64 / steps as f64,
                y: from.y.clone(),
                z: from.z,
                residual: 0.0,
            })
            .collect();
        return Ok(GSegment {
            x0: x0.to_vec(),
            from: from.clone(),
            to: to.clone(),
            samples,
        });
    }
    let f0 = phi(spec, x0, &a)?;
    let f1 = phi(spec, x0, &b)?;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(SegmentSample {
        t: 0.0,
        y: from.y.clone(),
        z: from.z,
        residual: 0.0,
    });
    let mut prev = a.clone();
    let mut prev2: Option<Vec<f64>> = None;
    for k in 1..steps {
        let t = k as f64 / steps as f64;
        let target = &f0 * (1.0 - t) + &f1 * t;
        let guess: Vec<f64> = match &prev2 {
            Some(p2) => {
                let mut g: Vec<f64> = prev.iter().zip(p2).map(|(p, q)| 2.0 * p - q).collect();
                spec.clamp_ybar(&mut g);
                g
            }
            None => prev
                .iter()
                .zip(&b)
                .map(|(p, q)| p + (q - p) / steps as f64)
                .collect(),
        };
        let (pt, residual) = match solve_point(spec, x0, &target, &guess, t) {
            Ok(ok) => ok,
            Err(_) => solve_point(spec, x0, &target, &prev, t)?,
        };
        let c = Contract::from_ybar(&pt);
        samples.push(SegmentSample {
            t,
            y: c.y,
            z: c.z,
            residual,
        });
        prev2 = Some(std::mem::replace(&mut prev, pt));
    }
    samples.push(SegmentSample {
        t: 1.0,
        y: to.y.clone(),
        z: to.z,
        residual: 0.0,
    });
    Ok(GSegment {
        x0: x0.to_vec(),
        from: from.clone(),
        to: to.clone(),
        samples,
    })
}

impl GSegment {
    /// Point of the segment at an arbitrary `t in [0, 1]`, warm-started from
    /// the nearest stored sample.
    pub fn point_at(&self, spec: &ModelSpec, t: f64) -> Result<(Contract, f64), GeometryError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(GeometryError::InvalidInput(format!(
                "t = {t} outside [0, 1]"
            )));
        }
        if let Some(s) = self.samples.iter().find(|s| s.t == t) {
            return Ok((s.contract(), s.residual));
        }
        let f0 = phi(spec, &self.x0, &self.from.ybar())?;
        let f1 = phi(spec, &self.x0, &self.to.ybar())?;
        let target = &f0 * (1.0 - t) + &f1 * t;
        let nearest = self
            .samples
            .iter()
            .min_by(|p, q| (p.t - t).abs().total_cmp(&(q.t - t).abs()))
            .expect("segments have samples");
        let (pt, res) = solve_point(spec, &self.x0, &target, &nearest.contract().ybar(), t)?;
        Ok((Contract::from_ybar(&pt), res))
    }

    /// Largest deviation of `(G_x, G)(x0, y_t, z_t)` from the chord,
    /// recomputed from the stored samples.
    pub fn chord_deviation(&self, spec: &ModelSpec) -> Result<f64, GeometryError> {
        let f0 = phi(spec, &self.x0, &self.from.ybar())?;
        let f1 = phi(spec, &self.x0, &self.to.ybar())?;
        let mut worst: f64 = 0.0;
        for s in &self.samples {
            let v = phi(spec, &self.x0, &s.contract().ybar())?;
            worst = worst.max((v - (&f0 * (1.0 - s.t) + &f1 * s.t)).norm());
        }
        Ok(worst)
    }
}

/// Allocation of the pointwise combination `(1 - t) u0 + t u1`: each agent
/// moves to the point at `t` of its own G-segment between the two chosen
/// contracts, so that `(G_x, G)` at the agent interpolates linearly.
pub fn interpolate_allocation(
    spec: &ModelSpec,
    u0: &IndirectUtility,
    u1: &IndirectUtility,
    t: f64,
) -> Result<IndirectUtility, GeometryError> {
    if u0.agents != u1.agents {
        return Err(GeometryError::InvalidInput(
            "utilities live on different grids".into(),
        ));
    }
    let (a0, a1) = match (&u0.assignment, &u1.assignment) {
        (Some(a0), Some(a1)) => (a0, a1),
        _ => return Err(GeometryError::MissingAssignment),
    };
    let mut assignment = Vec::with_capacity(a0.len());
    for ((x, c0), c1) in u0.agents.points.iter().zip(a0).zip(a1) {
        if c0 == c1 {
            assignment.push(c0.clone());
            continue;
        }
        let seg = solve_g_segment(spec, x, c0, c1, DEFAULT_STEPS)?;
        assignment.push(seg.point_at(spec, t)?.0);
    }
    IndirectUtility::from_assignment(spec, u0.agents.clone(), assignment)
}

/// Outcome of the sampled G3 test along one segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G3Result {
    pub convex: bool,
    pub strictly: bool,
    pub min_second_difference: f64,
    /// Agent and `t` of the most negative second difference when not convex.
    pub witness: Option<(Vec<f64>, f64)>,
}

/// Second differences of `t -> G(x, y_t, z_t)` on the segment grid.
pub fn segment_second_differences(
    spec: &ModelSpec,
    seg: &GSegment,
    x: &[f64],
) -> Result<Vec<f64>, GeometryError> {
    let vals = seg
        .samples
        .iter()
        .map(|s| spec.utility(x, &s.contract()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(vals.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect())
}

/// Test discrete convexity of `G(x, .)` along the segment at the given
/// agents.
pub fn check_g3_at(
    spec: &ModelSpec,
    seg: &GSegment,
    agents: &[Vec<f64>],
) -> Result<G3Result, GeometryError> {
    let mut out = G3Result {
        convex: true,
        strictly: true,
        min_second_difference: f64::INFINITY,
        witness: None,
    };
    for x in agents {
        let at_x0 = x.iter().zip(&seg.x0).all(|(a, b)| (a - b).abs() <= 1e-12);
        for (k, d) in segment_second_differences(spec, seg, x)?
            .into_iter()
            .enumerate()
        {
            if d < out.min_second_difference {
                out.min_second_difference = d;
                if d < -1e-8 {
                    out.witness = Some((x.clone(), seg.samples[k + 1].t));
                }
            }
            if d < -1e-8 {
                out.convex = false;
            }
            if !at_x0 && d <= 1e-8 {
                out.strictly = false;
            }
        }
    }
    out.strictly &= out.convex;
    Ok(out)
}

/// [`check_g3_at`] at `probes` low-discrepancy agents.
pub fn check_g3_along_segment(
    spec: &ModelSpec,
    seg: &GSegment,
    probes: usize,
    seed: u64,
) -> Result<G3Result, GeometryError> {
    let agents = sample_box(&spec.domains().x, probes, seed);
    check_g3_at(spec, seg, &agents)
}
