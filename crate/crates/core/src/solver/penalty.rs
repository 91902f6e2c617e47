// Quadratic-penalty formulation of the discrete principal's program in the
// contract variables, and a spectral projected-gradient ascent on it.

use std::collections::VecDeque;

use super::SolverError;
use crate::geometry::AgentGrid;
use crate::model::{Contract, ModelSpec};

const LINE_SEARCH_MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e4;

/// Penalized objective value, gradient and constraint data at one point.
#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Largest IC or IR violation (0 when feasible).
    pub violation: f64,
}

pub(crate) struct Problem<'a> {
    pub spec: &'a ModelSpec,
    pub agents: &'a AgentGrid,
    pub outside: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub k: usize,
}

impl<'a> Problem<'a> {
    pub fn new(spec: &'a ModelSpec, agents: &'a AgentGrid) -> Result<Self, SolverError> {
        let outside = agents
            .points
            .iter()
            .map(|x| spec.outside_utility(x))
            .collect::<Result<Vec<_>, _>>()?;
        let per = spec.ybar_bounds();
        let bounds = (0..agents.len())
            .flat_map(|_| per.iter().cloned())
            .collect();
        Ok(Problem {
            spec,
            agents,
            outside,
            bounds,
            k: spec.n() + 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.agents.len() * self.k
    }

    pub fn project(&self, v: &mut [f64]) {
        for (x, &(lo, hi)) in v.iter_mut().zip(&self.bounds) {
            *x = x.clamp(lo, hi);
        }
    }

    pub fn contracts(&self, v: &[f64]) -> Vec<Contract> {
        v.chunks(self.k).map(Contract::from_ybar).collect()
    }

    pub fn encode(&self, contracts: &[Contract]) -> Vec<f64> {
        contracts.iter().flat_map(|c| c.ybar()).collect()
    }

    fn point(&self, i: usize, c: &[f64]) -> Vec<f64> {
        let mut p = self.agents.points[i].clone();
        p.extend_from_slice(c);
        p
    }

    /// `G(x_i, c_j)` and its `(y, z)`-gradients for all pairs, row-major in
    /// `(i, j)`.
    pub fn utility_table(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
        let (n, k, m) = (self.agents.len(), self.k, self.spec.m());
        let mut ev = self.spec.g().evaluator();
        let mut val = vec![0.0; n * n];
        let mut grad = vec![0.0; n * n * k];
        for i in 0..n {
            for j in 0..n {
                let p = self.point(i, &v[j * k..(j + 1) * k]);
                val[i * n + j] = ev.gradient(&p)?;
                grad[(i * n + j) * k..(i * n + j + 1) * k].copy_from_slice(&ev.grad()[m..m + k]);
            }
        }
        Ok((val, grad))
    }

    /// Expected profit and its gradient.
    pub fn profit(&self, v: &[f64]) -> Result<(f64, Vec<f64>), SolverError> {
        let (k, m) = (self.k, self.spec.m());
        let mut ev = self.spec.pi().evaluator();
        let mut total = 0.0;
        let mut grad = vec![0.0; v.len()];
        for (i, w) in self.agents.weights.iter().enumerate() {
            let p = self.point(i, &v[i * k..(i + 1) * k]);
            total += w * ev.gradient(&p)?;
            for (g, d) in grad[i * k..(i + 1) * k]
                .iter_mut()
                .zip(&ev.grad()[m..m + k])
            {
                *g = w * d;
            }
        }
        Ok((total, grad))
    }

    /// `sum mu_i pi_i - rho/2 sum (lambda_a/rho - s_a)_+^2` over the IR
    /// slacks `s_ii` and IC slacks `s_ij`. Multipliers are indexed like the
    /// utility table, with IR on the diagonal; zero multipliers give the
    /// plain quadratic penalty.
    pub fn eval(&self, v: &[f64], rho: f64, mult: &[f64]) -> Result<Eval, SolverError> {
        let (n, k) = (self.agents.len(), self.k);
        let (profit, mut grad) = self.profit(v)?;
        let (val, gg) = self.utility_table(v)?;
        let mut pen = 0.0;
        let mut violation: f64 = 0.0;
        let push = |grad: &mut [f64], target: usize, src: usize, coef: f64| {
            for c in 0..k {
                grad[target * k + c] += coef * gg[src * k + c];
            }
        };
        for i in 0..n {
            let own = val[i * n + i];
            for j in 0..n {
                let s = if j == i {
                    own - self.outside[i]
                } else {
                    own - val[i * n + j]
                };
                violation = violation.max(-s);
                let r = (mult[i * n + j] / rho - s).max(0.0);
                if r > 0.0 {
                    pen += r * r;
                    push(&mut grad, i, i * n + i, rho * r);
                    if j != i {
                        push(&mut grad, j, i * n + j, -rho * r);
                    }
                }
            }
        }
        Ok(Eval {
            value: profit - 0.5 * rho * pen,
            grad,
            violation,
        })
    }

    /// First-order multiplier update `lambda <- (lambda - rho s)_+`.
    pub fn update_multipliers(
        &self,
        v: &[f64],
        rho: f64,
        mult: &mut [f64],
    ) -> Result<(), SolverError> {
        let n = self.agents.len();
        let (val, _) = self.utility_table(v)?;
        for i in 0..n {
            let own = val[i * n + i];
            for j in 0..n {
                let s = if j == i {
                    own - self.outside[i]
                } else {
                    own - val[i * n + j]
                };
                mult[i * n + j] = (mult[i * n + j] - rho * s).max(0.0);
            }
        }
        Ok(())
    }

    /// Sup-norm of the projected gradient step `P(v + g) - v`.
    pub fn projected_gradient(&self, v: &[f64], g: &[f64]) -> f64 {
        v.iter()
            .zip(g)
            .zip(&self.bounds)
            .map(|((x, d), &(lo, hi))| ((x + d).clamp(lo, hi) - x).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) struct InnerResult {
    pub v: Vec<f64>,
    pub eval: Eval,
    pub iterations: usize,
    pub pg: f64,
}

/// Spectral projected-gradient ascent with Barzilai-Borwein steps and a
/// nonmonotone backtracking line search.
pub(crate) fn spg(
    problem: &Problem,
    v0: &[f64],
    rho: f64,
    mult: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<InnerResult, SolverError> {
    let mut v = v0.to_vec();
    problem.project(&mut v);
    let mut e = problem.eval(&v, rho, mult)?;
    let mut hist: VecDeque<f64> = VecDeque::from([e.value]);
    let mut step = 1.0 / problem.projected_gradient(&v, &e.grad).max(1.0);
    let mut pg = problem.projected_gradient(&v, &e.grad);
    let mut it = 0;
    while it < max_iter && pg > tol {
        it += 1;
        let mut d: Vec<f64> = v.iter().zip(&e.grad).map(|(x, g)| x + step * g).collect();
        problem.project(&mut d);
        for (di, x) in d.iter_mut().zip(&v) {
            *di -= x;
        }
        let slope: f64 = d.iter().zip(&e.grad).map(|(a, b)| a * b).sum();
        let reference = hist.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = v.iter().zip(&d).map(|(x, di)| x + lambda * di).collect();
            let et = problem.eval(&trial, rho, mult)?;
            if et.value >= reference + ARMIJO * lambda * slope {
                accepted = Some((trial, et));
                break;
            }
            lambda *= 0.5;
        }
        let Some((trial, et)) = accepted else { break };
        let (mut ss, mut sy) = (0.0, 0.0);
        for c in 0..v.len() {
            let s = trial[c] - v[c];
            let y = e.grad[c] - et.grad[c];
            ss += s * s;
            sy += s * y;
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX
        };
        v = trial;
        e = et;
        hist.push_back(e.value);
        if hist.len() > LINE_SEARCH_MEMORY {
            hist.pop_front();
        }
        pg = problem.projected_gradient(&v, &e.grad);
    }
    Ok(InnerResult {
        v,
        eval: e,
        iterations: it,
        pg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = builtin("inhomogeneous").unwrap();
        let agents = AgentGrid::uniform(vec![vec![0.2], vec![0.5], vec![0.9]]).unwrap();
        let p = Problem::new(&spec, &agents).unwrap();
        // infeasible point so that penalty terms are active
        let v = vec![0.3, 0.5, 0.2, 0.1, 0.8, 0.9];
        let mult: Vec<f64> = (0..9).map(|a| 0.1 * (a % 4) as f64).collect();
        let e = p.eval(&v, 7.0, &mult).unwrap();
        assert!(e.violation > 0.0);
        for c in 0..v.len() {
            let h = 1e-6;
            let (mut a, mut b) = (v.clone(), v.clone());
            a[c] += h;
            b[c] -= h;
            let fd = (p.eval(&a, 7.0, &mult).unwrap().value
                - p.eval(&b, 7.0, &mult).unwrap().value)
                / (2.0 * h);
            assert!((fd - e.grad[c]).abs() < 1e-6, "{c}: {fd} vs {}", e.grad[c]);
        }
    }

    #[test]
    fn spg_single_agent() {
        let spec = builtin("quasilinear").unwrap();
        let agents = AgentGrid::uniform(vec![vec![1.0]]).unwrap();
        let p = Problem::new(&spec, &agents).unwrap();
        let mut v = vec![0.0, 0.0];
        let mut rho: f64 = 10.0;
        while rho < 1e4 {
            rho *= 2.0;
            v = spg(&p, &v, rho.min(1e4), &[0.0], 2000, 1e-10).unwrap().v;
        }
        // max z - y^2/2 - rho/2 (z - y)_+^2 on the box: y = 1, z = 1 + 1/rho
        assert!(
            (v[0] - 1.0).abs() < 1e-8 && (v[1] - 1.0 - 1e-4).abs() < 1e-7,
            "{v:?}"
        );
    }

    #[test]
    fn multipliers_remove_penalty_bias() {
        let spec = builtin("quasilinear").unwrap();
        let agents = AgentGrid::uniform(vec![vec![1.0]]).unwrap();
        let p = Problem::new(&spec, &agents).unwrap();
        let (mut v, mut mult) = (vec![0.0, 0.0], vec![0.0]);
        for _ in 0..30 {
            v = spg(&p, &v, 100.0, &mult, 2000, 1e-12).unwrap().v;
            p.update_multipliers(&v, 100.0, &mut mult).unwrap();
        }
        // the IR multiplier of max z - y^2/2 s.t. y - z >= 0 is 1
        assert!(
            (v[0] - 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9,
            "{v:?}"
        );
        assert!((mult[0] - 1.0).abs() < 1e-8);
    }
}
