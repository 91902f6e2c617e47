//! Discretized principal's program: per-agent contracts maximizing expected
//! profit under pairwise incentive compatibility and participation.

mod kkt;
mod penalty;
mod repair;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::ExprError;
use crate::geometry::{
    check_incentive_compatible, check_individually_rational, discrete_sobolev_distance,
    profit_functional, AgentGrid, GeometryError, IndirectUtility,
};
use crate::model::{Contract, ModelError, ModelSpec};
use penalty::{spg, Problem};

/// Slack allowed in a returned solution.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("no feasible assignment found")]
    Infeasible,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<ExprError> for SolverError {
    fn from(e: ExprError) -> Self {
        SolverError::Model(ModelError::Expr(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions {
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Random starts in addition to the pooling start.
    pub random_starts: usize,
    /// Include the start where every agent takes the outside option.
    pub pooling_start: bool,
    pub seed: u64,
    pub violation_tol: f64,
    pub gradient_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            penalty_init: 10.0,
            penalty_growth: 2.0,
            outer_iterations: 20,
            inner_iterations: 5000,
            random_starts: 3,
            pooling_start: true,
            seed: 0,
            violation_tol: 1e-8,
            gradient_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteInstance {
    pub spec: ModelSpec,
    pub agents: AgentGrid,
    pub options: SolverOptions,
}

impl DiscreteInstance {
    pub fn new(
        spec: ModelSpec,
        agents: AgentGrid,
        options: SolverOptions,
    ) -> Result<Self, SolverError> {
        if agents.is_empty() {
            return Err(SolverError::InvalidInput("the agent grid is empty".into()));
        }
        if agents.points.iter().any(|x| x.len() != spec.m()) {
            return Err(SolverError::InvalidInput(
                "agent dimension does not match the model".into(),
            ));
        }
        let total: f64 = agents.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || agents.weights.iter().any(|w| *w < 0.0) {
            return Err(SolverError::InvalidInput(
                "agent weights must be nonnegative and sum to 1".into(),
            ));
        }
        if options.outer_iterations == 0
            || !(options.penalty_init > 0.0)
            || !(options.penalty_growth >= 1.0)
        {
            return Err(SolverError::InvalidInput("invalid penalty schedule".into()));
        }
        if !options.pooling_start && options.random_starts == 0 {
            return Err(SolverError::InvalidInput(
                "at least one start is required".into(),
            ));
        }
        Ok(DiscreteInstance {
            spec,
            agents,
            options,
        })
    }

    /// Tensor grid on `cl(X)` with `counts` points per axis.
    pub fn on_grid(
        spec: ModelSpec,
        counts: &[usize],
        options: SolverOptions,
    ) -> Result<Self, SolverError> {
        let agents = AgentGrid::tensor(&spec, counts)?;
        DiscreteInstance::new(spec, agents, options)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub agents: AgentGrid,
    pub contracts: Vec<Contract>,
    pub utilities: Vec<f64>,
    pub profit: f64,
    /// Worst `G(x_i, c_i) - G(x_i, c_j)` (0 when there is a single agent).
    pub ic_residual: f64,
    /// Worst `G(x_i, c_i) - u_0(x_i)`.
    pub ir_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed: u64,
    /// Final penalty weight.
    pub penalty: f64,
    /// Best feasible profit after each outer iteration.
    pub trace: Vec<f64>,
}

impl Solution {
    pub fn indirect_utility(&self) -> IndirectUtility {
        IndirectUtility {
            agents: self.agents.clone(),
            values: self.utilities.clone(),
            assignment: Some(self.contracts.clone()),
        }
    }
}

fn finish(
    spec: &ModelSpec,
    agents: &AgentGrid,
    contracts: Vec<Contract>,
    seed: u64,
) -> Result<Solution, SolverError> {
    let alloc = IndirectUtility::from_assignment(spec, agents.clone(), contracts)?;
    let profit = profit_functional(spec, &alloc)?;
    let ic = check_incentive_compatible(spec, &alloc)?;
    let ir = check_individually_rational(spec, &alloc)?;
    Ok(Solution {
        agents: agents.clone(),
        contracts: alloc.assignment.clone().expect("built from an assignment"),
        utilities: alloc.values,
        profit,
        ic_residual: ic.worst_violation,
        ir_residual: ir.worst_violation,
        converged: false,
        iterations: 0,
        seed,
        penalty: 0.0,
        trace: Vec::new(),
    })
}

fn feasible(s: &Solution) -> bool {
    s.ic_residual >= -FEASIBILITY_TOL && s.ir_residual >= -FEASIBILITY_TOL
}

/// One penalty run from a start; returns the best feasible repaired
/// iterate seen along the schedule.
fn run_start(
    instance: &DiscreteInstance,
    start: Vec<Contract>,
    seed: u64,
) -> Result<Solution, SolverError> {
    let (spec, agents, opts) = (&instance.spec, &instance.agents, &instance.options);
    let problem = Problem::new(spec, agents)?;
    let mut v = problem.encode(&start);
    problem.project(&mut v);
    let mut best: Option<Solution> = None;
    let mut trace = Vec::with_capacity(opts.outer_iterations);
    let mut iterations = 0;
    let mut converged = false;
    let mut rho = opts.penalty_init;
    let mut mult = vec![0.0; agents.len() * agents.len()];
    let consider = |best: &mut Option<Solution>, cs: Vec<Contract>| -> Result<(), SolverError> {
        let fixed = repair::repair(spec, agents, &cs)?;
        let cand = finish(spec, agents, fixed, seed)?;
        if feasible(&cand) && best.as_ref().is_none_or(|b| cand.profit > b.profit) {
            *best = Some(cand);
        }
        Ok(())
    };
    consider(&mut best, problem.contracts(&v))?;
    for outer in 0..opts.outer_iterations {
        rho = opts.penalty_init * opts.penalty_growth.powi(outer as i32);
        let r = spg(
            &problem,
            &v,
            rho,
            &mult,
            opts.inner_iterations,
            opts.gradient_tol,
        )?;
        iterations += r.iterations;
        v = r.v;
        problem.update_multipliers(&v, rho, &mut mult)?;
        consider(&mut best, problem.contracts(&v))?;
        trace.push(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.profit));
        if r.eval.violation < opts.violation_tol && r.pg < opts.gradient_tol {
            converged = true;
            break;
        }
    }
    let mut sol = best.ok_or(SolverError::Infeasible)?;
    sol.converged = converged;
    sol.iterations = iterations;
    sol.penalty = rho;
    sol.trace = trace;
    Ok(sol)
}

fn random_start(spec: &ModelSpec, agents: usize, seed: u64) -> Vec<Contract> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = spec.ybar_bounds();
    (0..agents)
        .map(|_| {
            let yb: Vec<f64> = bounds
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo..=hi))
                .collect();
            Contract::from_ybar(&yb)
        })
        .collect()
}

/// Best of the multistart penalty runs, selected by profit and then by the
/// smaller seed.
pub fn solve_principal(instance: &DiscreteInstance) -> Result<Solution, SolverError> {
    let opts = &instance.options;
    let n = instance.agents.len();
    let mut starts: Vec<(u64, Vec<Contract>)> = Vec::new();
    if opts.pooling_start {
        starts.push((opts.seed, vec![instance.spec.outside().clone(); n]));
    }
    for r in 0..opts.random_starts {
        let seed = opts.seed.wrapping_add(1 + r as u64);
        starts.push((seed, random_start(&instance.spec, n, seed)));
    }
    let runs: Vec<Result<Solution, SolverError>> = starts
        .into_par_iter()
        .map(|(seed, start)| run_start(instance, start, seed))
        .collect();
    let mut best: Option<Solution> = None;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok(s) => {
                let better = match &best {
                    None => true,
                    Some(b) => s.profit > b.profit || (s.profit == b.profit && s.seed < b.seed),
                };
                if better {
                    best = Some(s);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(SolverError::Infeasible))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub feasible: bool,
    pub ic_residual: f64,
    pub ir_residual: f64,
    pub profit: f64,
    /// `|recomputed profit - reported profit|`.
    pub profit_error: f64,
    /// Distance of the profit gradient from the cone of active constraint
    /// gradients.
    pub stationarity: f64,
}

/// Recompute slacks, profit and a first-order optimality residual.
pub fn verify_solution(
    instance: &DiscreteInstance,
    sol: &Solution,
) -> Result<Verification, SolverError> {
    let (spec, agents) = (&instance.spec, &instance.agents);
    if sol.contracts.len() != agents.len() {
        return Err(SolverError::InvalidInput(
            "solution and instance have different agent counts".into(),
        ));
    }
    let alloc = IndirectUtility::from_assignment(spec, agents.clone(), sol.contracts.clone())?;
    let ic = check_incentive_compatible(spec, &alloc)?;
    let ir = check_individually_rational(spec, &alloc)?;
    let profit = profit_functional(spec, &alloc)?;
    let problem = Problem::new(spec, agents)?;
    let stationarity = kkt::stationarity(&problem, &problem.encode(&sol.contracts))?;
    Ok(Verification {
        feasible: ic.worst_violation >= -FEASIBILITY_TOL && ir.worst_violation >= -FEASIBILITY_TOL,
        ic_residual: ic.worst_violation,
        ir_residual: ir.worst_violation,
        profit,
        profit_error: (profit - sol.profit).abs(),
        stationarity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub seeds: Vec<u64>,
    pub profits: Vec<f64>,
    pub distances: Vec<Vec<f64>>,
    pub max_distance: f64,
    pub max_profit_gap: f64,
}

/// Solve from `runs` single random starts with the given seeds and compare
/// the induced utilities in the discrete `W^{1,2}` norm.
pub fn uniqueness_probe_with_seeds(
    instance: &DiscreteInstance,
    seeds: &[u64],
) -> Result<UniquenessReport, SolverError> {
    if seeds.len() < 2 {
        return Err(SolverError::InvalidInput(
            "a uniqueness probe needs at least two runs".into(),
        ));
    }
    let sols = seeds
        .par_iter()
        .map(|&s| {
            let mut inst = instance.clone();
            inst.options.seed = s;
            inst.options.pooling_start = false;
            inst.options.random_starts = 1;
            solve_principal(&inst)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let us: Vec<IndirectUtility> = sols.iter().map(Solution::indirect_utility).collect();
    let k = sols.len();
    let mut distances = vec![vec![0.0; k]; k];
    let (mut max_distance, mut max_profit_gap): (f64, f64) = (0.0, 0.0);
    for a in 0..k {
        for b in a + 1..k {
            let d = discrete_sobolev_distance(&us[a], &us[b])?;
            distances[a][b] = d;
            distances[b][a] = d;
            max_distance = max_distance.max(d);
            max_profit_gap = max_profit_gap.max((sols[a].profit - sols[b].profit).abs());
        }
    }
    Ok(UniquenessReport {
        seeds: seeds.to_vec(),
        profits: sols.iter().map(|s| s.profit).collect(),
        distances,
        max_distance,
        max_profit_gap,
    })
}

/// [`uniqueness_probe_with_seeds`] with seeds `seed, seed + 1, ...`.
pub fn uniqueness_probe(
    instance: &DiscreteInstance,
    runs: usize,
) -> Result<UniquenessReport, SolverError> {
    let seeds: Vec<u64> = (0..runs as u64)
        .map(|r| instance.options.seed.wrapping_add(r))
        .collect();
    uniqueness_probe_with_seeds(instance, &seeds)
}
