// Restore exact incentive compatibility and participation of a nearly
// feasible assignment by lowering prices.

use super::SolverError;
use crate::geometry::{utility_from_menu, AgentGrid, Menu};
use crate::model::{price_for_utility, Contract, ModelSpec, PriceLevel};

const MAX_SWEEPS: usize = 500;

fn deficit_tol(u: f64) -> f64 {
    1e-11 * (1.0 + u.abs())
}

/// Largest IC or IR violation of an assignment.
#[cfg(test)]
pub(crate) fn max_violation(
    spec: &ModelSpec,
    agents: &AgentGrid,
    contracts: &[Contract],
) -> Result<f64, SolverError> {
    let mut worst: f64 = 0.0;
    for (i, x) in agents.points.iter().enumerate() {
        let own = spec.utility(x, &contracts[i])?;
        worst = worst.max(spec.outside_utility(x)? - own);
        for c in contracts {
            worst = worst.max(spec.utility(x, c)? - own);
        }
    }
    Ok(worst)
}

/// Gauss-Seidel sweeps: each agent whose contract is beaten by another
/// contract or by the outside option gets its price lowered until it
/// matches the best alternative; when even the price floor cannot, the
/// agent switches to that alternative. Prices only decrease, so sweeps end
/// once no deficit remains. Falls back to best responses to the menu of
/// all contracts when sweeping stalls.
pub(crate) fn repair(
    spec: &ModelSpec,
    agents: &AgentGrid,
    contracts: &[Contract],
) -> Result<Vec<Contract>, SolverError> {
    let mut cs: Vec<Contract> = contracts.to_vec();
    for c in cs.iter_mut() {
        let mut yb = c.ybar();
        spec.clamp_ybar(&mut yb);
        *c = Contract::from_ybar(&yb);
    }
    let outside = spec.outside().clone();
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for (i, x) in agents.points.iter().enumerate() {
            let own = spec.utility(x, &cs[i])?;
            let mut best = (spec.outside_utility(x)?, None);
            for (j, c) in cs.iter().enumerate() {
                if j != i {
                    let u = spec.utility(x, c)?;
                    if u > best.0 {
                        best = (u, Some(j));
                    }
                }
            }
            if own >= best.0 - deficit_tol(best.0) {
                continue;
            }
            changed = true;
            match price_for_utility(spec, x, &cs[i].y, best.0)? {
                PriceLevel::Exact(z) if z <= cs[i].z => cs[i].z = z,
                PriceLevel::Exact(_) | PriceLevel::AboveCap => {}
                PriceLevel::BelowFloor => {
                    cs[i] = match best.1 {
                        Some(j) => cs[j].clone(),
                        None => outside.clone(),
                    }
                }
            }
        }
        if !changed {
            return Ok(cs);
        }
    }
    let menu = Menu::new(
        spec,
        cs.iter().map(|c| c.y.clone()).collect(),
        cs.iter().map(|c| c.z).collect(),
    )
    .or_else(|_| {
        // drop entries that clash with the outside product's price cap
        let keep: Vec<&Contract> = cs
            .iter()
            .filter(|c| c.y != outside.y || c.z <= outside.z)
            .collect();
        Menu::new(
            spec,
            keep.iter().map(|c| c.y.clone()).collect(),
            keep.iter().map(|c| c.z).collect(),
        )
    })?;
    let u = utility_from_menu(spec, &menu, agents)?;
    Ok(u.assignment.expect("menu responses carry an assignment"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    #[test]
    fn lowers_price_to_restore_participation() {
        let spec = builtin("quasilinear").unwrap();
        let agents = AgentGrid::uniform(vec![vec![1.0]]).unwrap();
        let out = repair(&spec, &agents, &[Contract::new(vec![1.0], 1.0 + 1e-4)]).unwrap();
        assert!((out[0].z - 1.0).abs() < 1e-12 && out[0].y == vec![1.0]);
    }

    #[test]
    fn cascades_through_ic() {
        let spec = builtin("quasilinear").unwrap();
        let agents = AgentGrid::uniform(vec![vec![0.5], vec![1.0]]).unwrap();
        // high type envies the low contract slightly
        let cs = vec![
            Contract::new(vec![0.5], 0.25),
            Contract::new(vec![1.0], 0.7501),
        ];
        let out = repair(&spec, &agents, &cs).unwrap();
        assert!(max_violation(&spec, &agents, &out).unwrap() < 1e-10);
        assert!((out[1].z - 0.75).abs() < 1e-10);
        assert_eq!(out[0], cs[0]);
    }

    #[test]
    fn switches_when_price_floor_binds() {
        let d = crate::model::Domains {
            x: vec![(0.0, 1.0)],
            y: vec![(0.0, 1.0)],
            z: (0.5, 2.0),
        };
        let spec =
            ModelSpec::from_strings(d, "x1*y1 - z", "z", Contract::new(vec![0.0], 0.5)).unwrap();
        let agents = AgentGrid::uniform(vec![vec![0.2], vec![1.0]]).unwrap();
        // agent 1 gets at most -0.5 from y = 0 but 0.5 from agent 0's contract
        let cs = vec![Contract::new(vec![1.0], 0.5), Contract::new(vec![0.0], 0.5)];
        let out = repair(&spec, &agents, &cs).unwrap();
        assert_eq!(out, vec![cs[0].clone(), cs[0].clone()]);
    }
}
