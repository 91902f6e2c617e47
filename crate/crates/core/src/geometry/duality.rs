use std::cmp::Ordering;

use serde::Serialize;

use super::{AgentGrid, GeometryError};
use crate::model::{price_for_utility, Contract, ModelSpec, PriceLevel};

/// Slack allowed in the incentive-compatibility and participation checks.
pub const IC_TOL: f64 = 1e-8;

/// Finite price menu. Always lists the outside product.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Menu {
    pub products: Vec<Vec<f64>>,
    pub prices: Vec<f64>,
    /// Products whose price had to be capped at `z_max` when the menu was
    /// built from a utility.
    pub capped: Vec<usize>,
}

impl Menu {
    /// Validate a menu, inserting the outside option at its price `z_0` if
    /// it is missing.
    pub fn new(
        spec: &ModelSpec,
        products: Vec<Vec<f64>>,
        prices: Vec<f64>,
    ) -> Result<Menu, GeometryError> {
        if products.len() != prices.len() {
            return Err(GeometryError::InvalidInput(
                "menu needs one price per product".into(),
            ));
        }
        let (zlo, zhi) = spec.domains().z;
        for (y, &p) in products.iter().zip(&prices) {
            if y.len() != spec.n() {
                return Err(GeometryError::InvalidInput(format!(
                    "product {y:?} has the wrong dimension"
                )));
            }
            let in_y = y
                .iter()
                .zip(&spec.domains().y)
                .all(|(v, &(lo, hi))| *v >= lo && *v <= hi);
            if !in_y || !(zlo..=zhi).contains(&p) {
                return Err(GeometryError::InvalidInput(format!(
                    "menu entry ({y:?}, {p}) outside cl(Y x Z)"
                )));
            }
        }
        let mut menu = Menu {
            products,
            prices,
            capped: Vec::new(),
        };
        let out = spec.outside();
        match menu.outside_index(spec) {
            Some(k) if menu.prices[k] > out.z => {
                return Err(GeometryError::InvalidInput(format!(
                    "outside product priced {} above z_0 = {}",
                    menu.prices[k], out.z
                )))
            }
            Some(_) => {}
            None => {
                menu.products.push(out.y.clone());
                menu.prices.push(out.z);
            }
        }
        Ok(menu)
    }

    /// Menu offering only the outside option.
    pub fn outside_only(spec: &ModelSpec) -> Menu {
        Menu {
            products: vec![spec.outside().y.clone()],
            prices: vec![spec.outside().z],
            capped: Vec::new(),
        }
    }

    pub fn outside_index(&self, spec: &ModelSpec) -> Option<usize> {
        self.products.iter().position(|y| *y == spec.outside().y)
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn contract(&self, k: usize) -> Contract {
        Contract::new(self.products[k].clone(), self.prices[k])
    }
}

/// Utility values on an agent grid, with the chosen contracts when known.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndirectUtility {
    pub agents: AgentGrid,
    pub values: Vec<f64>,
    pub assignment: Option<Vec<Contract>>,
}

impl IndirectUtility {
    /// Utility induced by per-agent contracts.
    pub fn from_assignment(
        spec: &ModelSpec,
        agents: AgentGrid,
        assignment: Vec<Contract>,
    ) -> Result<Self, GeometryError> {
        if assignment.len() != agents.len() {
            return Err(GeometryError::InvalidInput(
                "one contract per agent required".into(),
            ));
        }
        let values = agents
            .points
            .iter()
            .zip(&assignment)
            .map(|(x, c)| spec.utility(x, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IndirectUtility {
            agents,
            values,
            assignment: Some(assignment),
        })
    }

    fn assignment(&self) -> Result<&[Contract], GeometryError> {
        self.assignment
            .as_deref()
            .ok_or(GeometryError::MissingAssignment)
    }
}

/// Order of candidate choices: higher utility, then (within `tie`) higher
/// principal profit, then lexicographically smaller product.
pub(crate) fn better_choice(u: (f64, f64, &[f64]), best: (f64, f64, &[f64]), tie: f64) -> bool {
    if u.0 > best.0 + tie {
        return true;
    }
    if u.0 < best.0 - tie {
        return false;
    }
    match u.1.partial_cmp(&best.1) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => lex_less(u.2, best.2),
    }
}

pub(crate) fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (p, q) in a.iter().zip(b) {
        match p.total_cmp(q) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    false
}

pub(crate) fn choice_tie(u: f64) -> f64 {
    1e-12 * (1.0 + u.abs())
}

/// Best response of every agent to a menu.
pub fn utility_from_menu(
    spec: &ModelSpec,
    menu: &Menu,
    agents: &AgentGrid,
) -> Result<IndirectUtility, GeometryError> {
    if menu.outside_index(spec).is_none() {
        return Err(GeometryError::InvalidInput(
            "menu must contain the outside product".into(),
        ));
    }
    let mut values = Vec::with_capacity(agents.len());
    let mut assignment = Vec::with_capacity(agents.len());
    let mut g = spec.g().evaluator();
    let mut pi = spec.pi().evaluator();
    for x in &agents.points {
        let mut best: Option<(f64, f64, usize)> = None;
        for k in 0..menu.len() {
            let p = spec.point(x, &menu.contract(k));
            let u = g.value(&p)?;
            let v = pi.value(&p)?;
            let take = match best {
                None => true,
                Some((bu, bv, bk)) => better_choice(
                    (u, v, &menu.products[k]),
                    (bu, bv, &menu.products[bk]),
                    choice_tie(bu),
                ),
            };
            if take {
                best = Some((u, v, k));
            }
        }
        let (u, _, k) = best.expect("menus are nonempty");
        values.push(u);
        assignment.push(menu.contract(k));
    }
    Ok(IndirectUtility {
        agents: agents.clone(),
        values,
        assignment: Some(assignment),
    })
}

/// Smallest price menu on `products` whose induced utility does not exceed
/// `u` on the grid: `v(y) = max_i H(x_i, y, u_i)` clamped to `cl(Z)`, with
/// the outside product priced at most `z_0`.
pub fn menu_from_utility(
    spec: &ModelSpec,
    u: &IndirectUtility,
    products: &[Vec<f64>],
) -> Result<Menu, GeometryError> {
    let (zlo, zhi) = spec.domains().z;
    let mut prods: Vec<Vec<f64>> = products.to_vec();
    if !prods.iter().any(|y| *y == spec.outside().y) {
        prods.push(spec.outside().y.clone());
    }
    let mut prices = Vec::with_capacity(prods.len());
    let mut capped = Vec::new();
    for (k, y) in prods.iter().enumerate() {
        let mut v = zlo;
        let mut cap = false;
        for (x, &ui) in u.agents.points.iter().zip(&u.values) {
            match price_for_utility(spec, x, y, ui)? {
                PriceLevel::Exact(z) => v = v.max(z),
                PriceLevel::BelowFloor => {}
                PriceLevel::AboveCap => {
                    cap = true;
                    v = zhi;
                }
            }
        }
        if *y == spec.outside().y {
            v = v.min(spec.outside().z);
        } else if cap {
            capped.push(k);
        }
        prices.push(v.clamp(zlo, zhi));
    }
    Ok(Menu {
        products: prods,
        prices,
        capped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcReport {
    pub ok: bool,
    /// Most negative `G(x_i, c_i) - G(x_i, c_j)` (0 when no pair exists).
    pub worst_violation: f64,
    /// `(i, j)`: agent `i` gains most by taking agent `j`'s contract.
    pub witness: Option<(usize, usize)>,
}

/// Pairwise incentive compatibility of an assignment on the grid.
pub fn check_incentive_compatible(
    spec: &ModelSpec,
    alloc: &IndirectUtility,
) -> Result<IcReport, GeometryError> {
    let a = alloc.assignment()?;
    let mut g = spec.g().evaluator();
    let mut worst = 0.0;
    let mut witness = None;
    for (i, x) in alloc.agents.points.iter().enumerate() {
        let own = g.value(&spec.point(x, &a[i]))?;
        for (j, c) in a.iter().enumerate() {
            if i == j {
                continue;
            }
            let slack = own - g.value(&spec.point(x, c))?;
            if slack < worst {
                worst = slack;
                witness = Some((i, j));
            }
        }
    }
    Ok(IcReport {
        ok: worst >= -IC_TOL,
        worst_violation: worst,
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrReport {
    pub ok: bool,
    /// Most negative `G(x_i, c_i) - u_0(x_i)`.
    pub worst_violation: f64,
    pub witness: Option<usize>,
}

/// Participation: no agent strictly prefers the outside option.
pub fn check_individually_rational(
    spec: &ModelSpec,
    alloc: &IndirectUtility,
) -> Result<IrReport, GeometryError> {
    let a = alloc.assignment()?;
    let mut worst = f64::INFINITY;
    let mut witness = None;
    for (i, x) in alloc.agents.points.iter().enumerate() {
        let slack = spec.utility(x, &a[i])? - spec.outside_utility(x)?;
        if slack < worst {
            worst = slack;
            witness = Some(i);
        }
    }
    Ok(IrReport {
        ok: worst >= -IC_TOL,
        worst_violation: worst,
        witness: witness.filter(|_| worst < 0.0),
    })
}

/// Expected profit `sum_i mu_i pi(x_i, y_i, z_i)`.
pub fn profit_functional(spec: &ModelSpec, alloc: &IndirectUtility) -> Result<f64, GeometryError> {
    let a = alloc.assignment()?;
    let mut total = 0.0;
    for ((x, c), w) in alloc.agents.points.iter().zip(a).zip(&alloc.agents.weights) {
        total += w * spec.profit(x, c)?;
    }
    Ok(total)
}

/// Discrete `W^{1,2}(X, mu)` distance on a tensor grid, with forward
/// differences (backward on the last layer of each axis).
pub fn discrete_sobolev_distance(
    u1: &IndirectUtility,
    u2: &IndirectUtility,
) -> Result<f64, GeometryError> {
    if u1.agents != u2.agents {
        return Err(GeometryError::InvalidInput(
            "utilities live on different grids".into(),
        ));
    }
    let axes = u1.agents.axes.as_ref().ok_or(GeometryError::GridTooSmall)?;
    if axes.iter().any(|a| a.len() < 2) {
        return Err(GeometryError::GridTooSmall);
    }
    let diff: Vec<f64> = u1
        .values
        .iter()
        .zip(&u2.values)
        .map(|(a, b)| a - b)
        .collect();
    // strides for first-axis-slowest layout
    let mut strides = vec![1usize; axes.len()];
    for k in (0..axes.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * axes[k + 1].len();
    }
    let mut total = 0.0;
    for (idx, (&d, &w)) in diff.iter().zip(&u1.agents.weights).enumerate() {
        let mut sq = d * d;
        for (k, axis) in axes.iter().enumerate() {
            let pos = (idx / strides[k]) % axis.len();
            let (lo, hi) = if pos + 1 < axis.len() {
                (pos, pos + 1)
            } else {
                (pos - 1, pos)
            };
            let (il, ih) = (idx - (pos - lo) * strides[k], idx + (hi - pos) * strides[k]);
            let g = (diff[ih] - diff[il]) / (axis[hi] - axis[lo]);
            sq += g * g;
        }
        total += w * sq;
    }
    Ok(total.sqrt())
}
