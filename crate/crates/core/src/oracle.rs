//! Brute-force ground truth: every price assignment on finite product and
//! price grids, with agents best-responding to each menu.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::ExprError;
use crate::geometry::{
    better_choice, choice_tie, product_grid, profit_functional, utility_from_menu, AgentGrid,
    GeometryError, IndirectUtility, Menu,
};
use crate::model::ModelSpec;

/// Largest number of menus the oracle will enumerate.
pub const MAX_MENUS: u128 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{menus} menus exceed the enumeration limit of {limit}")]
    TooLarge { menus: u128, limit: u128 },
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<ExprError> for OracleError {
    fn from(e: ExprError) -> Self {
        OracleError::Geometry(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub menu: Menu,
    pub profit: f64,
    pub allocation: IndirectUtility,
    pub menus_evaluated: u64,
    /// Wall-clock seconds.
    pub runtime: f64,
}

/// `count` points per axis uniform on `cl(Y)`, followed by the outside
/// product when it is not on the grid.
pub fn uniform_products(spec: &ModelSpec, counts: &[usize]) -> Vec<Vec<f64>> {
    let mut products = product_grid(&spec.domains().y, counts);
    if !products.contains(&spec.outside().y) {
        products.push(spec.outside().y.clone());
    }
    products
}

/// `count` prices uniform on `cl(Z)`, endpoints included.
pub fn uniform_prices(spec: &ModelSpec, count: usize) -> Vec<f64> {
    product_grid(&[spec.domains().z], &[count])
        .into_iter()
        .map(|p| p[0])
        .collect()
}

/// Enumerate all menus that price every product on `products` from
/// `prices`, the outside product being fixed at `z_0`, and return the most
/// profitable one. Equal profits go to the menu whose price indices are
/// lexicographically smallest.
pub fn enumerate_menus(
    spec: &ModelSpec,
    agents: &AgentGrid,
    products: &[Vec<f64>],
    prices: &[f64],
) -> Result<OracleResult, OracleError> {
    let start = Instant::now();
    let out = spec.outside();
    let outside = products.iter().position(|y| *y == out.y).ok_or_else(|| {
        OracleError::InvalidInput("the product grid must contain the outside product".into())
    })?;
    if prices.is_empty() {
        return Err(OracleError::InvalidInput("the price grid is empty".into()));
    }
    let menus = (prices.len() as u128)
        .checked_pow(products.len() as u32)
        .unwrap_or(u128::MAX);
    if menus > MAX_MENUS {
        return Err(OracleError::TooLarge {
            menus,
            limit: MAX_MENUS,
        });
    }
    let (zlo, zhi) = spec.domains().z;
    if let Some(p) = prices.iter().find(|p| !(zlo..=zhi).contains(*p)) {
        return Err(OracleError::InvalidInput(format!(
            "price {p} outside cl(Z)"
        )));
    }
    // validates the products
    Menu::new(spec, products.to_vec(), vec![out.z; products.len()])?;

    let free: Vec<usize> = (0..products.len()).filter(|&k| k != outside).collect();
    let q = prices.len();
    let count = (q as u64).pow(free.len() as u32);
    let n = agents.len();
    // utility and profit of agent i for product k at price index l
    let mut table = vec![(0.0, 0.0); n * products.len() * q];
    let mut g = spec.g().evaluator();
    let mut pi = spec.pi().evaluator();
    for (i, x) in agents.points.iter().enumerate() {
        for (k, y) in products.iter().enumerate() {
            for (l, &z) in prices.iter().enumerate() {
                let z = if k == outside { out.z } else { z };
                let mut p = x.clone();
                p.extend_from_slice(y);
                p.push(z);
                table[(i * products.len() + k) * q + l] = (g.value(&p)?, pi.value(&p)?);
            }
        }
    }
    let decode = |mut idx: u64| -> Vec<usize> {
        let mut levels = vec![0; products.len()];
        for &k in free.iter().rev() {
            levels[k] = (idx % q as u64) as usize;
            idx /= q as u64;
        }
        levels
    };
    let profit_of = |levels: &[usize]| -> f64 {
        let mut total = 0.0;
        for (i, w) in agents.weights.iter().enumerate() {
            let mut best: Option<(f64, f64, usize)> = None;
            for (k, &l) in levels.iter().enumerate() {
                let (u, v) = table[(i * products.len() + k) * q + l];
                let take = match best {
                    None => true,
                    Some((bu, bv, bk)) => better_choice(
                        (u, v, &products[k]),
                        (bu, bv, &products[bk]),
                        choice_tie(bu),
                    ),
                };
                if take {
                    best = Some((u, v, k));
                }
            }
            total += w * best.expect("menus are nonempty").1;
        }
        total
    };
    let (best_idx, _) = (0..count)
        .into_par_iter()
        .map(|idx| (idx, profit_of(&decode(idx))))
        .reduce(
            || (u64::MAX, f64::NEG_INFINITY),
            |a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    let levels = decode(best_idx);
    let menu_prices: Vec<f64> = levels
        .iter()
        .enumerate()
        .map(|(k, &l)| if k == outside { out.z } else { prices[l] })
        .collect();
    let menu = Menu::new(spec, products.to_vec(), menu_prices)?;
    let allocation = utility_from_menu(spec, &menu, agents)?;
    let profit = profit_functional(spec, &allocation)?;
    Ok(OracleResult {
        menu,
        profit,
        allocation,
        menus_evaluated: count,
        runtime: start.elapsed().as_secs_f64(),
    })
}
