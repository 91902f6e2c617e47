//! CSV tables: menus, solutions, segments and best responses.
//!
//! Floats are written with 17 significant digits.

use std::io::{Read, Write};

use gscreen_core::geometry::{GSegment, IndirectUtility, Menu};
use gscreen_core::model::{Contract, ModelSpec};

use crate::CliError;

/// Float formatting that round-trips exactly.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn axis(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}{i}"))
}

/// `x1..xm, y1..yn, z, u, ic_slack, ir_slack`.
pub fn solution_header(spec: &ModelSpec) -> Vec<String> {
    let mut h: Vec<String> = axis("x", spec.m()).chain(axis("y", spec.n())).collect();
    h.extend(["z", "u", "ic_slack", "ir_slack"].map(String::from));
    h
}

/// Per-agent slacks: `min_{j != i} u_i - G(x_i, c_j)` (infinite for a
/// single agent) and `u_i - u_0(x_i)`.
pub fn slacks(spec: &ModelSpec, alloc: &IndirectUtility) -> Result<Vec<(f64, f64)>, CliError> {
    let contracts = alloc
        .assignment
        .as_ref()
        .ok_or_else(|| CliError::Input("allocation has no assignment".into()))?;
    let mut out = Vec::with_capacity(contracts.len());
    for (i, x) in alloc.agents.points.iter().enumerate() {
        let u = alloc.values[i];
        let mut ic = f64::INFINITY;
        for (j, c) in contracts.iter().enumerate() {
            if j != i {
                ic = ic.min(u - spec.utility(x, c)?);
            }
        }
        out.push((ic, u - spec.outside_utility(x)?));
    }
    Ok(out)
}

pub fn write_solution(
    spec: &ModelSpec,
    alloc: &IndirectUtility,
    w: impl Write,
) -> Result<(), CliError> {
    let contracts = alloc
        .assignment
        .as_ref()
        .ok_or_else(|| CliError::Input("allocation has no assignment".into()))?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(solution_header(spec))?;
    for (((x, c), u), (ic, ir)) in alloc
        .agents
        .points
        .iter()
        .zip(contracts)
        .zip(&alloc.values)
        .zip(slacks(spec, alloc)?)
    {
        let row = x
            .iter()
            .chain(&c.y)
            .copied()
            .chain([c.z, *u, ic, ir])
            .map(fmt);
        csv.write_record(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// `t, y1..yn, z, residual`.
pub fn write_segment(spec: &ModelSpec, seg: &GSegment, w: impl Write) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    let mut h = vec!["t".to_string()];
    h.extend(axis("y", spec.n()));
    h.extend(["z", "residual"].map(String::from));
    csv.write_record(h)?;
    for s in &seg.samples {
        let row = std::iter::once(s.t)
            .chain(s.y.iter().copied())
            .chain([s.z, s.residual])
            .map(fmt);
        csv.write_record(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// `x1..xm, y1..yn, z, u`.
pub fn write_response(
    spec: &ModelSpec,
    alloc: &IndirectUtility,
    w: impl Write,
) -> Result<(), CliError> {
    let contracts = alloc
        .assignment
        .as_ref()
        .ok_or_else(|| CliError::Input("allocation has no assignment".into()))?;
    let mut csv = csv::Writer::from_writer(w);
    let mut h: Vec<String> = axis("x", spec.m()).chain(axis("y", spec.n())).collect();
    h.extend(["z", "u"].map(String::from));
    csv.write_record(h)?;
    for ((x, c), u) in alloc.agents.points.iter().zip(contracts).zip(&alloc.values) {
        let row = x.iter().chain(&c.y).copied().chain([c.z, *u]).map(fmt);
        csv.write_record(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Menu with header `y1..yn, price`; the outside option is added when
/// missing.
pub fn read_menu(spec: &ModelSpec, r: impl Read) -> Result<Menu, CliError> {
    let mut csv = csv::Reader::from_reader(r);
    let want: Vec<String> = axis("y", spec.n()).chain(["price".to_string()]).collect();
    let header: Vec<String> = csv.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header != want {
        return Err(CliError::Input(format!(
            "menu header must be {}, found {}",
            want.join(","),
            header.join(",")
        )));
    }
    let (mut products, mut prices) = (Vec::new(), Vec::new());
    for (line, rec) in csv.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Input(format!("menu row {}: {e}", line + 1)))?;
        let (y, p) = vals.split_at(spec.n());
        products.push(y.to_vec());
        prices.push(p[0]);
    }
    Ok(Menu::new(spec, products, prices)?)
}

/// Points `a1,..,ak` separated by `;`.
pub fn parse_points(s: &str, dim: usize) -> Result<Vec<Vec<f64>>, CliError> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let v = p
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| CliError::Input(format!("point `{p}`: {e}")))?;
            if v.len() != dim {
                return Err(CliError::Input(format!(
                    "point `{p}` needs {dim} coordinates"
                )));
            }
            Ok(v)
        })
        .collect()
}

/// `y1,..,yn,z` as a contract.
pub fn parse_contract(v: &[f64], n: usize) -> Result<Contract, CliError> {
    if v.len() != n + 1 {
        return Err(CliError::Input(format!(
            "a contract needs {} values `y1,..,yn,z`",
            n + 1
        )));
    }
    Ok(Contract::new(v[..n].to_vec(), v[n]))
}
