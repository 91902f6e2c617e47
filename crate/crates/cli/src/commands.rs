use std::fs::File;
use std::io::{BufWriter, Write};

use gscreen_core::certify::{
    certify_closed_form, certify_lemma49, fourth_order_test, local_gbar_star_test,
    CertificationReport, Verdict, FOURTH_ORDER_TOL,
};
use gscreen_core::geometry::{solve_g_segment, utility_from_menu, AgentGrid};
use gscreen_core::model::{check_all, ModelSpec, BUILTIN_NAMES};
use gscreen_core::oracle::{enumerate_menus, uniform_prices, uniform_products};
use gscreen_core::solver::{solve_principal, verify_solution, DiscreteInstance, SolverOptions};
use serde::Serialize;
use serde_json::{json, Value};

use crate::model_file::{builtin_source, ModelFile};
use crate::table;
use crate::{
    BuiltinArgs, CertifyArgs, CheckArgs, CliError, OracleArgs, Outcome, RespondArgs,
    SegmentArgs, SolveArgs,
};

fn load(path: &str) -> Result<ModelSpec, CliError> {
    ModelFile::load(path)?.to_spec()
}

fn create(path: &str) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("{path}: {e}")))
}

fn emit_json(value: &impl Serialize, out: &mut dyn Write, file: Option<&str>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(out, "{text}")?;
    if let Some(path) = file {
        let mut w = create(path)?;
        writeln!(w, "{text}")?;
        w.flush()?;
    }
    Ok(())
}

/// Run `write` against the file at `path`, or against `out`.
fn emit_table(
    path: Option<&str>,
    out: &mut dyn Write,
    write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            write(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => write(out),
    }
}

fn counts(spec: &ModelSpec, counts: &[usize], dim: usize, what: &str) -> Result<Vec<usize>, CliError> {
    match counts.len() {
        1 => Ok(vec![counts[0]; dim]),
        k if k == dim => Ok(counts.to_vec()),
        k => Err(CliError::Input(format!(
            "{what} needs 1 or {dim} counts, got {k} (m = {}, n = {})",
            spec.m(),
            spec.n()
        ))),
    }
}

pub fn check(a: &CheckArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.common.model)?;
    let report = check_all(&spec, a.samples, a.common.seed)?;
    emit_json(&report, out, a.out.as_deref())?;
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::HypothesisFailure
    })
}

const METHODS: [&str; 4] = ["lemma49", "examples", "fourth_order", "local_b"];

fn method_json<T: Serialize>(r: Result<T, gscreen_core::certify::CertifyError>) -> Result<Value, CliError> {
    Ok(match r {
        Ok(v) => serde_json::to_value(v)?,
        Err(e) => json!({ "skipped": e.to_string() }),
    })
}

pub fn certify(a: &CertifyArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    if let Some(m) = a.methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
        return Err(CliError::Input(format!(
            "unknown method `{m}`; expected a subset of {}",
            METHODS.join(",")
        )));
    }
    let spec = load(&a.common.model)?;
    let seed = a.common.seed;
    let wants = |m: &str| a.methods.iter().any(|x| x == m);
    let mut methods = serde_json::Map::new();
    let mut verdicts: Vec<(&str, CertificationReport)> = Vec::new();
    let mut disagreements = Vec::new();

    for (name, run) in [
        ("lemma49", certify_lemma49 as fn(&ModelSpec, usize, f64, u64) -> _),
        ("examples", certify_closed_form),
    ] {
        if !wants(name) {
            continue;
        }
        let r = run(&spec, a.samples, a.tol, seed);
        if let Ok(rep) = &r {
            verdicts.push((name, rep.clone()));
        }
        methods.insert(name.into(), method_json(r)?);
    }
    if let [(_, l), (_, e)] = verdicts.as_slice() {
        if l.verdict != e.verdict {
            disagreements.push(format!(
                "lemma49 verdict {} differs from examples verdict {}",
                l.verdict.name(),
                e.verdict.name()
            ));
        }
    }
    if wants("fourth_order") {
        let r = fourth_order_test(&spec, a.fourth_samples, FOURTH_ORDER_TOL, seed);
        if let Ok(rep) = &r {
            if rep.severe_disagreements > 0 {
                disagreements.push(format!(
                    "fourth-order and direct segment tests disagree severely at {} of {} configurations",
                    rep.severe_disagreements, rep.evaluated
                ));
            }
            let concave = verdicts.first().is_some_and(|(_, v)| v.verdict.is_concave());
            if concave && !rep.supports_g3() {
                disagreements.push("a concave verdict comes with sampled fourth-order violations".into());
            }
        }
        methods.insert("fourth_order".into(), method_json(r)?);
    }
    if wants("local_b") {
        let r = local_gbar_star_test(&spec, a.local_samples, a.tol, seed);
        if let Ok(rep) = &r {
            let concave = verdicts.first().is_some_and(|(_, v)| v.verdict.is_concave());
            if concave && !rep.pass {
                disagreements.push("a concave verdict comes with a failed local test".into());
            }
        }
        methods.insert("local_b".into(), method_json(r)?);
    }

    let primary = verdicts
        .iter()
        .find(|(_, r)| r.verdict != Verdict::Inconclusive)
        .or(verdicts.first());
    let verdict = primary.map_or(Verdict::Inconclusive, |(_, r)| r.verdict);
    let report = json!({
        "model": a.common.model,
        "seed": seed,
        "samples": a.samples,
        "tol": a.tol,
        "verdict": verdict,
        "verdict_method": primary.map(|(m, _)| *m),
        "lambda": primary.map(|(_, r)| r.lambda),
        "epsilon": primary.and_then(|(_, r)| r.epsilon),
        "methods": methods,
        "disagreements": disagreements,
    });
    emit_json(&report, out, a.out.as_deref())?;
    Ok(if verdict == Verdict::Inconclusive {
        Outcome::Inconclusive
    } else {
        Outcome::Success
    })
}

pub fn solve(a: &SolveArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.common.model)?;
    if a.check_samples > 0 {
        let report = check_all(&spec, a.check_samples, a.common.seed)?;
        if !report.passed() {
            emit_json(&report, out, a.report.as_deref())?;
            return Ok(Outcome::HypothesisFailure);
        }
    }
    let options = SolverOptions {
        seed: a.common.seed,
        random_starts: a.multistart,
        outer_iterations: a.outer_iterations,
        inner_iterations: a.inner_iterations,
        ..SolverOptions::default()
    };
    let grid = counts(&spec, &a.agents, spec.m(), "--agents")?;
    let inst = DiscreteInstance::on_grid(spec.clone(), &grid, options)?;
    let sol = solve_principal(&inst)?;
    let v = verify_solution(&inst, &sol)?;
    let alloc = sol.indirect_utility();
    emit_table(a.out.as_deref(), out, |w| table::write_solution(&spec, &alloc, w))?;
    let summary = json!({
        "model": a.common.model,
        "agents": inst.agents.len(),
        "profit": sol.profit,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "seed": sol.seed,
        "penalty": sol.penalty,
        "ic_residual": v.ic_residual,
        "ir_residual": v.ir_residual,
        "feasible": v.feasible,
        "stationarity": v.stationarity,
        "profit_error": v.profit_error,
        "trace": sol.trace,
        "options": inst.options,
    });
    match (&a.out, &a.report) {
        (Some(_), r) => emit_json(&summary, out, r.as_deref())?,
        (None, Some(r)) => emit_json(&summary, &mut std::io::sink(), Some(r))?,
        (None, None) => {}
    }
    Ok(if sol.converged {
        Outcome::Success
    } else {
        Outcome::NoConvergence
    })
}

pub fn segment(a: &SegmentArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.model)?;
    if a.x0.len() != spec.m() {
        return Err(CliError::Input(format!("--x0 needs {} coordinates", spec.m())));
    }
    let from = table::parse_contract(&a.from, spec.n())?;
    let to = table::parse_contract(&a.to, spec.n())?;
    let seg = solve_g_segment(&spec, &a.x0, &from, &to, a.steps)?;
    emit_table(a.out.as_deref(), out, |w| table::write_segment(&spec, &seg, w))?;
    Ok(Outcome::Success)
}

pub fn respond(a: &RespondArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.model)?;
    let file = File::open(&a.menu).map_err(|e| CliError::Input(format!("{}: {e}", a.menu)))?;
    let menu = table::read_menu(&spec, file)?;
    let agents = match (&a.agents, &a.grid) {
        (Some(s), _) => AgentGrid::uniform(table::parse_points(s, spec.m())?)?,
        (None, Some(g)) => AgentGrid::tensor(&spec, &counts(&spec, g, spec.m(), "--grid")?)?,
        (None, None) => return Err(CliError::Input("give --agents or --grid".into())),
    };
    let alloc = utility_from_menu(&spec, &menu, &agents)?;
    emit_table(a.out.as_deref(), out, |w| table::write_response(&spec, &alloc, w))?;
    Ok(Outcome::Success)
}

pub fn oracle(a: &OracleArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let spec = load(&a.model)?;
    let agents = AgentGrid::tensor(&spec, &counts(&spec, &a.agents, spec.m(), "--agents")?)?;
    let products = uniform_products(&spec, &counts(&spec, &a.products, spec.n(), "--products")?);
    let prices = uniform_prices(&spec, a.prices);
    let r = enumerate_menus(&spec, &agents, &products, &prices)?;
    emit_table(a.out.as_deref(), out, |w| table::write_solution(&spec, &r.allocation, w))?;
    let summary = json!({
        "model": a.model,
        "profit": r.profit,
        "menus_evaluated": r.menus_evaluated,
        "runtime": r.runtime,
        "menu": { "products": r.menu.products, "prices": r.menu.prices },
    });
    match (&a.out, &a.report) {
        (Some(_), r) => emit_json(&summary, out, r.as_deref())?,
        (None, Some(r)) => emit_json(&summary, &mut std::io::sink(), Some(r))?,
        (None, None) => {}
    }
    Ok(Outcome::Success)
}

pub fn builtin(a: &BuiltinArgs, out: &mut dyn Write) -> Result<Outcome, CliError> {
    if a.list {
        for name in BUILTIN_NAMES {
            writeln!(out, "{name}")?;
        }
        return Ok(Outcome::Success);
    }
    let name = a
        .name
        .as_deref()
        .ok_or_else(|| CliError::Input("give a builtin name or --list".into()))?;
    let src = builtin_source(name)
        .ok_or_else(|| CliError::Input(format!("unknown builtin `{name}`")))?;
    write!(out, "{src}")?;
    Ok(Outcome::Success)
}
