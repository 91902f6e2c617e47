//! Problem statement: agent utility `G`, principal utility `pi`, domains,
//! outside option and agent measure, plus sampled hypothesis checks and the
//! price inverse `H`.

mod builtin;
mod hypotheses;
mod price;
pub mod sample;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{BinOp, Expr, ExprError, Node, VarSpace};

pub use builtin::{builtin, BUILTIN_NAMES};
pub(crate) use hypotheses::marginal_rate;
pub use hypotheses::{
    check_all, check_g0, check_g1_twist, check_g4, check_g5, check_g6_rank, check_g7,
    HypothesisEntry, HypothesisId, HypothesisReport, Status,
};
pub use price::{invert_price, price_for_utility, PriceLevel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("utility {u} outside the attainable interval [{lo}, {hi}]")]
    OutOfRange { u: f64, lo: f64, hi: f64 },
    #[error("price inversion did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("unknown builtin model `{0}`")]
    UnknownBuiltin(String),
}

/// A product together with its price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub y: Vec<f64>,
    pub z: f64,
}

impl Contract {
    pub fn new(y: Vec<f64>, z: f64) -> Self {
        Contract { y, z }
    }

    /// `(y, z)` as one vector.
    pub fn ybar(&self) -> Vec<f64> {
        let mut v = self.y.clone();
        v.push(self.z);
        v
    }

    pub fn from_ybar(v: &[f64]) -> Self {
        let (y, z) = v.split_at(v.len() - 1);
        Contract {
            y: y.to_vec(),
            z: z[0],
        }
    }
}

/// Axis-aligned domains. `x` and `y` are per-axis `(lo, hi)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domains {
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
    pub z: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Quasilinear,
    PriceSensitive,
    Inhomogeneous,
    ZeroSumProfit,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Quasilinear => "quasilinear",
            FamilyKind::PriceSensitive => "price_sensitive",
            FamilyKind::Inhomogeneous => "inhomogeneous",
            FamilyKind::ZeroSumProfit => "zero_sum_profit",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            FamilyKind::Quasilinear,
            FamilyKind::PriceSensitive,
            FamilyKind::Inhomogeneous,
            FamilyKind::ZeroSumProfit,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parts of a family template: `G = b - f`, and `pi = z - a` (or `pi = -G`
/// for the zero-sum family).
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub kind: FamilyKind,
    pub b: Expr,
    pub f: Expr,
    pub a: Expr,
}

impl Family {
    /// Parse family parts. `f` defaults to `z`, `a` to `0`.
    pub fn parse(
        kind: FamilyKind,
        space: VarSpace,
        b: &str,
        f: Option<&str>,
        a: Option<&str>,
    ) -> Result<Family, ModelError> {
        let fam = Family {
            kind,
            b: Expr::parse(b, space)?,
            f: Expr::parse(f.unwrap_or("z"), space)?,
            a: Expr::parse(a.unwrap_or("0"), space)?,
        };
        fam.validate()?;
        Ok(fam)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let sp = self.b.space();
        let is_x = |v: usize| v < sp.m;
        let is_y = |v: usize| v >= sp.m && v < sp.z();
        let bad = |what: &str| Err(ModelError::Invalid(format!("{} family: {what}", self.kind)));
        if !self.b.references_only(|v| is_x(v) || is_y(v)) {
            return bad("b may depend on x and y only");
        }
        if !self.a.references_only(is_y) {
            return bad("a may depend on y only");
        }
        match self.kind {
            FamilyKind::Quasilinear | FamilyKind::ZeroSumProfit => {
                if *self.f.root() != Node::Var(sp.z()) {
                    return bad("f must be z");
                }
            }
            FamilyKind::PriceSensitive => {
                if !self.f.references_only(|v| v == sp.z()) {
                    return bad("f may depend on z only");
                }
            }
            FamilyKind::Inhomogeneous => {
                if !self.f.references_only(|v| is_x(v) || v == sp.z()) {
                    return bad("f may depend on x and z only");
                }
            }
        }
        Ok(())
    }

    /// Expand the template into `(G, pi)`.
    pub fn expand(&self) -> (Expr, Expr) {
        let sp = self.b.space();
        let sub =
            |l: &Node, r: &Node| Node::Binary(BinOp::Sub, Box::new(l.clone()), Box::new(r.clone()));
        let g = sub(self.b.root(), self.f.root());
        let pi = match self.kind {
            FamilyKind::ZeroSumProfit => Node::Neg(Box::new(g.clone())),
            _ => sub(&Node::Var(sp.z()), self.a.root()),
        };
        (Expr::from_node(g, sp), Expr::from_node(pi, sp))
    }
}

/// Agent measure: uniform, or a nonnegative density in `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    Uniform,
    Density(Expr),
}

/// The full problem statement.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    space: VarSpace,
    domains: Domains,
    g: Expr,
    pi: Expr,
    outside: Contract,
    measure: Measure,
    family: Option<Family>,
}

fn check_interval(name: &str, (lo, hi): (f64, f64)) -> Result<(), ModelError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(ModelError::Invalid(format!(
            "{name} needs finite bounds lo < hi, got [{lo}, {hi}]"
        )))
    }
}

impl ModelSpec {
    pub fn new(
        domains: Domains,
        g: Expr,
        pi: Expr,
        outside: Contract,
        measure: Measure,
    ) -> Result<ModelSpec, ModelError> {
        let space = VarSpace::new(domains.x.len(), domains.y.len());
        if space.m == 0 || space.n == 0 {
            return Err(ModelError::Invalid(
                "dimensions m and n must be positive".into(),
            ));
        }
        if space.m < space.n {
            return Err(ModelError::Invalid(format!(
                "agent dimension m = {} must be at least product dimension n = {}",
                space.m, space.n
            )));
        }
        for (k, &iv) in domains.x.iter().enumerate() {
            check_interval(&format!("X axis {}", k + 1), iv)?;
        }
        for (k, &iv) in domains.y.iter().enumerate() {
            check_interval(&format!("Y axis {}", k + 1), iv)?;
        }
        check_interval("Z", domains.z)?;
        for e in [&g, &pi] {
            if e.space() != space {
                return Err(ModelError::Invalid(format!(
                    "expression `{e}` declared over m = {}, n = {}, domains give m = {}, n = {}",
                    e.space().m,
                    e.space().n,
                    space.m,
                    space.n
                )));
            }
        }
        if outside.y.len() != space.n {
            return Err(ModelError::Invalid(
                "outside option y has the wrong length".into(),
            ));
        }
        let inside = outside
            .y
            .iter()
            .zip(&domains.y)
            .all(|(v, &(lo, hi))| *v >= lo && *v <= hi);
        if !inside {
            return Err(ModelError::Invalid(
                "outside option y must lie in cl(Y)".into(),
            ));
        }
        if outside.z < domains.z.0 || outside.z > domains.z.1 {
            return Err(ModelError::Invalid(
                "outside option price must lie in cl(Z)".into(),
            ));
        }
        if let Measure::Density(d) = &measure {
            if d.space() != space || !d.references_only(|v| v < space.m) {
                return Err(ModelError::Invalid("density may depend on x only".into()));
            }
        }
        let spec = ModelSpec {
            space,
            domains,
            g,
            pi,
            outside,
            measure,
            family: None,
        };
        spec.validate_measure()?;
        Ok(spec)
    }

    /// Parse `G` and `pi` from strings; uniform measure.
    pub fn from_strings(
        domains: Domains,
        g: &str,
        pi: &str,
        outside: Contract,
    ) -> Result<ModelSpec, ModelError> {
        let space = VarSpace::new(domains.x.len(), domains.y.len());
        let g = Expr::parse(g, space)?;
        let pi = Expr::parse(pi, space)?;
        ModelSpec::new(domains, g, pi, outside, Measure::Uniform)
    }

    pub fn from_family(
        domains: Domains,
        family: Family,
        outside: Contract,
        measure: Measure,
    ) -> Result<ModelSpec, ModelError> {
        let (g, pi) = family.expand();
        let mut spec = ModelSpec::new(domains, g, pi, outside, measure)?;
        spec.family = Some(family);
        Ok(spec)
    }

    pub fn with_measure(mut self, measure: Measure) -> Result<ModelSpec, ModelError> {
        self.measure = measure;
        self.validate_measure()?;
        Ok(self)
    }

    fn validate_measure(&self) -> Result<(), ModelError> {
        if let Measure::Density(_) = self.measure {
            let mut total = 0.0;
            for x in sample::sample_box(&self.domains.x, 256, 0) {
                let w = self.weight(&x)?;
                if w < 0.0 {
                    return Err(ModelError::Invalid(format!(
                        "density is negative ({w}) at x = {x:?}"
                    )));
                }
                total += w;
            }
            if total <= 0.0 {
                return Err(ModelError::Invalid("density is not normalizable".into()));
            }
        }
        Ok(())
    }

    pub fn space(&self) -> VarSpace {
        self.space
    }

    pub fn m(&self) -> usize {
        self.space.m
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn domains(&self) -> &Domains {
        &self.domains
    }

    pub fn g(&self) -> &Expr {
        &self.g
    }

    pub fn pi(&self) -> &Expr {
        &self.pi
    }

    pub fn outside(&self) -> &Contract {
        &self.outside
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn family(&self) -> Option<&Family> {
        self.family.as_ref()
    }

    /// Bounds of the `(y, z)` block.
    pub fn ybar_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = self.domains.y.clone();
        b.push(self.domains.z);
        b
    }

    /// Bounds of the full `(x, y, z)` space.
    pub fn xyz_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = self.domains.x.clone();
        b.extend(self.ybar_bounds());
        b
    }

    pub fn point(&self, x: &[f64], c: &Contract) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.space.dim());
        p.extend_from_slice(x);
        p.extend_from_slice(&c.y);
        p.push(c.z);
        p
    }

    /// Point from an agent and a `(y, z)` vector.
    pub fn point_ybar(&self, x: &[f64], ybar: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.space.dim());
        p.extend_from_slice(x);
        p.extend_from_slice(ybar);
        p
    }

    pub fn utility(&self, x: &[f64], c: &Contract) -> Result<f64, ExprError> {
        self.g.eval(&self.point(x, c))
    }

    pub fn profit(&self, x: &[f64], c: &Contract) -> Result<f64, ExprError> {
        self.pi.eval(&self.point(x, c))
    }

    /// Utility of the outside option, `u_0(x) = G(x, y_0, z_0)`.
    pub fn outside_utility(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.utility(x, &self.outside)
    }

    /// Unnormalized measure weight at an agent point.
    pub fn weight(&self, x: &[f64]) -> Result<f64, ExprError> {
        match &self.measure {
            Measure::Uniform => Ok(1.0),
            Measure::Density(d) => d.eval(&self.point(x, &self.outside)),
        }
    }

    /// Clamp a `(y, z)` vector into `cl(Y x Z)`.
    pub fn clamp_ybar(&self, v: &mut [f64]) {
        for (vi, (lo, hi)) in v.iter_mut().zip(self.ybar_bounds()) {
            *vi = vi.clamp(lo, hi);
        }
    }
}
