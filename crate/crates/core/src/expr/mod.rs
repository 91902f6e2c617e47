//! Closed-form scalar expressions over the variables `x1..xm`, `y1..yn`, `z`.
//!
//! Expressions are parsed once into a tree (kept for printing) and compiled
//! into a flat tape that evaluates values, gradients and Hessians by forward
//! accumulation. Orders three and four are obtained by central differences of
//! the exact Hessians, see [`fd`].

mod fd;
mod parse;
mod print;
mod tape;

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use fd::{eval_deriv_fd, fd_step, hessian_slice_d1, hessian_slice_d2};
pub use tape::Evaluator;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset}")]
    UnknownVariable { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), got {found} (byte {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("domain error in {op}: argument {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("non-finite result")]
    NonFinite,
    #[error("point has {found} coordinates, expression expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("finite-difference derivative order must be 3 or 4, got {0}")]
    InvalidOrder(usize),
}

/// Declared dimensions of the variable space. Coordinates are ordered
/// `x1..xm, y1..yn, z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct VarSpace {
    pub m: usize,
    pub n: usize,
}

impl VarSpace {
    pub fn new(m: usize, n: usize) -> Self {
        VarSpace { m, n }
    }

    pub fn dim(&self) -> usize {
        self.m + self.n + 1
    }

    pub fn x(&self, i: usize) -> usize {
        debug_assert!(i < self.m);
        i
    }

    pub fn y(&self, k: usize) -> usize {
        debug_assert!(k < self.n);
        self.m + k
    }

    pub fn z(&self) -> usize {
        self.m + self.n
    }

    /// Index range of the product-price block `(y, z)`.
    pub fn ybar(&self) -> std::ops::Range<usize> {
        self.m..self.m + self.n + 1
    }

    pub fn name(&self, idx: usize) -> String {
        if idx < self.m {
            format!("x{}", idx + 1)
        } else if idx < self.m + self.n {
            format!("y{}", idx - self.m + 1)
        } else {
            "z".to_string()
        }
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        if name == "z" {
            return Some(self.z());
        }
        let (head, tail) = name.split_at(1);
        let k: usize = tail.parse().ok()?;
        if k == 0 || tail.starts_with('0') {
            return None;
        }
        match head {
            "x" if k <= self.m => Some(k - 1),
            "y" if k <= self.n => Some(self.m + k - 1),
            _ => None,
        }
    }

    /// Assemble a full point from its agent, product and price parts.
    pub fn point(&self, x: &[f64], y: &[f64], z: f64) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.m);
        debug_assert_eq!(y.len(), self.n);
        let mut p = DVector::zeros(self.dim());
        p.rows_mut(0, self.m).copy_from_slice(x);
        p.rows_mut(self.m, self.n).copy_from_slice(y);
        p[self.m + self.n] = z;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Node::Const(_) => {}
            Node::Var(v) => {
                out.insert(*v);
            }
            Node::Neg(a) | Node::Call(_, a) => a.collect_vars(out),
            Node::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }
}

/// A parsed expression together with its compiled evaluation tape.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    space: VarSpace,
    tape: tape::Tape,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.space == other.space
    }
}

impl Expr {
    pub fn parse(source: &str, space: VarSpace) -> Result<Expr, ExprError> {
        let root = parse::parse(source, &space)?;
        Ok(Expr::from_node(root, space))
    }

    pub fn from_node(root: Node, space: VarSpace) -> Expr {
        let tape = tape::Tape::compile(&root);
        Expr { root, space, tape }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn space(&self) -> VarSpace {
        self.space
    }

    /// Indices of the variables the expression actually references.
    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.root.collect_vars(&mut out);
        out
    }

    pub fn references_only(&self, allowed: impl Fn(usize) -> bool) -> bool {
        self.variables().into_iter().all(allowed)
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(&self.tape, self.space.dim())
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        self.evaluator().value(point)
    }

    pub fn eval_grad(&self, point: &[f64]) -> Result<(f64, DVector<f64>), ExprError> {
        let mut ev = self.evaluator();
        let v = ev.gradient(point)?;
        Ok((v, DVector::from_column_slice(ev.grad())))
    }

    pub fn jet2(&self, point: &[f64]) -> Result<Jet2, ExprError> {
        eval_jet2(self, point)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print::print(&self.root, &self.space))
    }
}

/// Value, gradient and Hessian of an expression at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

pub fn parse(source: &str, space: VarSpace) -> Result<Expr, ExprError> {
    Expr::parse(source, space)
}

pub fn eval_jet2(e: &Expr, point: &[f64]) -> Result<Jet2, ExprError> {
    let d = e.space.dim();
    let mut ev = e.evaluator();
    let value = ev.hessian(point)?;
    Ok(Jet2 {
        value,
        gradient: DVector::from_column_slice(ev.grad()),
        hessian: DMatrix::from_row_slice(d, d, ev.hess()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sp(m: usize, n: usize) -> VarSpace {
        VarSpace::new(m, n)
    }

    #[test]
    fn bilinear_jet() {
        let e = parse("x1*y1 - z", sp(1, 1)).unwrap();
        assert_eq!(e.variables().len(), 3);
        let j = eval_jet2(&e, &[2.0, 3.0, 1.0]).unwrap();
        assert_eq!(j.value, 5.0);
        assert_eq!(j.gradient.as_slice(), &[3.0, 2.0, -1.0]);
        let mut h = DMatrix::zeros(3, 3);
        h[(0, 1)] = 1.0;
        h[(1, 0)] = 1.0;
        assert_eq!(j.hessian, h);
    }

    #[test]
    fn monomial_jet() {
        // only z is referenced but the space still carries x1, y1
        let e = parse("z^2", sp(1, 1)).unwrap();
        let j = eval_jet2(&e, &[0.0, 0.0, 1.5]).unwrap();
        assert_eq!(j.value, 2.25);
        assert_eq!(j.gradient[2], 3.0);
        assert_eq!(j.hessian[(2, 2)], 2.0);
    }

    #[test]
    fn exp_jet_matches_finite_differences() {
        let e = parse("exp(x1*z)", sp(1, 1)).unwrap();
        let p = [1.0, 0.4, 0.0];
        let j = eval_jet2(&e, &p).unwrap();
        assert_eq!(j.value, 1.0);
        assert_eq!(j.gradient[0], 0.0);
        assert_eq!(j.gradient[2], 1.0);
        assert_eq!(j.hessian[(0, 2)], 1.0);
        assert_eq!(j.hessian[(0, 0)], 0.0);
        // central differences, step eps^(1/3)
        let h = f64::EPSILON.cbrt();
        let f = |q: &[f64]| e.eval(q).unwrap();
        for i in [0usize, 2] {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            assert_relative_eq!((f(&a) - f(&b)) / (2.0 * h), j.gradient[i], epsilon = 1e-9);
        }
        let mut pp = p;
        pp[0] += h;
        pp[2] += h;
        let mut pm = p;
        pm[0] += h;
        pm[2] -= h;
        let mut mp = p;
        mp[0] -= h;
        mp[2] += h;
        let mut mm = p;
        mm[0] -= h;
        mm[2] -= h;
        let mixed = (f(&pp) - f(&pm) - f(&mp) + f(&mm)) / (4.0 * h * h);
        assert_relative_eq!(mixed, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn syntax_error_offset() {
        let err = parse("x1*(y1 -", sp(1, 1)).unwrap_err();
        assert!(
            matches!(err, ExprError::Syntax { offset: 8, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn unknown_variable_and_arity() {
        assert!(matches!(
            parse("x2 + y1", sp(1, 1)),
            Err(ExprError::UnknownVariable { ref name, offset: 0 }) if name == "x2"
        ));
        assert!(matches!(
            parse("exp(x1, y1)", sp(1, 1)),
            Err(ExprError::Arity {
                expected: 1,
                found: 2,
                ..
            })
        ));
        assert!(matches!(
            parse("foo(x1)", sp(1, 1)),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            parse("", sp(1, 1)),
            Err(ExprError::Syntax { offset: 0, .. })
        ));
        assert!(matches!(
            parse("x01", sp(1, 1)),
            Err(ExprError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        let s = sp(1, 1);
        let v = |src: &str| parse(src, s).unwrap().eval(&[2.0, 3.0, 0.5]).unwrap();
        assert_eq!(v("1 - 2 - 3"), -4.0);
        assert_eq!(v("8 / 4 / 2"), 1.0);
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("-x1^2"), -4.0);
        assert_eq!(v("-x1*y1"), -6.0);
        assert_eq!(v("x1^-1"), 0.5);
        assert_eq!(v("2*x1 + y1*z"), 5.5);
        assert_eq!(v("1.5e1 + 2E-1"), 15.2);
    }

    #[test]
    fn roundtrip_print() {
        let s = sp(2, 1);
        for src in [
            "x1*y1 - z^2",
            "-(x1 - y1) / (z - x2)",
            "(x1 - (y1 - z))",
            "(-x1)^2 + (x2^y1)^z",
            "exp(-x1*z) + log(1 + y1^2) - sqrt(abs(x2) + 1)",
            "2^-3 * sin(x1)*cos(y1) / 0.1",
            "x1 / (y1 * z) - x1 / y1 * z",
        ] {
            let e = parse(src, s).unwrap();
            let printed = e.to_string();
            let again = parse(&printed, s).unwrap();
            assert_eq!(e, again, "{src} -> {printed}");
            assert_eq!(printed, again.to_string());
        }
    }

    #[test]
    fn domain_errors() {
        let s = sp(1, 1);
        let e = parse("log(z)", s).unwrap();
        assert!(matches!(
            e.eval(&[0.0, 0.0, -1.0]),
            Err(ExprError::Domain { op: "log", .. })
        ));
        let e = parse("sqrt(z)", s).unwrap();
        assert!(matches!(
            e.jet2(&[0.0, 0.0, 0.0]),
            Err(ExprError::Domain { .. })
        ));
        let e = parse("z^0.5", s).unwrap();
        assert!(matches!(
            e.eval(&[0.0, 0.0, -1.0]),
            Err(ExprError::Domain { .. })
        ));
        assert_relative_eq!(e.eval(&[0.0, 0.0, 4.0]).unwrap(), 2.0);
        let e = parse("1/z", s).unwrap();
        assert!(matches!(
            e.eval(&[0.0, 0.0, 0.0]),
            Err(ExprError::NonFinite)
        ));
        let e = parse("exp(z)", s).unwrap();
        assert!(matches!(
            e.eval(&[0.0, 0.0, 1000.0]),
            Err(ExprError::NonFinite)
        ));
        assert!(matches!(
            e.eval(&[0.0, 0.0]),
            Err(ExprError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn integer_powers_are_exact_for_negative_bases() {
        let e = parse("z^3 + z^-2", sp(1, 1)).unwrap();
        let j = e.jet2(&[0.0, 0.0, -2.0]).unwrap();
        assert_eq!(j.value, -8.0 + 0.25);
        assert_eq!(j.gradient[2], 12.0 - 2.0 * (-2.0f64).powi(-3));
        assert_eq!(j.hessian[(2, 2)], -12.0 + 6.0 * (-2.0f64).powi(-4));
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let e = parse("exp(x1*y1 - z^2) * sin(x2 + y1) / (1 + x1^2*z)", sp(2, 1)).unwrap();
        let j = e.jet2(&[0.3, -0.7, 0.2, 0.9]).unwrap();
        assert_eq!(j.hessian, j.hessian.transpose());
    }
}
