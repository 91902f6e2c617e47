// Flat evaluation tape with second-order forward accumulation.

use super::{BinOp, ExprError, Func, Node};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    PowInt(usize, i32),
    // real exponent, positive base
    Pow(usize, usize),
    Call(Func, usize),
}

#[derive(Debug, Clone)]
pub(super) struct Tape {
    ops: Vec<Op>,
}

fn integer_exponent(node: &Node) -> Option<i32> {
    let v = match node {
        Node::Const(c) => *c,
        Node::Neg(inner) => match **inner {
            Node::Const(c) => -c,
            _ => return None,
        },
        _ => return None,
    };
    (v.fract() == 0.0 && v.abs() <= i32::MAX as f64).then_some(v as i32)
}

impl Tape {
    pub(super) fn compile(root: &Node) -> Tape {
        let mut t = Tape { ops: Vec::new() };
        t.emit(root);
        t
    }

    fn push(&mut self, op: Op) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn emit(&mut self, node: &Node) -> usize {
        match node {
            Node::Const(c) => self.push(Op::Const(*c)),
            Node::Var(i) => self.push(Op::Var(*i)),
            Node::Neg(a) => {
                let a = self.emit(a);
                self.push(Op::Neg(a))
            }
            Node::Call(f, a) => {
                let a = self.emit(a);
                self.push(Op::Call(*f, a))
            }
            Node::Binary(BinOp::Pow, a, b) => {
                let a = self.emit(a);
                if let Some(k) = integer_exponent(b) {
                    return self.push(Op::PowInt(a, k));
                }
                let b = self.emit(b);
                self.push(Op::Pow(a, b))
            }
            Node::Binary(op, a, b) => {
                let a = self.emit(a);
                let b = self.emit(b);
                self.push(match op {
                    BinOp::Add => Op::Add(a, b),
                    BinOp::Sub => Op::Sub(a, b),
                    BinOp::Mul => Op::Mul(a, b),
                    BinOp::Div => Op::Div(a, b),
                    BinOp::Pow => unreachable!(),
                })
            }
        }
    }
}

/// Reusable evaluation workspace for one expression.
///
/// Buffers are sized once; repeated evaluations do not allocate.
pub struct Evaluator<'t> {
    tape: &'t Tape,
    d: usize,
    vals: Vec<f64>,
    grads: Vec<f64>,
    hess: Vec<f64>,
}

impl<'t> Evaluator<'t> {
    pub(super) fn new(tape: &'t Tape, d: usize) -> Self {
        let k = tape.ops.len();
        Evaluator {
            tape,
            d,
            vals: vec![0.0; k],
            grads: vec![0.0; k * d],
            hess: vec![0.0; k * d * d],
        }
    }

    pub fn value(&mut self, point: &[f64]) -> Result<f64, ExprError> {
        self.run(point, 0)
    }

    /// Value; the gradient is then available from [`Evaluator::grad`].
    pub fn gradient(&mut self, point: &[f64]) -> Result<f64, ExprError> {
        self.run(point, 1)
    }

    /// Value; gradient and row-major Hessian are then available.
    pub fn hessian(&mut self, point: &[f64]) -> Result<f64, ExprError> {
        self.run(point, 2)
    }

    pub fn grad(&self) -> &[f64] {
        let s = self.vals.len() - 1;
        &self.grads[s * self.d..(s + 1) * self.d]
    }

    pub fn hess(&self) -> &[f64] {
        let s = self.vals.len() - 1;
        let dd = self.d * self.d;
        &self.hess[s * dd..(s + 1) * dd]
    }

    fn run(&mut self, point: &[f64], order: u8) -> Result<f64, ExprError> {
        if point.len() != self.d {
            return Err(ExprError::DimensionMismatch {
                expected: self.d,
                found: point.len(),
            });
        }
        for s in 0..self.tape.ops.len() {
            self.step(s, point, order)?;
        }
        let last = self.vals.len() - 1;
        let ok = self.vals[last].is_finite()
            && (order < 1 || self.grad().iter().all(|g| g.is_finite()))
            && (order < 2 || self.hess().iter().all(|h| h.is_finite()));
        if ok {
            Ok(self.vals[last])
        } else {
            Err(ExprError::NonFinite)
        }
    }

    fn step(&mut self, s: usize, point: &[f64], order: u8) -> Result<(), ExprError> {
        let d = self.d;
        let dd = d * d;
        match self.tape.ops[s] {
            Op::Const(c) => {
                self.vals[s] = c;
                if order >= 1 {
                    self.grads[s * d..(s + 1) * d].fill(0.0);
                }
                if order >= 2 {
                    self.hess[s * dd..(s + 1) * dd].fill(0.0);
                }
            }
            Op::Var(i) => {
                self.vals[s] = point[i];
                if order >= 1 {
                    let g = &mut self.grads[s * d..(s + 1) * d];
                    g.fill(0.0);
                    g[i] = 1.0;
                }
                if order >= 2 {
                    self.hess[s * dd..(s + 1) * dd].fill(0.0);
                }
            }
            Op::Neg(a) => self.chain(s, a, -self.vals[a], -1.0, 0.0, order),
            Op::Add(a, b) => self.linear(s, a, b, 1.0, order),
            Op::Sub(a, b) => self.linear(s, a, b, -1.0, order),
            Op::Mul(a, b) => self.product(s, a, b, order),
            Op::Div(a, b) => self.quotient(s, a, b, order),
            Op::PowInt(a, k) => {
                let v = self.vals[a];
                if k == 0 {
                    self.chain(s, a, 1.0, 0.0, 0.0, order);
                } else {
                    let f0 = v.powi(k);
                    let f1 = k as f64 * v.powi(k - 1);
                    let f2 = (k as f64) * ((k - 1) as f64) * v.powi(k - 2);
                    self.chain(s, a, f0, f1, f2, order);
                }
            }
            Op::Pow(a, b) => {
                let (va, vb) = (self.vals[a], self.vals[b]);
                if va <= 0.0 {
                    return Err(ExprError::Domain { op: "pow", arg: va });
                }
                let f = va.powf(vb);
                let l = va.ln();
                let pm1 = va.powf(vb - 1.0);
                let d1 = [vb * pm1, f * l];
                let d2 = [
                    vb * (vb - 1.0) * va.powf(vb - 2.0),
                    pm1 * (1.0 + vb * l),
                    f * l * l,
                ];
                self.binary_chain(s, a, b, f, d1, d2, order);
            }
            Op::Call(f, a) => {
                let v = self.vals[a];
                let (f0, f1, f2) = match f {
                    Func::Exp => {
                        let e = v.exp();
                        (e, e, e)
                    }
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(ExprError::Domain { op: "log", arg: v });
                        }
                        (v.ln(), 1.0 / v, -1.0 / (v * v))
                    }
                    Func::Sqrt => {
                        if v < 0.0 || (order >= 1 && v == 0.0) {
                            return Err(ExprError::Domain { op: "sqrt", arg: v });
                        }
                        let r = v.sqrt();
                        (r, 0.5 / r, -0.25 / (r * v))
                    }
                    Func::Sin => (v.sin(), v.cos(), -v.sin()),
                    Func::Cos => (v.cos(), -v.sin(), -v.cos()),
                    Func::Abs => (v.abs(), sign(v), 0.0),
                };
                self.chain(s, a, f0, f1, f2, order);
            }
        }
        Ok(())
    }

    // s = f(a) with f'(a) = f1, f''(a) = f2
    fn chain(&mut self, s: usize, a: usize, f0: f64, f1: f64, f2: f64, order: u8) {
        let d = self.d;
        self.vals[s] = f0;
        if order >= 1 {
            let (prev, cur) = self.grads.split_at_mut(s * d);
            let ga = &prev[a * d..(a + 1) * d];
            for (c, g) in cur[..d].iter_mut().zip(ga) {
                *c = f1 * g;
            }
        }
        if order >= 2 {
            let dd = d * d;
            let ga = &self.grads[a * d..(a + 1) * d];
            let (prev, cur) = self.hess.split_at_mut(s * dd);
            let ha = &prev[a * dd..(a + 1) * dd];
            for i in 0..d {
                for j in i..d {
                    let v = f1 * ha[i * d + j] + f2 * ga[i] * ga[j];
                    cur[i * d + j] = v;
                    cur[j * d + i] = v;
                }
            }
        }
    }

    // s = f(a, b) with gradient d1 = [f_a, f_b], d2 = [f_aa, f_ab, f_bb]
    #[allow(clippy::too_many_arguments)]
    fn binary_chain(
        &mut self,
        s: usize,
        a: usize,
        b: usize,
        f0: f64,
        d1: [f64; 2],
        d2: [f64; 3],
        order: u8,
    ) {
        let d = self.d;
        self.vals[s] = f0;
        if order >= 1 {
            let (prev, cur) = self.grads.split_at_mut(s * d);
            for k in 0..d {
                cur[k] = d1[0] * prev[a * d + k] + d1[1] * prev[b * d + k];
            }
        }
        if order >= 2 {
            let dd = d * d;
            let ga = &self.grads[a * d..(a + 1) * d];
            let gb = &self.grads[b * d..(b + 1) * d];
            let (prev, cur) = self.hess.split_at_mut(s * dd);
            let ha = &prev[a * dd..(a + 1) * dd];
            let hb = &prev[b * dd..(b + 1) * dd];
            for i in 0..d {
                for j in i..d {
                    let v = d1[0] * ha[i * d + j]
                        + d1[1] * hb[i * d + j]
                        + d2[0] * ga[i] * ga[j]
                        + d2[1] * (ga[i] * gb[j] + gb[i] * ga[j])
                        + d2[2] * gb[i] * gb[j];
                    cur[i * d + j] = v;
                    cur[j * d + i] = v;
                }
            }
        }
    }

    // s = a + sign * b
    fn linear(&mut self, s: usize, a: usize, b: usize, sign: f64, order: u8) {
        let d = self.d;
        self.vals[s] = self.vals[a] + sign * self.vals[b];
        if order >= 1 {
            let (prev, cur) = self.grads.split_at_mut(s * d);
            for k in 0..d {
                cur[k] = prev[a * d + k] + sign * prev[b * d + k];
            }
        }
        if order >= 2 {
            let dd = d * d;
            let (prev, cur) = self.hess.split_at_mut(s * dd);
            for k in 0..dd {
                cur[k] = prev[a * dd + k] + sign * prev[b * dd + k];
            }
        }
    }

    fn product(&mut self, s: usize, a: usize, b: usize, order: u8) {
        let d = self.d;
        let (va, vb) = (self.vals[a], self.vals[b]);
        self.vals[s] = va * vb;
        if order >= 1 {
            let (prev, cur) = self.grads.split_at_mut(s * d);
            for k in 0..d {
                cur[k] = prev[a * d + k] * vb + va * prev[b * d + k];
            }
        }
        if order >= 2 {
            let dd = d * d;
            let ga = &self.grads[a * d..(a + 1) * d];
            let gb = &self.grads[b * d..(b + 1) * d];
            let (prev, cur) = self.hess.split_at_mut(s * dd);
            let ha = &prev[a * dd..(a + 1) * dd];
            let hb = &prev[b * dd..(b + 1) * dd];
            for i in 0..d {
                for j in i..d {
                    let v =
                        ha[i * d + j] * vb + va * hb[i * d + j] + (ga[i] * gb[j] + gb[i] * ga[j]);
                    cur[i * d + j] = v;
                    cur[j * d + i] = v;
                }
            }
        }
    }

    fn quotient(&mut self, s: usize, a: usize, b: usize, order: u8) {
        let d = self.d;
        let (va, vb) = (self.vals[a], self.vals[b]);
        let q = va / vb;
        self.vals[s] = q;
        if order >= 1 {
            let (prev, cur) = self.grads.split_at_mut(s * d);
            for k in 0..d {
                cur[k] = (prev[a * d + k] - q * prev[b * d + k]) / vb;
            }
        }
        if order >= 2 {
            let dd = d * d;
            let (gprev, gcur) = self.grads.split_at(s * d);
            let gq = &gcur[..d];
            let gb = &gprev[b * d..(b + 1) * d];
            let (prev, cur) = self.hess.split_at_mut(s * dd);
            let ha = &prev[a * dd..(a + 1) * dd];
            let hb = &prev[b * dd..(b + 1) * dd];
            for i in 0..d {
                for j in i..d {
                    let v =
                        (ha[i * d + j] - q * hb[i * d + j] - (gq[i] * gb[j] + gb[i] * gq[j])) / vb;
                    cur[i * d + j] = v;
                    cur[j * d + i] = v;
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
