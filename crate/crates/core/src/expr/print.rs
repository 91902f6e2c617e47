use super::{BinOp, Node, VarSpace};

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

fn prec(node: &Node) -> u8 {
    match node {
        Node::Const(v) if v.is_sign_negative() => NEG,
        Node::Const(_) | Node::Var(_) | Node::Call(..) => ATOM,
        Node::Neg(_) => NEG,
        Node::Binary(BinOp::Add | BinOp::Sub, ..) => ADD,
        Node::Binary(BinOp::Mul | BinOp::Div, ..) => MUL,
        Node::Binary(BinOp::Pow, ..) => POW,
    }
}

fn wrapped(node: &Node, space: &VarSpace, wrap: bool) -> String {
    let s = print(node, space);
    if wrap {
        format!("({s})")
    } else {
        s
    }
}

/// Print with the minimum parentheses needed for the parser to rebuild the
/// same tree.
pub(super) fn print(node: &Node, space: &VarSpace) -> String {
    match node {
        Node::Const(v) => format!("{v}"),
        Node::Var(i) => space.name(*i),
        Node::Call(f, a) => format!("{}({})", f.name(), print(a, space)),
        Node::Neg(a) => format!("-{}", wrapped(a, space, prec(a) < NEG)),
        Node::Binary(BinOp::Pow, a, b) => format!(
            "{}^{}",
            wrapped(a, space, prec(a) < ATOM),
            wrapped(b, space, prec(b) < NEG)
        ),
        Node::Binary(op, a, b) => {
            let (p, sym) = match op {
                BinOp::Add => (ADD, " + "),
                BinOp::Sub => (ADD, " - "),
                BinOp::Mul => (MUL, "*"),
                BinOp::Div => (MUL, "/"),
                BinOp::Pow => unreachable!(),
            };
            format!(
                "{}{}{}",
                wrapped(a, space, prec(a) < p),
                sym,
                wrapped(b, space, prec(b) <= p)
            )
        }
    }
}
