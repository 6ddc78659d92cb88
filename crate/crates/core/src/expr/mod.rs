//! Scalar arithmetic expressions over state variables `x1..xn` and inputs `u1..um`.
//!
//! Expressions carry the vector fields, control laws and partitioning functions of a
//! model. They are immutable once built and can be evaluated from many threads.

mod diff;
mod parse;
mod print;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub use parse::{parse_expression, parse_state_expression, ParseError};

/// A variable reference. Indices are zero-based; `State(0)` prints as `x1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    State(usize),
    Input(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::State(i) => write!(f, "x{}", i + 1),
            Var::Input(i) => write!(f, "u{}", i + 1),
        }
    }
}

/// Elementary functions. `Sign` only appears as the derivative of `abs`, but it
/// parses like the others so printed derivatives read back in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Sign,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Integer power with a non-negative exponent.
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    DivisionByZero,
    NegativeSqrt,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{kind:?} while evaluating at x={x:?}, u={u:?}")]
    Domain {
        kind: DomainKind,
        x: Vec<f64>,
        u: Vec<f64>,
    },
    #[error("variable {0} has no value at this point")]
    Unbound(Var),
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Const(c) if *c == 1.0)
}

// Folding constructors. Only literal zeros and ones (and constant-constant
// arithmetic) are simplified.
impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn state(i: usize) -> Expr {
        Expr::Var(Var::State(i))
    }

    pub fn input(i: usize) -> Expr {
        Expr::Var(Var::Input(i))
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            a => Expr::Neg(Box::new(a)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (a, b) if is_zero(&a) => b,
            (a, b) if is_zero(&b) => a,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (a, b) if is_zero(&b) => a,
            (a, b) if is_zero(&a) => Expr::neg(b),
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (a, _) if is_zero(&a) => Expr::Const(0.0),
            (_, b) if is_zero(&b) => Expr::Const(0.0),
            (a, b) if is_one(&a) => b,
            (a, b) if is_one(&b) => a,
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (a, _) if is_zero(&a) => Expr::Const(0.0),
            (a, b) if is_one(&b) => a,
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, n: u32) -> Expr {
        match n {
            0 => Expr::Const(1.0),
            1 => a,
            n => Expr::Pow(Box::new(a), n),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }

    /// Evaluates at the point `(x, u)`.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        let domain = |kind| EvalError::Domain {
            kind,
            x: x.to_vec(),
            u: u.to_vec(),
        };
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => {
                let slot = match v {
                    Var::State(i) => x.get(*i),
                    Var::Input(i) => u.get(*i),
                };
                *slot.ok_or(EvalError::Unbound(*v))?
            }
            Expr::Neg(a) => -a.eval(x, u)?,
            Expr::Add(a, b) => a.eval(x, u)? + b.eval(x, u)?,
            Expr::Sub(a, b) => a.eval(x, u)? - b.eval(x, u)?,
            Expr::Mul(a, b) => a.eval(x, u)? * b.eval(x, u)?,
            Expr::Div(a, b) => {
                let num = a.eval(x, u)?;
                let den = b.eval(x, u)?;
                if den == 0.0 {
                    return Err(domain(DomainKind::DivisionByZero));
                }
                num / den
            }
            Expr::Pow(a, n) => a.eval(x, u)?.powi(*n as i32),
            Expr::Call(f, a) => {
                let v = a.eval(x, u)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(domain(DomainKind::NegativeSqrt));
                        }
                        v.sqrt()
                    }
                    Func::Abs => v.abs(),
                    Func::Sign => {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        })
    }

    /// Evaluates an expression that references state variables only.
    pub fn eval_state(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.eval(x, &[])
    }

    /// Symbolic partial derivative with respect to `var`.
    pub fn differentiate(&self, var: Var) -> Expr {
        diff::differentiate(self, var)
    }

    /// Replaces every input variable `u_j` by `laws[j]`.
    pub fn substitute_inputs(&self, laws: &[Expr]) -> Expr {
        self.map_vars(&|v| match v {
            Var::Input(j) => laws.get(j).cloned(),
            Var::State(_) => None,
        })
    }

    fn map_vars(&self, f: &dyn Fn(Var) -> Option<Expr>) -> Expr {
        let bx = |e: &Expr| Box::new(e.map_vars(f));
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => f(*v).unwrap_or(Expr::Var(*v)),
            Expr::Neg(a) => Expr::Neg(bx(a)),
            Expr::Add(a, b) => Expr::Add(bx(a), bx(b)),
            Expr::Sub(a, b) => Expr::Sub(bx(a), bx(b)),
            Expr::Mul(a, b) => Expr::Mul(bx(a), bx(b)),
            Expr::Div(a, b) => Expr::Div(bx(a), bx(b)),
            Expr::Pow(a, n) => Expr::Pow(bx(a), *n),
            Expr::Call(g, a) => Expr::Call(*g, bx(a)),
        }
    }

    /// The set of variables referenced by the expression.
    pub fn variables(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn has_inputs(&self) -> bool {
        self.variables()
            .iter()
            .any(|v| matches!(v, Var::Input(_)))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_expr(self, f)
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Evaluates every component of a vector of expressions.
pub fn eval_all(exprs: &[Expr], x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
    exprs.iter().map(|e| e.eval(x, u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Expr {
        parse_expression(text, 3, 2).unwrap()
    }

    #[test]
    fn evaluates_examples() {
        assert_eq!(p("2*x1^2").eval(&[3.0, 0.0, 0.0], &[0.0, 0.0]).unwrap(), 18.0);
        assert_eq!(p("-x1 + u1").eval(&[1.0, 0.0, 0.0], &[1.5, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn division_by_zero_carries_point() {
        let err = p("1/x1").eval(&[0.0, 2.0, 0.0], &[0.0, 0.0]).unwrap_err();
        match err {
            EvalError::Domain { kind, x, .. } => {
                assert_eq!(kind, DomainKind::DivisionByZero);
                assert_eq!(x, vec![0.0, 2.0, 0.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let err = p("sqrt(x1)").eval(&[-1.0, 0.0, 0.0], &[]).unwrap_err();
        assert!(matches!(
            err,
            EvalError::Domain {
                kind: DomainKind::NegativeSqrt,
                ..
            }
        ));
    }

    #[test]
    fn sign_is_zero_at_zero() {
        let e = p("sign(x1)");
        assert_eq!(e.eval(&[0.0, 0.0, 0.0], &[]).unwrap(), 0.0);
        assert_eq!(e.eval(&[-2.0, 0.0, 0.0], &[]).unwrap(), -1.0);
    }

    #[test]
    fn substitution_removes_inputs() {
        let f = p("-x1 + u1");
        let g = p("2*x1");
        let fg = f.substitute_inputs(&[g]);
        assert!(!fg.has_inputs());
        assert_eq!(fg.eval_state(&[1.5, 0.0, 0.0]).unwrap(), 1.5);
    }

    #[test]
    fn folding_constructors() {
        let x = Expr::state(0);
        assert_eq!(Expr::mul(Expr::constant(1.0), x.clone()), x);
        assert_eq!(Expr::mul(x.clone(), Expr::constant(0.0)), Expr::Const(0.0));
        assert_eq!(Expr::add(Expr::constant(0.0), x.clone()), x);
        assert_eq!(Expr::pow(x.clone(), 1), x);
        assert_eq!(Expr::neg(Expr::neg(x.clone())), x);
    }
}
