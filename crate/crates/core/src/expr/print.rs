use std::fmt;

use super::Expr;

const ADD: u8 = 1;
const MUL: u8 = 2;
const UNARY: u8 = 3;
const ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => ADD,
        Expr::Mul(..) | Expr::Div(..) => MUL,
        Expr::Neg(_) => UNARY,
        Expr::Const(c) if c.is_sign_negative() => UNARY,
        Expr::Pow(..) => 4,
        Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => ATOM,
    }
}

fn child(e: &Expr, parens: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if parens {
        f.write_str("(")?;
        write_expr(e, f)?;
        f.write_str(")")
    } else {
        write_expr(e, f)
    }
}

/// Writes `e` with the minimal parenthesization that re-parses to the same tree.
pub(super) fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let binary = |a: &Expr, op: &str, b: &Expr, level: u8, f: &mut fmt::Formatter<'_>| {
        child(a, precedence(a) < level, f)?;
        f.write_str(op)?;
        child(b, precedence(b) <= level, f)
    };
    match e {
        Expr::Const(c) => write!(f, "{c}"),
        Expr::Var(v) => write!(f, "{v}"),
        Expr::Neg(a) => {
            f.write_str("-")?;
            // `-2` would read back as a negative literal rather than a negation.
            let literal = matches!(**a, Expr::Const(c) if !c.is_sign_negative());
            child(a, literal || precedence(a) < UNARY, f)
        }
        Expr::Add(a, b) => binary(a, " + ", b, ADD, f),
        Expr::Sub(a, b) => binary(a, " - ", b, ADD, f),
        Expr::Mul(a, b) => binary(a, "*", b, MUL, f),
        Expr::Div(a, b) => binary(a, "/", b, MUL, f),
        Expr::Pow(a, n) => {
            child(a, precedence(a) < ATOM, f)?;
            write!(f, "^{n}")
        }
        Expr::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_expr(a, f)?;
            f.write_str(")")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_expression, Expr, Func};
    use proptest::prelude::*;

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-1e3f64..1e3).prop_map(Expr::Const),
            (0usize..2).prop_map(Expr::state),
            (0usize..1).prop_map(Expr::input),
            Just(Expr::Const(-0.0)),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            let b = |e: Expr| Box::new(e);
            prop_oneof![
                inner.clone().prop_map(move |a| Expr::Neg(b(a))),
                (inner.clone(), inner.clone()).prop_map(move |(a, c)| Expr::Add(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(move |(a, c)| Expr::Sub(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(move |(a, c)| Expr::Mul(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(move |(a, c)| Expr::Div(b(a), b(c))),
                (inner.clone(), 0u32..4).prop_map(move |(a, n)| Expr::Pow(b(a), n)),
                (inner, prop_oneof![
                    Just(Func::Sin),
                    Just(Func::Cos),
                    Just(Func::Exp),
                    Just(Func::Sqrt),
                    Just(Func::Abs),
                    Just(Func::Sign)
                ])
                .prop_map(move |(a, func)| Expr::Call(func, b(a))),
            ]
        })
    }

    fn same_bits(a: &Result<f64, super::super::EvalError>, b: &Result<f64, super::super::EvalError>) -> bool {
        match (a, b) {
            (Ok(x), Ok(y)) => x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()),
            (Err(_), Err(_)) => true,
            _ => false,
        }
    }

    proptest! {
        #[test]
        fn print_then_parse_is_structural_identity(e in arb_expr()) {
            let text = e.to_string();
            let back = parse_expression(&text, 2, 1).unwrap();
            prop_assert_eq!(&back, &e, "printed as {}", text);
        }

        #[test]
        fn print_then_parse_evaluates_identically(
            e in arb_expr(),
            pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 100),
        ) {
            let back = parse_expression(&e.to_string(), 2, 1).unwrap();
            for (a, b, c) in pts {
                let x = [a, b];
                let u = [c];
                prop_assert!(same_bits(&e.eval(&x, &u), &back.eval(&x, &u)));
            }
        }
    }

    #[test]
    fn prints_readably() {
        let e = parse_expression("-x1 + u1", 1, 1).unwrap();
        assert_eq!(e.to_string(), "-x1 + u1");
        let e = parse_expression("2*(x1 + 1)^2 - -3", 1, 0).unwrap();
        assert_eq!(e.to_string(), "2*(x1 + 1)^2 - -3");
    }
}
