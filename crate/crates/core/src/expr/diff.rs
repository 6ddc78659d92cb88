use super::{Expr, Func, Var};

pub(super) fn differentiate(e: &Expr, var: Var) -> Expr {
    let d = |a: &Expr| differentiate(a, var);
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => Expr::neg(d(a)),
        Expr::Add(a, b) => Expr::add(d(a), d(b)),
        Expr::Sub(a, b) => Expr::sub(d(a), d(b)),
        Expr::Mul(a, b) => Expr::add(
            Expr::mul(d(a), (**b).clone()),
            Expr::mul((**a).clone(), d(b)),
        ),
        Expr::Div(a, b) => {
            let num = Expr::sub(
                Expr::mul(d(a), (**b).clone()),
                Expr::mul((**a).clone(), d(b)),
            );
            Expr::div(num, Expr::pow((**b).clone(), 2))
        }
        Expr::Pow(a, n) => match n {
            0 => Expr::Const(0.0),
            n => Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                d(a),
            ),
        },
        Expr::Call(f, a) => {
            let a0 = (**a).clone();
            let outer = match f {
                Func::Sin => Expr::call(Func::Cos, a0),
                Func::Cos => Expr::neg(Expr::call(Func::Sin, a0)),
                Func::Exp => Expr::call(Func::Exp, a0),
                Func::Sqrt => {
                    return Expr::div(
                        d(a),
                        Expr::mul(Expr::Const(2.0), Expr::call(Func::Sqrt, a0)),
                    )
                }
                Func::Abs => Expr::call(Func::Sign, a0),
                Func::Sign => return Expr::Const(0.0),
            };
            Expr::mul(outer, d(a))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_expression;
    use super::*;
    use proptest::prelude::*;

    fn dx1(text: &str) -> String {
        parse_expression(text, 2, 1)
            .unwrap()
            .differentiate(Var::State(0))
            .to_string()
    }

    #[test]
    fn textbook_derivatives() {
        assert_eq!(dx1("x1^2"), "2*x1");
        assert_eq!(dx1("u1"), "0");
        assert_eq!(dx1("sin(x1)*x2"), "cos(x1)*x2");
        assert_eq!(dx1("abs(x1)"), "sign(x1)");
        assert_eq!(dx1("x2"), "0");
    }

    // Smooth random expressions: no abs/sign kinks, division and sqrt guarded so that
    // finite differences are meaningful.
    fn arb_smooth() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-3.0f64..3.0).prop_map(Expr::Const),
            (0usize..2).prop_map(Expr::state),
            Just(Expr::input(0)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            let b = |e: Expr| Box::new(e);
            let positive = |e: Expr| {
                Expr::Add(
                    Box::new(Expr::Const(1.5)),
                    Box::new(Expr::Pow(Box::new(e), 2)),
                )
            };
            prop_oneof![
                inner.clone().prop_map(move |a| Expr::Neg(b(a))),
                (inner.clone(), inner.clone()).prop_map(move |(a, c)| Expr::Add(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(move |(a, c)| Expr::Sub(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(move |(a, c)| Expr::Mul(b(a), b(c))),
                (inner.clone(), inner.clone())
                    .prop_map(move |(a, c)| Expr::Div(b(a), b(positive(c)))),
                (inner.clone(), 0u32..4).prop_map(move |(a, n)| Expr::Pow(b(a), n)),
                inner.clone().prop_map(move |a| Expr::Call(Func::Sin, b(a))),
                inner.clone().prop_map(move |a| Expr::Call(Func::Cos, b(a))),
                inner.clone().prop_map(move |a| Expr::Call(
                    Func::Exp,
                    b(Expr::Call(Func::Sin, b(a)))
                )),
                inner.prop_map(move |a| Expr::Call(Func::Sqrt, b(positive(a)))),
            ]
        })
    }

    proptest! {
        #[test]
        fn matches_central_difference(
            e in arb_smooth(),
            x in proptest::array::uniform2(-1.5f64..1.5),
            u in -1.5f64..1.5,
            which in 0usize..3,
        ) {
            let var = match which {
                0 => Var::State(0),
                1 => Var::State(1),
                _ => Var::Input(0),
            };
            let h = 1e-6;
            let shifted = |delta: f64| {
                let mut xs = x;
                let mut us = [u];
                match var {
                    Var::State(i) => xs[i] += delta,
                    Var::Input(j) => us[j] += delta,
                }
                e.eval(&xs, &us).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let exact = e.differentiate(var).eval(&x, &[u]).unwrap();
            // Relative agreement, with an absolute floor set by the rounding error of
            // the difference quotient itself.
            let scale = e.eval(&x, &[u]).unwrap().abs().max(1.0);
            let tol = 1e-5 * exact.abs().max(1.0) + 1e-8 * scale;
            prop_assert!((fd - exact).abs() <= tol, "fd={fd} exact={exact} for {e}");
        }
    }
}
