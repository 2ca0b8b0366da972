use super::{Expression, Func, Var};

use Expression as E;

fn num(v: f64) -> E {
    E::Num(v)
}

// Smart constructors fold constants and drop neutral elements.

fn neg(a: E) -> E {
    match a {
        E::Num(v) => num(-v),
        E::Neg(inner) => *inner,
        a => E::Neg(Box::new(a)),
    }
}

fn add(a: E, b: E) -> E {
    match (&a, &b) {
        (E::Num(x), E::Num(y)) => num(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => E::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: E, b: E) -> E {
    match (&a, &b) {
        (E::Num(x), E::Num(y)) => num(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => E::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: E, b: E) -> E {
    match (&a, &b) {
        (E::Num(x), E::Num(y)) => num(x * y),
        _ if a.is_zero() || b.is_zero() => num(0.0),
        (E::Num(x), _) if *x == 1.0 => b,
        (_, E::Num(y)) if *y == 1.0 => a,
        (E::Num(x), _) if *x == -1.0 => neg(b),
        (_, E::Num(y)) if *y == -1.0 => neg(a),
        _ => E::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: E, b: E) -> E {
    match (&a, &b) {
        (E::Num(x), E::Num(y)) if *y != 0.0 => num(x / y),
        _ if a.is_zero() => num(0.0),
        (_, E::Num(y)) if *y == 1.0 => a,
        _ => E::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: E, b: E) -> E {
    match b.as_const() {
        Some(v) if v == 0.0 => num(1.0),
        Some(v) if v == 1.0 => a,
        _ => E::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: E) -> E {
    E::Call(f, Box::new(a))
}

/// Symbolic partial derivative of `e` with respect to `var`.
///
/// Only constant folding is applied to the result; no further simplification.
pub fn differentiate(e: &Expression, var: Var) -> Expression {
    match e {
        E::Num(_) => num(0.0),
        E::Var(v) => num(if *v == var { 1.0 } else { 0.0 }),
        E::Neg(a) => neg(differentiate(a, var)),
        E::Add(a, b) => add(differentiate(a, var), differentiate(b, var)),
        E::Sub(a, b) => sub(differentiate(a, var), differentiate(b, var)),
        E::Mul(a, b) => add(
            mul(differentiate(a, var), (**b).clone()),
            mul((**a).clone(), differentiate(b, var)),
        ),
        E::Div(a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            if db.is_zero() {
                div(da, (**b).clone())
            } else {
                div(
                    sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    pow((**b).clone(), num(2.0)),
                )
            }
        }
        E::Pow(a, b) => {
            // exponent is constant by construction
            let da = differentiate(a, var);
            if da.is_zero() {
                return num(0.0);
            }
            let reduced = match b.as_const() {
                Some(v) => num(v - 1.0),
                None => sub((**b).clone(), num(1.0)),
            };
            mul(mul((**b).clone(), pow((**a).clone(), reduced)), da)
        }
        E::Call(f, a) => {
            let da = differentiate(a, var);
            if da.is_zero() {
                return num(0.0);
            }
            let outer = match f {
                Func::Sin => call(Func::Cos, (**a).clone()),
                Func::Cos => neg(call(Func::Sin, (**a).clone())),
                Func::Exp => call(Func::Exp, (**a).clone()),
                Func::Tanh => sub(num(1.0), pow(call(Func::Tanh, (**a).clone()), num(2.0))),
            };
            mul(outer, da)
        }
    }
}
