//! Random well-conditioned expressions over `x1, y1, z1`.

use lypmfd::expr::{Expression, Func, Var};
use lypmfd::Component;
use rand::Rng;

fn leaf<R: Rng>(rng: &mut R) -> Expression {
    match rng.random_range(0..4) {
        0 => Expression::Var(Var::new(Component::X, 0)),
        1 => Expression::Var(Var::new(Component::Y, 0)),
        2 => Expression::Var(Var::new(Component::Z, 0)),
        _ => Expression::Num((rng.random_range(-2.0..2.0f64) * 100.0).round() / 100.0),
    }
}

fn boxed(e: Expression) -> Box<Expression> {
    Box::new(e)
}

/// Denominators are kept away from zero and fractional powers get positive bases.
pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> Expression {
    if depth == 0 || rng.random_bool(0.2) {
        return leaf(rng);
    }
    let sub = |rng: &mut R| random_expr(rng, depth - 1);
    match rng.random_range(0..9) {
        0 => Expression::Add(boxed(sub(rng)), boxed(sub(rng))),
        1 => Expression::Sub(boxed(sub(rng)), boxed(sub(rng))),
        2 | 3 => Expression::Mul(boxed(sub(rng)), boxed(sub(rng))),
        4 => {
            let d = sub(rng);
            let den = Expression::Add(boxed(Expression::Num(2.0)), boxed(Expression::Mul(boxed(d.clone()), boxed(d))));
            Expression::Div(boxed(sub(rng)), boxed(den))
        }
        5 => Expression::Pow(boxed(sub(rng)), boxed(Expression::Num(rng.random_range(2..4) as f64))),
        6 => {
            let base = Expression::Add(boxed(Expression::Num(2.0)), boxed(Expression::Call(Func::Sin, boxed(sub(rng)))));
            Expression::Pow(boxed(base), boxed(Expression::Num(0.5)))
        }
        7 => Expression::Neg(boxed(sub(rng))),
        _ => {
            let f = [Func::Sin, Func::Cos, Func::Tanh, Func::Exp][rng.random_range(0..4)];
            let arg = if f == Func::Exp { Expression::Call(Func::Tanh, boxed(sub(rng))) } else { sub(rng) };
            Expression::Call(f, boxed(arg))
        }
    }
}

#[derive(Debug, Default)]
pub struct DslSuite {
    pub cases: usize,
    pub roundtrip_failures: Vec<String>,
    pub derivative_failures: Vec<String>,
    /// Largest derivative mismatch, relative to `max(1, |d|)`.
    pub max_derivative_error: f64,
}

/// Round-trip through the printer and compare symbolic derivatives with central differences.
pub fn run_dsl_suite(cases: usize, seed: u64, tol: f64) -> DslSuite {
    use lypmfd::expr::{differentiate, parse};
    use lypmfd::system::Dims;
    use rand::SeedableRng;

    let dims = Dims::new(1, 1, 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = DslSuite { cases, ..Default::default() };
    for _ in 0..cases {
        let e = random_expr(&mut rng, 4);
        let text = e.to_string();
        let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        match parse(&text, dims) {
            Ok(back) => {
                let (a, b) = (e.eval(&u, dims).unwrap(), back.eval(&u, dims).unwrap());
                if back.to_string() != text || (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                    out.roundtrip_failures.push(text.clone());
                }
            }
            Err(err) => out.roundtrip_failures.push(format!("{text}: {err}")),
        }
        for j in 0..3 {
            let d = differentiate(&e, Var::from_flat(j, dims)).eval(&u, dims).unwrap();
            let h = 1e-5;
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (e.eval(&up, dims).unwrap() - e.eval(&dn, dims).unwrap()) / (2.0 * h);
            let err = (d - fd).abs() / d.abs().max(1.0);
            out.max_derivative_error = out.max_derivative_error.max(err);
            if err > tol {
                out.derivative_failures.push(format!("d/du{j} {text} at {u:?}: {d} vs {fd}"));
            }
        }
    }
    out
}
