//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

#[path = "../../core/tests/common/random_expr.rs"]
mod random_expr;

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use lypmfd::config::Problem;
use lypmfd::lyapunov_perron::{sample_manifold, solve_fixed_point, solve_from, Operator};
use lypmfd::regularity::{check_phi_pair_bound, solve_t1_fixed_point, LinearizedTrajectory, T1Operator};
use lypmfd::space::Trajectory;
use lypmfd::system::StateVector;
use lypmfd::validation::{invariance_check, ode_residual_check};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"))
}

fn problem(name: &str) -> Problem {
    let text = std::fs::read_to_string(config(name)).unwrap();
    Problem::from_json(&text).unwrap()
}

fn cli(args: &[&str]) -> (i32, Value) {
    let out = Command::new(env!("CARGO_BIN_EXE_lypmfd")).args(args).output().expect("binary runs");
    let json = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap_or(-1), json)
}

fn y(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn criterion_1() -> Outcome {
    let path = config("reference");
    let (code, report) = cli(&["check", "--config", path.to_str().unwrap()]);
    let dphi = report["delta_phi"].as_f64().unwrap_or(f64::NAN);
    let bound = report["lipschitz_bound"].as_f64().unwrap_or(f64::NAN);
    let ok = code == 0 && dphi == 0.2 && (bound - 0.2f64.exp()).abs() < 1e-12;
    outcome(ok, format!("exit {code}, delta_phi = {dphi}, bound - e^0.2 = {:e}", bound - 0.2f64.exp()))
}

fn criterion_2() -> Outcome {
    let path = config("quadratic");
    let path = path.to_str().unwrap();
    let mut worst_phi: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for y0 in [-0.3, -0.1, 0.1, 0.3] {
        let arg = format!("--y0={y0}");
        let (c1, s) = cli(&["solve", "--config", path, &arg]);
        let (c2, j) = cli(&["jacobian", "--config", path, &arg]);
        if c1 != 0 || c2 != 0 {
            return outcome(false, format!("y0 = {y0}: exit codes {c1}, {c2}"));
        }
        worst_phi = worst_phi.max((s["phi_x"][0].as_f64().unwrap() - y0 * y0).abs());
        worst_d = worst_d.max((j["dphi_x"][0][0].as_f64().unwrap() - 2.0 * y0).abs());
    }
    outcome(worst_phi <= 1e-4 && worst_d <= 1e-3, format!("max |Phi - y^2| = {worst_phi:e}, max |DPhi - 2y| = {worst_d:e}"))
}

/// Least squares on an even basis `y^2, y^4, ..., y^10`; `Phi(0) = 0` exactly.
fn even_fit(ys: &[f64], values: &[f64]) -> Vec<f64> {
    let a = DMatrix::from_fn(ys.len(), 5, |i, k| ys[i].powi(2 * (k as i32 + 1)));
    let b = DVector::from_column_slice(values);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).unwrap().iter().copied().collect()
}

fn criterion_3() -> Outcome {
    let p = problem("coupled");
    let op = p.operator().unwrap();
    let ys: Vec<f64> = (0..31).map(|i| -0.3 + 0.02 * i as f64).collect();
    let points: Vec<_> = ys.iter().map(|&v| y(v)).collect();
    let sample = sample_manifold(&op, &points, &p.fixed_point_config(), false);
    if sample.failures > 0 {
        return outcome(false, format!("{} sample points failed", sample.failures));
    }
    let values: Vec<f64> = sample.points.iter().map(|pt| pt.phi_x[0]).collect();
    let c = even_fit(&ys, &values);
    let ok = (c[0] - 1.0).abs() <= 0.02 && (c[1] + 2.0).abs() <= 0.2;
    outcome(ok, format!("quadratic {:.5}, quartic {:.4}", c[0], c[1]))
}

/// A random system of the reference shape with small, globally Lipschitz nonlinear terms.
fn random_problem(rng: &mut ChaCha8Rng) -> Option<Problem> {
    let a = -rng.random_range(0.5..2.0);
    let c = rng.random_range(0.5..2.0);
    let eps = |rng: &mut ChaCha8Rng| (rng.random_range(0.01..0.12f64) * 1000.0).round() / 1000.0;
    let w = |rng: &mut ChaCha8Rng| (rng.random_range(0.5..2.0f64) * 100.0).round() / 100.0;
    let text = format!(
        r#"{{
            "dimensions": {{"n_x": 1, "n_y": 1, "n_z": 1}},
            "linear": {{"A": [{a}], "B": [0], "C": [{c}]}},
            "nonlinear": {{
                "F": ["{}*sin({}*y1 + x1*z1/(2 + z1^2))"],
                "G": ["{}*tanh({}*x1 - z1)*cos(y1)"],
                "H": ["{}*(cos({}*y1 + x1) - cos(x1))"]
            }},
            "numerics": {{"seed": {}, "lipschitz_samples": 2000}}
        }}"#,
        eps(rng),
        w(rng),
        eps(rng),
        w(rng),
        eps(rng),
        w(rng),
        rng.random::<u32>()
    );
    let p = Problem::from_json(&text).ok()?;
    p.report.passes().then_some(p)
}

fn random_trajectory(op: &Operator, rng: &mut ChaCha8Rng) -> Trajectory {
    let (amp, om, ph): (f64, f64, f64) = (rng.random_range(0.05..2.0), rng.random_range(0.1..3.0), rng.random_range(0.0..6.3));
    let grid = op.grid;
    let values = (0..grid.len())
        .map(|i| {
            let t = grid.node(i);
            let w = 0.5 * op.sigma.at(t) * t;
            let s = |k: f64| amp * w.exp() * (om * k * t + ph).sin();
            StateVector::new(y(s(1.0)), y(s(2.0)), y(s(3.0)))
        })
        .collect();
    Trajectory::new(grid, values).unwrap()
}

fn random_linearized(op: &Operator, rng: &mut ChaCha8Rng) -> LinearizedTrajectory {
    let phi = random_trajectory(op, rng);
    let values = phi.values.iter().map(|u| DMatrix::from_column_slice(3, 1, &u.compose())).collect();
    LinearizedTrajectory::new(op.grid, values).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut triples, mut worst_t, mut worst_t1) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut attempts = 0;
    while triples < 50 && attempts < 500 {
        attempts += 1;
        let Some(p) = random_problem(&mut rng) else { continue };
        let op = p.operator_with(1024).unwrap();
        let bound = op.delta_phi() + 0.05;
        let y0 = y(rng.random_range(-1.0..1.0));
        let (p1, p2) = (random_trajectory(&op, &mut rng), random_trajectory(&op, &mut rng));
        let (t1, _) = op.apply(&p1, &y0).unwrap();
        let (t2, _) = op.apply(&p2, &y0).unwrap();
        let q = t1.distance(&t2, &op.sigma) / p1.distance(&p2, &op.sigma);
        worst_t = worst_t.max(q - bound);
        let lin = T1Operator::new(&op, &p1).unwrap();
        let (d1, d2) = (random_linearized(&op, &mut rng), random_linearized(&op, &mut rng));
        let (e1, _) = lin.apply(&d1).unwrap();
        let (e2, _) = lin.apply(&d2).unwrap();
        let q1 = e1.distance(&e2, &op.sigma) / d1.distance(&d2, &op.sigma);
        worst_t1 = worst_t1.max(q1 - bound);
        triples += 1;
    }
    let ok = triples >= 50 && worst_t <= 0.0 && worst_t1 <= 0.0;
    outcome(ok, format!("{triples} triples; max quotient - (delta_phi + 0.05): T {worst_t:.4}, T1 {worst_t1:.4}"))
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for name in ["quadratic_local", "coupled_local"] {
        let p = problem(name);
        let op = p.operator().unwrap();
        let cfg = p.fixed_point_config();
        for y0 in [0.05, -0.1, 0.15] {
            let y0 = y(y0);
            let mut iterates = Vec::new();
            let init = op.linear_flow(&y0).unwrap();
            let sol = solve_from(&op, &y0, init, &cfg, &mut |_, phi| iterates.push(phi.clone())).unwrap();
            let d = op.delta_phi();
            let s1 = iterates[1].distance(&iterates[0], &op.sigma);
            for (k, phi) in iterates.iter().enumerate() {
                let bound = d.powi(k as i32) * s1 / (1.0 - d);
                if bound < 1e3 * cfg.tol {
                    break;
                }
                worst = worst.max(phi.distance(&sol.phi, &op.sigma) / bound);
            }
        }
    }
    outcome(worst <= 1.1, format!("max error / Banach bound = {worst:.4}"))
}

fn criterion_6() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for name in ["quadratic_local", "coupled_local", "planar"] {
        let p = problem(name);
        let op = p.operator().unwrap();
        let ys: Vec<DVector<f64>> = if p.spec.dims.n_y == 1 {
            (0..9).map(|i| y(-0.2 + 0.05 * i as f64)).collect()
        } else {
            (0..9).map(|i| DVector::from_vec(vec![-0.4 + 0.3 * (i / 3) as f64, -0.4 + 0.3 * (i % 3) as f64])).collect()
        };
        let s = sample_manifold(&op, &ys, &p.fixed_point_config(), false);
        ok &= s.failures == 0 && s.violations == 0 && s.max_quotient <= s.lipschitz_bound;
        detail.push(format!("{name} {:.3} <= {:.3}", s.max_quotient, s.lipschitz_bound));
    }
    outcome(ok, detail.join(", "))
}

fn criterion_7() -> Outcome {
    let mut worst: f64 = 0.0;
    // Orbits of the coupled system grow like y' = y^3, so larger starts leave the plateau before t = 5.
    for (name, starts) in [("quadratic", [-0.3, 0.3]), ("coupled", [-0.2, 0.2])] {
        let p = problem(name);
        let op = p.operator().unwrap();
        for y0 in starts {
            match invariance_check(&op, &y(y0), &p.fixed_point_config(), 5.0, 0.01, p.plateau()) {
                Ok(r) if r.truncated_at.is_none() => worst = worst.max(r.max_residual),
                Ok(r) => return outcome(false, format!("{name} y0 = {y0}: orbit left the plateau at {:?}", r.truncated_at)),
                Err(e) => return outcome(false, format!("{name} y0 = {y0}: {e}")),
            }
        }
    }
    outcome(worst <= 1e-4, format!("max invariance residual {worst:e}"))
}

fn criterion_8() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for name in ["quadratic", "coupled"] {
        let p = problem(name);
        let cfg = p.fixed_point_config();
        let mut res = Vec::new();
        for n in [2048, 4096] {
            let op = p.operator_with(n).unwrap();
            let sol = solve_fixed_point(&op, &y(0.25), &cfg).unwrap();
            let r = ode_residual_check(&sol.phi, &op.spec).unwrap();
            let h = op.grid.step();
            ok &= r <= h * h + cfg.tol;
            res.push(r);
        }
        let ratio = res[0] / res[1];
        ok &= ratio >= 3.5;
        detail.push(format!("{name} {:.2e} -> {:.2e} (x{ratio:.2})", res[0], res[1]));
    }
    outcome(ok, detail.join(", "))
}

fn criterion_9() -> Outcome {
    let p = problem("zero");
    let op = p.operator().unwrap();
    let cfg = p.fixed_point_config();
    let tail_tol = p.numerics.tail_tol;
    let mut worst: f64 = 0.0;
    let mut iters = Vec::new();
    for y0 in [-1.0, 0.3, 2.0] {
        let sol = solve_fixed_point(&op, &y(y0), &cfg).unwrap();
        let t1 = solve_t1_fixed_point(&op, &sol.phi, &cfg).unwrap();
        worst = worst.max(sol.phi_x.amax()).max(sol.phi_z.amax()).max(t1.dphi().amax());
        iters.push((sol.iterations, t1.iterations));
    }
    let ok = worst <= tail_tol && iters.iter().all(|&(a, b)| a == 1 && b == 1);
    outcome(ok, format!("max |Phi|, |DPhi| = {worst:e}; iterations {iters:?}"))
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut detail = Vec::new();
    let mut ok = true;
    for name in ["quadratic_local", "coupled_local"] {
        let p = problem(name);
        let op = p.operator().unwrap();
        let cfg = p.fixed_point_config();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (y1, y2) = (y(rng.random_range(-0.3..0.3)), y(rng.random_range(-0.3..0.3)));
            let s1 = solve_fixed_point(&op, &y1, &cfg).unwrap();
            let s2 = solve_fixed_point(&op, &y2, &cfg).unwrap();
            let r = check_phi_pair_bound(&op, &y1, &y2, &s1.phi, &s2.phi, 1.05);
            ok &= r.holds;
            worst = worst.max(r.max_ratio);
        }
        detail.push(format!("{name} max ratio {worst:.4}"));
    }
    outcome(ok, detail.join(", "))
}

fn criterion_11() -> Outcome {
    let s = random_expr::run_dsl_suite(1000, 11, 1e-6);
    let ok = s.roundtrip_failures.is_empty() && s.derivative_failures.is_empty();
    outcome(
        ok,
        format!(
            "{} expressions, {} round-trip and {} derivative failures, max derivative error {:.1e}",
            s.cases,
            s.roundtrip_failures.len(),
            s.derivative_failures.len(),
            s.max_derivative_error
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 11] = [
        ("gap ratio arithmetic", criterion_1, Some(Duration::from_secs(1))),
        ("closed-form manifold", criterion_2, Some(Duration::from_secs(30))),
        ("Taylor coefficients", criterion_3, Some(Duration::from_secs(120))),
        ("contraction of T and T1", criterion_4, Some(Duration::from_secs(120))),
        ("geometric convergence", criterion_5, None),
        ("manifold Lipschitz bound", criterion_6, None),
        ("invariance", criterion_7, None),
        ("fixed point solves the ODE", criterion_8, None),
        ("trivial exactness", criterion_9, None),
        ("pair bound", criterion_10, None),
        ("DSL correctness", criterion_11, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut o = run();
        let took = start.elapsed();
        if let Some(limit) = limit {
            if took > *limit {
                o.passed = false;
                o.detail.push_str(&format!("; exceeded {limit:?}"));
            }
        }
        failed += usize::from(!o.passed);
        println!(
            "criterion {:>2} {:<28} {} ({:.2?}) {}",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            took,
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
