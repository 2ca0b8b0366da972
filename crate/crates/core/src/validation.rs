//! Independent cross-checks of computed manifolds.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::SampleBox;
use crate::lyapunov_perron::{graph_norm, sample_manifold, solve_fixed_point, solve_from, FixedPointConfig, Operator};
use crate::space::Trajectory;
use crate::system::{inf_norm, Dims, LipschitzTriple, Nonlinearity, StateVector, SystemSpec};

/// Times and states of a reference integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Segment {
    pub fn last(&self) -> (f64, &DVector<f64>) {
        (*self.times.last().unwrap_or(&0.0), self.states.last().expect("segment is never empty"))
    }
}

/// Classical fixed-step RK4 from `t0` to `t1` with step at most `h`; `t1 < t0` integrates backward.
pub fn rk4<F>(mut f: F, u0: DVector<f64>, t0: f64, t1: f64, h: f64) -> Result<Segment>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(h > 0.0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidArgument(format!("need h > 0 and a finite span, got h = {h}, [{t0}, {t1}]")));
    }
    let n = ((t1 - t0).abs() / h).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / n as f64;
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut u = u0;
    times.push(t0);
    states.push(u.clone());
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        let k1 = f(t, &u)?;
        let k2 = f(t + 0.5 * dt, &(&u + &k1 * (0.5 * dt)))?;
        let k3 = f(t + 0.5 * dt, &(&u + &k2 * (0.5 * dt)))?;
        let k4 = f(t + dt, &(&u + &k3 * dt))?;
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let tn = t0 + (k + 1) as f64 * dt;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { t: tn });
        }
        times.push(tn);
        states.push(u.clone());
    }
    Ok(Segment { times, states })
}

/// RK4 on the full system.
pub fn integrate(spec: &SystemSpec, u0: &StateVector, t0: f64, t1: f64, h: f64) -> Result<Segment> {
    spec.check_dims(u0)?;
    let dims = spec.dims;
    rk4(
        |_, u| Ok(DVector::from_vec(spec.eval_rhs(&StateVector::split(u.as_slice(), dims)?)?.compose())),
        DVector::from_vec(u0.compose()),
        t0,
        t1,
        h,
    )
}

/// Manifold map evaluated by fixed-point solves, each warm-started from the previous fixed point.
pub struct ManifoldOracle<'a> {
    op: &'a Operator,
    cfg: FixedPointConfig,
    last: Option<(DVector<f64>, Trajectory)>,
    pub solves: usize,
}

impl<'a> ManifoldOracle<'a> {
    pub fn new(op: &'a Operator, cfg: FixedPointConfig) -> Self {
        Self { op, cfg, last: None, solves: 0 }
    }

    /// `(Phi_x(y), Phi_z(y))`.
    pub fn eval(&mut self, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        // The previous fixed point, shifted by the linear flow of the change in y.
        let init = match self.last.take() {
            Some((y_prev, mut phi)) => {
                let shift = self.op.linear_flow(&(y - &y_prev))?;
                for (v, s) in phi.values.iter_mut().zip(&shift.values) {
                    v.y += &s.y;
                }
                phi
            }
            None => self.op.linear_flow(y)?,
        };
        let r = solve_from(self.op, y, init, &self.cfg, &mut |_, _| {})?;
        self.solves += 1;
        let out = (r.phi_x.clone(), r.phi_z.clone());
        self.last = Some((y.clone(), r.phi));
        Ok(out)
    }
}

fn split_flat(u: &DVector<f64>, dims: Dims) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    (
        u.rows(0, dims.n_x).into_owned(),
        u.rows(dims.n_x, dims.n_y).into_owned(),
        u.rows(dims.n_x + dims.n_y, dims.n_z).into_owned(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// `(t_c, |(x, z)(t_c) - Phi(y(t_c))|)`
    pub residuals: Vec<(f64, f64)>,
    pub max_residual: f64,
    /// Set when the orbit leaves the cutoff plateau and the check stops early.
    pub truncated_at: Option<f64>,
}

/// Integrates from `u0` over `[0, horizon]` and measures the distance to the graph at
/// `checkpoints + 1` equally spaced times.
pub fn invariance_from(
    op: &Operator,
    u0: &StateVector,
    cfg: &FixedPointConfig,
    horizon: f64,
    h: f64,
    checkpoints: usize,
    plateau: Option<f64>,
) -> Result<InvarianceReport> {
    let dims = op.spec.dims;
    let checkpoints = checkpoints.max(1);
    let mut oracle = ManifoldOracle::new(op, *cfg);
    let mut residuals = Vec::with_capacity(checkpoints + 1);
    let mut truncated_at = None;
    let mut u = DVector::from_vec(u0.compose());
    let dt = horizon / checkpoints as f64;
    for k in 0..=checkpoints {
        let t = k as f64 * dt;
        if k > 0 {
            let seg = integrate(&op.spec, &StateVector::split(u.as_slice(), dims)?, t - dt, t, h)?;
            u = seg.last().1.clone();
        }
        if let Some(rho) = plateau {
            if crate::expr::CutoffSpec::radius(u.as_slice()) > rho {
                log::warn!("orbit leaves the cutoff plateau at t = {t}; invariance check truncated");
                truncated_at = Some(t);
                break;
            }
        }
        let (x, y, z) = split_flat(&u, dims);
        let (px, pz) = oracle.eval(&y)?;
        residuals.push((t, graph_norm(&(x - px), &(z - pz))));
    }
    let max_residual = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(InvarianceReport { residuals, max_residual, truncated_at })
}

/// Invariance check from the on-manifold point over `y0`.
pub fn invariance_check(
    op: &Operator,
    y0: &DVector<f64>,
    cfg: &FixedPointConfig,
    horizon: f64,
    h: f64,
    plateau: Option<f64>,
) -> Result<InvarianceReport> {
    let r = solve_fixed_point(op, y0, cfg)?;
    let u0 = StateVector::new(r.phi_x, y0.clone(), r.phi_z);
    invariance_from(op, &u0, cfg, horizon, h, 8, plateau)
}

/// `max_{|t| <= T/2} |(phi(t+h) - phi(t-h)) / 2h - f(phi(t))|`.
pub fn ode_residual_check(phi: &Trajectory, spec: &SystemSpec) -> Result<f64> {
    let g = phi.grid;
    let h = g.step();
    let half = 0.5 * g.t_max();
    let mut worst: f64 = 0.0;
    for i in 1..g.n_steps() {
        if g.node(i).abs() > half {
            continue;
        }
        let fd = phi.values[i + 1].sub(&phi.values[i - 1]).scale(0.5 / h);
        let rhs = spec.eval_rhs(&phi.values[i])?;
        worst = worst.max(fd.sub(&rhs).norm());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Spotcheck {
    pub max_quotient: LipschitzTriple,
    pub declared: LipschitzTriple,
    pub violated: bool,
}

/// Random difference quotients of `F`, `G`, `H` over `pairs` point pairs in the box.
pub fn spotcheck_a2(spec: &SystemSpec, bx: &SampleBox, pairs: usize, seed: u64) -> Result<A2Spotcheck> {
    let n = spec.dims.total();
    if bx.dim() != n || pairs == 0 {
        return Err(Error::InvalidArgument(format!(
            "spot-check needs a box of dimension {n} and at least one pair"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|k| bx.lo[k] + (bx.hi[k] - bx.lo[k]) * rng.random::<f64>()).collect()
    };
    let maps: [&dyn Nonlinearity; 3] = [spec.f.as_ref(), spec.g.as_ref(), spec.h.as_ref()];
    let mut q = [0.0f64; 3];
    for _ in 0..pairs {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let du = StateVector::split(&a, spec.dims)?.sub(&StateVector::split(&b, spec.dims)?).norm();
        if du == 0.0 {
            continue;
        }
        for (k, m) in maps.iter().enumerate() {
            let mut fa = vec![0.0; m.output_dim()];
            let mut fb = vec![0.0; m.output_dim()];
            m.eval(&a, &mut fa)?;
            m.eval(&b, &mut fb)?;
            let df = fa.iter().zip(&fb).map(|(p, r)| (p - r).abs()).fold(0.0, f64::max);
            q[k] = q[k].max(df / du);
        }
    }
    let d = spec.lipschitz;
    let max_quotient = LipschitzTriple::new(q[0], q[1], q[2]);
    Ok(A2Spotcheck { violated: q[0] > d.x || q[1] > d.y || q[2] > d.z, max_quotient, declared: d })
}

/// `|y_full(t) - y_reduced(t)|` at `checkpoints + 1` times over `[0, horizon]`.
pub fn reduced_dynamics_compare(
    op: &Operator,
    y0: &DVector<f64>,
    cfg: &FixedPointConfig,
    horizon: f64,
    h: f64,
    checkpoints: usize,
) -> Result<Vec<(f64, f64)>> {
    let spec = &op.spec;
    let dims = spec.dims;
    let mut oracle = ManifoldOracle::new(op, *cfg);
    let (px, pz) = oracle.eval(y0)?;
    let full = integrate(spec, &StateVector::new(px, y0.clone(), pz), 0.0, horizon, h)?;
    let reduced = rk4(
        |_, y| {
            let (x, z) = oracle.eval(y)?;
            let u = StateVector::new(x, y.clone(), z);
            let mut g = vec![0.0; dims.n_y];
            spec.g.eval(&u.compose(), &mut g)?;
            Ok(&spec.b * y + DVector::from_vec(g))
        },
        y0.clone(),
        0.0,
        horizon,
        h,
    )?;
    let checkpoints = checkpoints.max(1);
    let stride = ((full.times.len() - 1) / checkpoints).max(1);
    Ok((0..full.times.len())
        .step_by(stride)
        .map(|i| {
            let (_, yf, _) = split_flat(&full.states[i], dims);
            (full.times[i], inf_norm(&(yf - &reduced.states[i])))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Hard checks decide the exit status.
    pub hard: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub invariance_max_residual: f64,
    pub ode_residual: f64,
    pub lipschitz_violations: usize,
    pub contraction_violations: usize,
    pub a2_spotcheck_max_quotient: LipschitzTriple,
    pub reduced_divergence: Vec<(f64, f64)>,
    pub invariance: InvarianceReport,
    pub details: Vec<CheckRecord>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.details.iter().all(|c| c.passed || !c.hard)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub horizon: f64,
    pub h: f64,
    pub invariance_tol: f64,
    pub a2_pairs: usize,
    pub seed: u64,
    /// Half-width of the spot-check box and plateau radius for the invariance check.
    pub plateau: Option<f64>,
    pub a2_half_width: f64,
    pub reduced_horizon: f64,
    pub reduced_h: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            h: 0.01,
            invariance_tol: 1e-4,
            a2_pairs: 2000,
            seed: 0,
            plateau: None,
            a2_half_width: 1.0,
            reduced_horizon: 5.0,
            reduced_h: 0.1,
        }
    }
}

/// The full suite around `y0`.
pub fn validate(op: &Operator, y0: &DVector<f64>, cfg: &FixedPointConfig, o: &ValidationOptions) -> Result<ValidationReport> {
    let rate_bound = op.delta_phi() + cfg.rate_slack;
    let sol = solve_fixed_point(op, y0, cfg)?;
    let contraction_violations = sol.measured_rates.iter().filter(|&&r| r > rate_bound).count();
    let ode_residual = ode_residual_check(&sol.phi, &op.spec)?;
    let u0 = StateVector::new(sol.phi_x.clone(), y0.clone(), sol.phi_z.clone());
    let invariance = invariance_from(op, &u0, cfg, o.horizon, o.h, 8, o.plateau)?;
    let bx = SampleBox::cube(op.spec.dims.total(), o.a2_half_width);
    let a2 = spotcheck_a2(&op.spec, &bx, o.a2_pairs, o.seed)?;
    let neighbours: Vec<_> = [-0.05, 0.0, 0.05].iter().map(|&s| y0.add_scalar(s)).collect();
    let sample = sample_manifold(op, &neighbours, cfg, false);
    let reduced = reduced_dynamics_compare(op, y0, cfg, o.reduced_horizon, o.reduced_h, 10)?;
    let reduced_max = reduced.iter().map(|r| r.1).fold(0.0, f64::max);
    let h = sol.phi.grid.step();
    let a2_max = a2.max_quotient.x.max(a2.max_quotient.y).max(a2.max_quotient.z);
    let details = vec![
        CheckRecord {
            name: "invariance".into(),
            value: invariance.max_residual,
            threshold: o.invariance_tol,
            passed: invariance.max_residual <= o.invariance_tol,
            hard: true,
        },
        CheckRecord {
            name: "ode_residual".into(),
            value: ode_residual,
            threshold: h * h + cfg.tol,
            passed: ode_residual <= h * h + cfg.tol,
            hard: false,
        },
        CheckRecord {
            name: "contraction".into(),
            value: contraction_violations as f64,
            threshold: 0.0,
            passed: contraction_violations == 0,
            hard: !cfg.allow_unverified,
        },
        CheckRecord {
            name: "lipschitz".into(),
            value: sample.max_quotient,
            threshold: sample.lipschitz_bound,
            passed: sample.violations == 0 && sample.failures == 0,
            hard: true,
        },
        CheckRecord {
            name: "a2_spotcheck".into(),
            value: a2_max,
            threshold: a2.declared.x.max(a2.declared.y).max(a2.declared.z),
            passed: !a2.violated,
            hard: !cfg.allow_unverified,
        },
        CheckRecord {
            name: "reduced_dynamics".into(),
            value: reduced_max,
            threshold: 1e-3,
            passed: reduced_max <= 1e-3,
            hard: false,
        },
    ];
    Ok(ValidationReport {
        invariance_max_residual: invariance.max_residual,
        ode_residual,
        lipschitz_violations: sample.violations,
        contraction_violations,
        a2_spotcheck_max_quotient: a2.max_quotient,
        reduced_divergence: reduced,
        invariance,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::{SigmaParameters, TrichotomyConstants};
    use crate::expr::{apply_cutoff, CutoffSpec, ExprMap};
    use crate::lyapunov_perron::default_t_max;
    use crate::space::TimeGrid;
    use crate::system::ZeroMap;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn quadratic() -> Operator {
        let dims = Dims::new(1, 1, 0);
        let f: Arc<dyn Nonlinearity> = Arc::new(apply_cutoff(
            Arc::new(ExprMap::parse_all(&["y1^2"], dims).unwrap()),
            CutoffSpec::new(1.0, 0.5).unwrap(),
        ));
        let spec = SystemSpec::new(dims, scalar(-1.0), scalar(0.0), DMatrix::zeros(0, 0), f, Arc::new(ZeroMap::new(2, 1)), Arc::new(ZeroMap::new(2, 0)))
            .unwrap()
            .with_lipschitz(LipschitzTriple::new(0.2, 0.0, 0.0));
        let tc = TrichotomyConstants { alpha_x: -1.0, alpha_y: 0.0, beta_y: 0.0, beta_z: f64::INFINITY, k_x: 1.0, k_y: 1.0, k_z: 1.0 };
        let sigma = SigmaParameters::new(-0.5, 0.5);
        Operator::new(spec, tc, sigma, TimeGrid::new(default_t_max(&tc, &sigma), 2048).unwrap(), 1e-8).unwrap()
    }

    #[test]
    fn rk4_examples() {
        let c = DVector::from_vec(vec![0.3, -2.0]);
        let seg = rk4(|_, u| Ok(u * 0.0), c.clone(), 0.0, 1.0, 0.1).unwrap();
        assert!(seg.states.iter().all(|s| *s == c));

        let seg = rk4(|_, u| Ok(-u), DVector::from_element(1, 1.0), 0.0, 1.0, 0.01).unwrap();
        assert!((seg.last().1[0] - (-1.0f64).exp()).abs() < 1e-9);

        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let u0 = DVector::from_vec(vec![1.0, 0.0]);
        let seg = rk4(|_, u| Ok(&rot * u), u0.clone(), 0.0, 2.0 * std::f64::consts::PI, 0.01).unwrap();
        assert!((seg.last().1 - u0).amax() < 1e-7);

        let blow = rk4(|_, u| Ok(u.map(|v| v * v)), DVector::from_element(1, 1.0), 0.0, 2.0, 0.01);
        assert!(matches!(blow, Err(Error::BlowUp { .. })));
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |h: f64| {
            let seg = rk4(|t, u| Ok(u * t.cos()), DVector::from_element(1, 1.0), 0.0, 1.0, h).unwrap();
            (seg.last().1[0] - 1f64.sin().exp()).abs()
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!(order > 3.8 && order < 4.2, "{order}");
    }

    #[test]
    fn invariance_on_and_off_manifold() {
        let op = quadratic();
        let cfg = FixedPointConfig::default();
        let y0 = DVector::from_element(1, 0.3);
        let on = invariance_check(&op, &y0, &cfg, 5.0, 0.01, Some(1.0)).unwrap();
        assert!(on.max_residual < 1e-4, "{on:?}");

        let off = StateVector::new(DVector::from_element(1, 0.2), y0.clone(), DVector::zeros(0));
        let r = invariance_from(&op, &off, &cfg, 4.0, 0.01, 4, Some(1.0)).unwrap();
        assert!((r.residuals[0].1 - 0.11).abs() < 1e-4);
        for &(t, v) in &r.residuals {
            assert!((v - 0.11 * (-t).exp()).abs() < 1e-4, "t={t}: {v}");
        }
    }

    #[test]
    fn ode_residual_improves_with_iterations() {
        let op = quadratic();
        let cfg = FixedPointConfig::default();
        let y0 = DVector::from_element(1, 0.3);
        let star = solve_fixed_point(&op, &y0, &cfg).unwrap().phi;
        let mut second = None;
        let mut iterates = 0;
        let _ = solve_from(&op, &y0, op.linear_flow(&y0).unwrap(), &cfg, &mut |k, phi| {
            iterates = k;
            if k == 1 {
                second = Some(phi.clone());
            }
        });
        assert!(iterates >= 1);
        let star_res = ode_residual_check(&star, &op.spec).unwrap();
        let h = op.grid.step();
        assert!(star_res <= h * h + cfg.tol, "{star_res}");
        // phi_0 is (0, y0): its residual is the full y0^2
        let early = ode_residual_check(&op.linear_flow(&y0).unwrap(), &op.spec).unwrap();
        assert!(early > star_res);
    }

    #[test]
    fn a2_examples() {
        let dims = Dims::new(1, 1, 0);
        let f: Arc<dyn Nonlinearity> = Arc::new(ExprMap::parse_all(&["0.1*y1"], dims).unwrap());
        let base = SystemSpec::new(dims, scalar(-1.0), scalar(0.0), DMatrix::zeros(0, 0), f, Arc::new(ZeroMap::new(2, 1)), Arc::new(ZeroMap::new(2, 0))).unwrap();
        let bx = SampleBox::cube(2, 1.0);
        let ok = spotcheck_a2(&base.clone().with_lipschitz(LipschitzTriple::new(0.11, 0.0, 0.0)), &bx, 500, 3).unwrap();
        assert!(!ok.violated);
        assert!(ok.max_quotient.x <= 0.1 + 1e-15 && ok.max_quotient.x > 0.05);
        assert_eq!(ok.max_quotient.y, 0.0);
        let bad = spotcheck_a2(&base.with_lipschitz(LipschitzTriple::new(0.05, 0.0, 0.0)), &bx, 500, 3).unwrap();
        assert!(bad.violated);
    }

    #[test]
    fn reduced_dynamics_of_static_center() {
        let op = quadratic();
        let d = reduced_dynamics_compare(&op, &DVector::from_element(1, 0.3), &FixedPointConfig::default(), 2.0, 0.1, 4).unwrap();
        assert!(d.iter().all(|r| r.1 == 0.0));
    }
}
