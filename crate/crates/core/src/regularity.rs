//! The differentiated operator `T1`, its fixed point and the derivative of the manifold map.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Component, Error, Result};
use crate::lyapunov_perron::{apriori_iterations, manifold_map, solve_fixed_point, FixedPointConfig, Operator};
use crate::space::{sigma_weight, sweep, IntegralKind, TimeGrid, Trajectory};
use crate::system::{induced_inf_norm, inf_norm};

/// Linear maps `Y -> E` on every grid node, rows ordered x, y, z.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<DMatrix<f64>>,
}

impl LinearizedTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "linearized trajectory has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let shape = values[0].shape();
        if values.iter().any(|m| m.shape() != shape) {
            return Err(Error::InvalidArgument("linearized trajectory changes shape".into()));
        }
        if let Some(i) = values.iter().position(|m| !m.iter().all(|v| v.is_finite())) {
            return Err(Error::BlowUp { t: grid.node(i) });
        }
        Ok(Self { grid, values })
    }

    /// `sup_t e^{-sigma(t) t} |Delta(t)|` with the induced infinity norm.
    pub fn norm(&self, sigma: &crate::conditions::SigmaParameters) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, m)| sigma_weight(sigma, self.grid.node(i)) * induced_inf_norm(m))
            .fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &Self, sigma: &crate::conditions::SigmaParameters) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| sigma_weight(sigma, self.grid.node(i)) * induced_inf_norm(&(a - b)))
            .fold(0.0, f64::max)
    }

    pub fn at_origin(&self) -> &DMatrix<f64> {
        &self.values[self.grid.mid()]
    }
}

/// `T1` linearized along a fixed trajectory `phi0`.
#[derive(Debug, Clone)]
pub struct T1Operator<'a> {
    op: &'a Operator,
    df: Vec<DMatrix<f64>>,
    dg: Vec<DMatrix<f64>>,
    dh: Vec<DMatrix<f64>>,
}

impl<'a> T1Operator<'a> {
    pub fn new(op: &'a Operator, phi0: &Trajectory) -> Result<Self> {
        if phi0.grid != op.grid {
            return Err(Error::InvalidArgument("trajectory lives on a different grid".into()));
        }
        let d = op.spec.dims;
        let n = d.total();
        let jac = |c: Component, rows: usize| -> Result<Vec<DMatrix<f64>>> {
            phi0.values
                .iter()
                .map(|u| {
                    let mut m = DMatrix::zeros(rows, n);
                    op.spec.nonlinear(c).jacobian(&u.compose(), &mut m)?;
                    Ok(m)
                })
                .collect()
        };
        Ok(Self {
            op,
            df: jac(Component::X, d.n_x)?,
            dg: jac(Component::Y, d.n_y)?,
            dh: jac(Component::Z, d.n_z)?,
        })
    }

    /// `Delta_0 = (0, e^{tB}, 0)`.
    pub fn initial(&self) -> LinearizedTrajectory {
        let d = self.op.spec.dims;
        let values = self
            .op
            .props()
            .eb_nodes
            .iter()
            .map(|e| {
                let mut m = DMatrix::zeros(d.total(), d.n_y);
                m.view_mut((d.n_x, 0), (d.n_y, d.n_y)).copy_from(e);
                m
            })
            .collect();
        LinearizedTrajectory { grid: self.op.grid, values }
    }

    /// `T1(Delta)`; also returns the tail estimate.
    pub fn apply(&self, delta: &LinearizedTrajectory) -> Result<(LinearizedTrajectory, f64)> {
        let op = self.op;
        let d = op.spec.dims;
        if delta.grid != op.grid || delta.values[0].shape() != (d.total(), d.n_y) {
            return Err(Error::InvalidArgument("linearized trajectory does not match the operator".into()));
        }
        let (tx, tz) = op.tail_bounds(delta.norm(&op.sigma));
        let tail = tx.max(tz);
        if tail > op.tail_tol {
            return Err(Error::TailTolerance { estimate: tail, tol: op.tail_tol });
        }
        let gf: Vec<_> = self.df.iter().zip(&delta.values).map(|(j, m)| j * m).collect();
        let gg: Vec<_> = self.dg.iter().zip(&delta.values).map(|(j, m)| j * m).collect();
        let gh: Vec<_> = self.dh.iter().zip(&delta.values).map(|(j, m)| j * m).collect();
        let p = op.props();
        let ix = sweep(IntegralKind::Past, &p.ea, &p.ea_inv, &op.grid, &gf);
        let iy = sweep(IntegralKind::Anchored, &p.eb, &p.eb_inv, &op.grid, &gg);
        let iz = sweep(IntegralKind::Future, &p.ec, &p.ec_inv, &op.grid, &gh);
        let values = (0..op.grid.len())
            .map(|i| {
                let mut m = DMatrix::zeros(d.total(), d.n_y);
                m.view_mut((0, 0), (d.n_x, d.n_y)).copy_from(&ix[i]);
                m.view_mut((d.n_x, 0), (d.n_y, d.n_y)).copy_from(&(&p.eb_nodes[i] + &iy[i]));
                m.view_mut((d.n_x + d.n_y, 0), (d.n_z, d.n_y)).copy_from(&(-&iz[i]));
                m
            })
            .collect();
        Ok((LinearizedTrajectory::new(op.grid, values)?, tail))
    }
}

/// `T1` applied once; see [`T1Operator`].
pub fn apply_t1(op: &Operator, delta: &LinearizedTrajectory, phi0: &Trajectory) -> Result<LinearizedTrajectory> {
    Ok(T1Operator::new(op, phi0)?.apply(delta)?.0)
}

#[derive(Debug, Clone)]
pub struct T1Result {
    pub delta: LinearizedTrajectory,
    /// `n_x x n_y`
    pub dphi_x: DMatrix<f64>,
    /// `n_z x n_y`
    pub dphi_z: DMatrix<f64>,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub measured_rates: Vec<f64>,
}

impl T1Result {
    /// Rows x then z.
    pub fn dphi(&self) -> DMatrix<f64> {
        let (nx, nz) = (self.dphi_x.nrows(), self.dphi_z.nrows());
        let mut m = DMatrix::zeros(nx + nz, self.dphi_x.ncols());
        m.view_mut((0, 0), (nx, m.ncols())).copy_from(&self.dphi_x);
        let cols = m.ncols();
        m.view_mut((nx, 0), (nz, cols)).copy_from(&self.dphi_z);
        m
    }
}

/// Iterates `T1` along the fixed point `phi0` from `(0, e^{tB}, 0)`.
pub fn solve_t1_fixed_point(op: &Operator, phi0: &Trajectory, cfg: &FixedPointConfig) -> Result<T1Result> {
    let t1 = T1Operator::new(op, phi0)?;
    let init = t1.initial();
    solve_t1_from(&t1, init, cfg, &mut |_, _| {})
}

/// As [`solve_t1_fixed_point`], from a given start and reporting each iterate.
pub fn solve_t1_from(
    t1: &T1Operator<'_>,
    init: LinearizedTrajectory,
    cfg: &FixedPointConfig,
    observe: &mut dyn FnMut(usize, &LinearizedTrajectory),
) -> Result<T1Result> {
    cfg.validate()?;
    let op = t1.op;
    let dphi = op.delta_phi();
    if op.report.flags.c2 != Some(true) && !cfg.allow_unverified {
        return Err(Error::ConditionsNotMet(format!("C2 fails, delta_phi = {dphi}")));
    }
    let bound = dphi + cfg.rate_slack;
    let mut delta = init;
    observe(0, &delta);
    let mut steps: Vec<f64> = Vec::new();
    let mut rates = Vec::new();
    let mut over = 0;
    let mut apriori = usize::MAX;
    for k in 1..=cfg.max_iters {
        let (next, _) = t1.apply(&delta)?;
        let step = next.distance(&delta, &op.sigma);
        let floor = 1e-13 * next.norm(&op.sigma).max(1.0);
        match steps.last() {
            Some(&prev) if prev > floor && step > floor => {
                let rate = step / prev;
                rates.push(rate);
                over = if rate > bound { over + 1 } else { 0 };
                if over >= 3 && !cfg.allow_unverified {
                    return Err(Error::ContractionViolated { rate, bound, consecutive: over });
                }
            }
            None if cfg.a_priori_check => apriori = apriori_iterations(dphi, cfg.tol, step),
            _ => {}
        }
        steps.push(step);
        delta = next;
        observe(k, &delta);
        if step < cfg.tol {
            let d = op.spec.dims;
            let origin = delta.at_origin();
            return Ok(T1Result {
                dphi_x: origin.rows(0, d.n_x).into_owned(),
                dphi_z: origin.rows(d.n_x + d.n_y, d.n_z).into_owned(),
                iterations: k,
                final_step_norm: step,
                measured_rates: rates,
                delta,
            });
        }
        if cfg.a_priori_check && k >= apriori && !cfg.allow_unverified {
            return Err(Error::AprioriBoundExceeded { iters: k + 1, bound: apriori });
        }
    }
    Err(Error::MaxIterations { iters: cfg.max_iters, last_step: steps.last().copied().unwrap_or(f64::NAN) })
}

/// Central-difference Jacobian of the manifold map, rows x then z.
pub fn fd_jacobian(op: &Operator, y0: &DVector<f64>, h: f64, cfg: &FixedPointConfig) -> Result<DMatrix<f64>> {
    let d = op.spec.dims;
    let mut out = DMatrix::zeros(d.n_x + d.n_z, d.n_y);
    for j in 0..d.n_y {
        let mut plus = y0.clone();
        let mut minus = y0.clone();
        plus[j] += h;
        minus[j] -= h;
        let (px, pz) = manifold_map(op, &plus, cfg)?;
        let (mx, mz) = manifold_map(op, &minus, cfg)?;
        for i in 0..d.n_x {
            out[(i, j)] = (px[i] - mx[i]) / (2.0 * h);
        }
        for i in 0..d.n_z {
            out[(d.n_x + i, j)] = (pz[i] - mz[i]) / (2.0 * h);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBoundReport {
    /// Largest `|phi1(t) - phi2(t)| / (K_y e e^{v(t) t} |y1 - y2|)` over the grid.
    pub max_ratio: f64,
    pub slack: f64,
    pub holds: bool,
    pub a6: bool,
}

/// Checks `|phi1(t) - phi2(t)| <= K_y e e^{v(t) t} |y1 - y2|` on every node.
pub fn check_phi_pair_bound(
    op: &Operator,
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    phi1: &Trajectory,
    phi2: &Trajectory,
    slack: f64,
) -> PairBoundReport {
    let tc = &op.tc;
    let delta = &op.spec.lipschitz;
    let dy = inf_norm(&(y1 - y2));
    let mut worst: f64 = 0.0;
    for (i, (a, b)) in phi1.values.iter().zip(&phi2.values).enumerate() {
        let t = phi1.grid.node(i);
        let lhs = a.sub(b).norm();
        if lhs == 0.0 {
            continue;
        }
        let rhs = tc.k_y * std::f64::consts::E * (tc.v(delta, t) * t).exp() * dy;
        worst = worst.max(lhs / rhs);
    }
    PairBoundReport { max_ratio: worst, slack, holds: worst <= slack, a6: op.report.flags.a6 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// `|DPhi(y_i) - DPhi(y_{i+1})| / |y_i - y_{i+1}|` for adjacent points.
    pub quotients: Vec<f64>,
    /// Constant bounding each quotient; `None` without derivative Lipschitz data.
    pub bounds: Vec<Option<f64>>,
    pub holds: bool,
    pub a6: bool,
    pub messages: Vec<String>,
}

// one branch of the constant: max{K_x K_y g_x e/(v+s-a_x), K_z K_y g_z e/(b_z-v-s)}
fn branch(op: &Operator, v: f64, s: f64, gx: f64, gz: f64) -> f64 {
    let tc = &op.tc;
    let e = std::f64::consts::E;
    let term = |num: f64, den: f64| {
        if num == 0.0 || den == f64::INFINITY {
            0.0
        } else if den <= 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    };
    let x = term(tc.k_x * tc.k_y * gx * e, v + s - tc.alpha_x);
    let z = term(tc.k_z * tc.k_y * gz * e, tc.beta_z - v - s);
    x.max(z)
}

/// The continuity constant for a pair, with `|Delta_1*|` the larger of the two norms;
/// both branches of `v + sigma` are evaluated and the larger is used.
pub fn continuity_constant(op: &Operator, delta_norm: f64) -> Option<f64> {
    let gamma = op.spec.deriv_lipschitz?;
    let d = &op.spec.lipschitz;
    let past = branch(op, op.tc.v(d, -1.0), op.sigma.n, gamma.x, gamma.z);
    let future = branch(op, op.tc.v(d, 1.0), op.sigma.p, gamma.x, gamma.z);
    Some(delta_norm / (1.0 - op.delta_phi()) * past.max(future))
}

/// Difference quotients of `DPhi` between adjacent points of `ys`, against the continuity constant.
pub fn check_dphi_continuity(op: &Operator, ys: &[DVector<f64>], cfg: &FixedPointConfig) -> Result<ContinuityReport> {
    let mut sols = Vec::with_capacity(ys.len());
    for y in ys {
        let phi = solve_fixed_point(op, y, cfg)?;
        let t1 = solve_t1_fixed_point(op, &phi.phi, cfg)?;
        let norm = t1.delta.norm(&op.sigma);
        sols.push((t1.dphi(), norm));
    }
    let mut messages = Vec::new();
    if !op.report.flags.a6 {
        messages.push("A6 fails; the continuity constant is not guaranteed".into());
    }
    if op.spec.deriv_lipschitz.is_none() {
        messages.push("no derivative Lipschitz constants; bounds not evaluated".into());
    }
    let mut quotients = Vec::new();
    let mut bounds = Vec::new();
    let mut holds = true;
    for k in 1..ys.len() {
        let dy = inf_norm(&(&ys[k] - &ys[k - 1]));
        if dy == 0.0 {
            continue;
        }
        let q = induced_inf_norm(&(&sols[k].0 - &sols[k - 1].0)) / dy;
        let b = continuity_constant(op, sols[k].1.max(sols[k - 1].1));
        if let Some(b) = b {
            holds &= q <= b;
        } else {
            holds = false;
        }
        quotients.push(q);
        bounds.push(b);
    }
    Ok(ContinuityReport { quotients, bounds, holds, a6: op.report.flags.a6, messages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::{SigmaParameters, TrichotomyConstants};
    use crate::expr::{apply_cutoff, CutoffSpec, ExprMap};
    use crate::lyapunov_perron::default_t_max;
    use crate::system::{Dims, LipschitzTriple, Nonlinearity, SystemSpec, ZeroMap};
    use std::sync::Arc;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn tc() -> TrichotomyConstants {
        TrichotomyConstants { alpha_x: -1.0, alpha_y: 0.0, beta_y: 0.0, beta_z: f64::INFINITY, k_x: 1.0, k_y: 1.0, k_z: 1.0 }
    }

    // x' = -x + scale * chi y^2, y' = 0, with a small delta so that C2 holds on the plateau
    fn quadratic(scale: f64, n: usize) -> Operator {
        let dims = Dims::new(1, 1, 0);
        let src = format!("{scale}*y1^2");
        let f: Arc<dyn Nonlinearity> = Arc::new(apply_cutoff(
            Arc::new(ExprMap::parse_all(&[src.as_str()], dims).unwrap()),
            CutoffSpec::new(1.0, 0.5).unwrap(),
        ));
        let spec = SystemSpec::new(dims, scalar(-1.0), scalar(0.0), DMatrix::zeros(0, 0), f, Arc::new(ZeroMap::new(2, 1)), Arc::new(ZeroMap::new(2, 0)))
            .unwrap()
            .with_lipschitz(LipschitzTriple::new(0.2, 0.0, 0.0))
            .with_deriv_lipschitz(LipschitzTriple::new(2.0 * scale, 0.0, 0.0));
        let sigma = SigmaParameters::new(-0.5, 0.5);
        let grid = TimeGrid::new(default_t_max(&tc(), &sigma), n).unwrap();
        Operator::new(spec, tc(), sigma, grid, 1e-8).unwrap()
    }

    #[test]
    fn zero_derivative_gives_initial_image() {
        let dims = Dims::new(1, 1, 0);
        let spec = SystemSpec::linear(scalar(-1.0), scalar(0.0), DMatrix::zeros(0, 0)).unwrap();
        assert_eq!(spec.dims, dims);
        let sigma = SigmaParameters::new(-0.5, 0.5);
        let op = Operator::new(spec, tc(), sigma, TimeGrid::new(20.0, 256).unwrap(), 1e-8).unwrap();
        let y0 = DVector::from_element(1, 0.2);
        let phi = op.linear_flow(&y0).unwrap();
        let t1 = T1Operator::new(&op, &phi).unwrap();
        let init = t1.initial();
        let (img, _) = t1.apply(&init).unwrap();
        assert_eq!(img, init);
        let r = solve_t1_fixed_point(&op, &phi, &FixedPointConfig::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.dphi_x[(0, 0)], 0.0);
    }

    #[test]
    fn x_block_of_image_is_two_y0() {
        let op = quadratic(1.0, 2048);
        let y0 = DVector::from_element(1, 0.3);
        let phi = solve_fixed_point(&op, &y0, &FixedPointConfig::default()).unwrap().phi;
        let t1 = T1Operator::new(&op, &phi).unwrap();
        let (img, _) = t1.apply(&t1.initial()).unwrap();
        for i in (op.grid.mid() / 2)..op.grid.len() {
            assert!((img.values[i][(0, 0)] - 0.6).abs() < 1e-3, "t={}", op.grid.node(i));
        }
        assert_eq!(img.at_origin()[(1, 0)], 1.0);
    }

    #[test]
    fn derivative_matches_closed_form_and_fd() {
        let op = quadratic(1.0, 2048);
        let cfg = FixedPointConfig::default();
        let y0 = DVector::from_element(1, 0.3);
        let phi = solve_fixed_point(&op, &y0, &cfg).unwrap().phi;
        let r = solve_t1_fixed_point(&op, &phi, &cfg).unwrap();
        assert!((r.dphi_x[(0, 0)] - 0.6).abs() < 1e-3);
        assert_eq!(r.delta.at_origin()[(1, 0)], 1.0);
        let fd = fd_jacobian(&op, &y0, 1e-3, &cfg).unwrap();
        assert!((fd[(0, 0)] - r.dphi_x[(0, 0)]).abs() < 1e-6 + 2.0 * cfg.tol / 1e-3);
    }

    #[test]
    fn pair_bound_examples() {
        let op = quadratic(1.0, 1024);
        let cfg = FixedPointConfig::default();
        let (a, b) = (DVector::from_element(1, 0.1), DVector::from_element(1, 0.3));
        let pa = solve_fixed_point(&op, &a, &cfg).unwrap().phi;
        let pb = solve_fixed_point(&op, &b, &cfg).unwrap().phi;
        let r = check_phi_pair_bound(&op, &a, &b, &pa, &pb, 1.05);
        assert!(r.holds, "{r:?}");
        let same = check_phi_pair_bound(&op, &a, &a, &pa, &pa, 1.05);
        assert_eq!(same.max_ratio, 0.0);

        let spec = SystemSpec::linear(scalar(-1.0), scalar(0.0), DMatrix::zeros(0, 0)).unwrap();
        let lin = Operator::new(spec, tc(), SigmaParameters::new(-0.5, 0.5), TimeGrid::new(20.0, 256).unwrap(), 1e-8).unwrap();
        let r = check_phi_pair_bound(&lin, &a, &b, &lin.linear_flow(&a).unwrap(), &lin.linear_flow(&b).unwrap(), 1.05);
        assert!((r.max_ratio - 1.0 / std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn continuity_quotients_scale_with_f() {
        let ys: Vec<_> = [-0.2, 0.0, 0.2].iter().map(|&v| DVector::from_element(1, v)).collect();
        let cfg = FixedPointConfig::default();
        let full = check_dphi_continuity(&quadratic(1.0, 1024), &ys, &cfg).unwrap();
        let half = check_dphi_continuity(&quadratic(0.5, 1024), &ys, &cfg).unwrap();
        for (q, h) in full.quotients.iter().zip(&half.quotients) {
            assert!((q - 2.0).abs() < 1e-2, "{q}");
            assert!((q - 2.0 * h).abs() < 1e-9, "{q} vs {h}");
        }
        assert!(full.holds, "{full:?}");
    }
}
