//! The Lyapunov-Perron operator, its fixed point and the manifold map.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{delta_phi, GapReport, SigmaParameters, TrichotomyConstants};
use crate::error::{Error, Result};
use crate::regularity::{solve_t1_fixed_point, T1Result};
use crate::space::{sweep, tail_estimate, IntegralKind, Propagators, TailBound, TailModel, TimeGrid, Trajectory};
use crate::system::{inf_norm, StateVector, SystemSpec};

/// Default horizon `40 / min(sigma_n - alpha_x, beta_z - sigma_p, 1)`.
pub fn default_t_max(tc: &TrichotomyConstants, sigma: &SigmaParameters) -> f64 {
    40.0 / (sigma.n - tc.alpha_x).min(tc.beta_z - sigma.p).min(1.0)
}

/// Everything `T` needs, with the linear flows precomputed for one grid.
#[derive(Debug, Clone)]
pub struct Operator {
    pub spec: SystemSpec,
    pub tc: TrichotomyConstants,
    pub sigma: SigmaParameters,
    pub grid: TimeGrid,
    pub tail_tol: f64,
    pub report: GapReport,
    props: Propagators,
}

impl Operator {
    /// Fails unless C1 holds; C2 is checked by the solvers.
    pub fn new(
        spec: SystemSpec,
        tc: TrichotomyConstants,
        sigma: SigmaParameters,
        grid: TimeGrid,
        tail_tol: f64,
    ) -> Result<Self> {
        let report = delta_phi(&tc, &spec.lipschitz, &sigma);
        if report.flags.c1 != Some(true) {
            return Err(Error::ConditionsNotMet(format!(
                "sigma_n = {}, sigma_p = {} violate C1 for the given rates",
                sigma.n, sigma.p
            )));
        }
        let props = Propagators::new(&spec.a, &spec.b, &spec.c, &grid)?;
        Ok(Self { spec, tc, sigma, grid, tail_tol, report, props })
    }

    pub fn delta_phi(&self) -> f64 {
        self.report.delta_phi.unwrap_or(f64::INFINITY)
    }

    pub fn props(&self) -> &Propagators {
        &self.props
    }

    /// `(0, e^{tB} y0, 0)`.
    pub fn linear_flow(&self, y0: &DVector<f64>) -> Result<Trajectory> {
        self.check_y0(y0)?;
        let d = self.spec.dims;
        let values = self
            .props
            .eb_nodes
            .iter()
            .map(|e| StateVector::new(DVector::zeros(d.n_x), e * y0, DVector::zeros(d.n_z)))
            .collect();
        Trajectory::new(self.grid, values)
    }

    fn check_y0(&self, y0: &DVector<f64>) -> Result<()> {
        if y0.len() != self.spec.dims.n_y {
            return Err(Error::Dimension { component: crate::Component::Y, expected: self.spec.dims.n_y, got: y0.len() });
        }
        Ok(())
    }

    /// Tail bounds of the X and Z integrals at `t = 0` for a trajectory of the given sigma-norm.
    pub fn tail_bounds(&self, amplitude: f64) -> (f64, f64) {
        let model = TailModel { amplitude, sigma: self.sigma };
        let d = &self.spec.lipschitz;
        let x = TailBound { k: self.tc.k_x, delta: d.x, rate: self.tc.alpha_x };
        let z = TailBound { k: self.tc.k_z, delta: d.z, rate: self.tc.beta_z };
        (
            tail_estimate(IntegralKind::Past, 0.0, &self.grid, &model, &x),
            tail_estimate(IntegralKind::Future, 0.0, &self.grid, &model, &z),
        )
    }

    fn check_tail(&self, phi: &Trajectory) -> Result<f64> {
        let (x, z) = self.tail_bounds(phi.sigma_norm(&self.sigma));
        let est = x.max(z);
        if est > self.tail_tol {
            return Err(Error::TailTolerance { estimate: est, tol: self.tail_tol });
        }
        Ok(est)
    }

    /// `psi = T(phi, y0)`; also returns the tail estimate.
    pub fn apply(&self, phi: &Trajectory, y0: &DVector<f64>) -> Result<(Trajectory, f64)> {
        self.check_y0(y0)?;
        if phi.grid != self.grid {
            return Err(Error::InvalidArgument("trajectory lives on a different grid".into()));
        }
        let tail = self.check_tail(phi)?;
        let d = self.spec.dims;
        let n = self.grid.len();
        let mut gf = Vec::with_capacity(n);
        let mut gg = Vec::with_capacity(n);
        let mut gh = Vec::with_capacity(n);
        for u in &phi.values {
            let nl = self.spec.eval_nonlinear(u)?;
            gf.push(DMatrix::from_column_slice(d.n_x, 1, nl.x.as_slice()));
            gg.push(DMatrix::from_column_slice(d.n_y, 1, nl.y.as_slice()));
            gh.push(DMatrix::from_column_slice(d.n_z, 1, nl.z.as_slice()));
        }
        let p = &self.props;
        let ix = sweep(IntegralKind::Past, &p.ea, &p.ea_inv, &self.grid, &gf);
        let iy = sweep(IntegralKind::Anchored, &p.eb, &p.eb_inv, &self.grid, &gg);
        let iz = sweep(IntegralKind::Future, &p.ec, &p.ec_inv, &self.grid, &gh);
        let values = (0..n)
            .map(|i| {
                StateVector::new(
                    ix[i].column(0).into_owned(),
                    &p.eb_nodes[i] * y0 + iy[i].column(0),
                    -iz[i].column(0).into_owned(),
                )
            })
            .collect();
        Ok((Trajectory::new(self.grid, values)?, tail))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub a_priori_check: bool,
    pub rate_slack: f64,
    /// Iterate even when C2 fails, and downgrade the watchdogs to warnings.
    pub allow_unverified: bool,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 200, a_priori_check: true, rate_slack: 0.05, allow_unverified: false }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidArgument(format!(
                "need tol > 0 and max_iters >= 1, got tol = {}, max_iters = {}",
                self.tol, self.max_iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub phi: Trajectory,
    pub iterations: usize,
    pub final_step_norm: f64,
    /// `|phi_{k+1} - phi_k| / |phi_k - phi_{k-1}|`, skipping steps at rounding level.
    pub measured_rates: Vec<f64>,
    /// `|phi_{k+1} - phi_k|` for every iteration.
    pub step_norms: Vec<f64>,
    pub phi_x: DVector<f64>,
    pub phi_z: DVector<f64>,
    pub tail_estimate: f64,
}

impl SolveResult {
    pub fn max_rate(&self) -> f64 {
        self.measured_rates.iter().copied().fold(0.0, f64::max)
    }
}

/// Ceiling of the a-priori Banach iteration count, plus one.
pub fn apriori_iterations(delta_phi: f64, tol: f64, first_step: f64) -> usize {
    if first_step <= tol || delta_phi <= 0.0 {
        return 1;
    }
    if delta_phi >= 1.0 {
        return usize::MAX;
    }
    let k = ((tol * (1.0 - delta_phi) / first_step).ln() / delta_phi.ln()).ceil();
    k.max(0.0) as usize + 1
}

/// Iterates `T` from `(0, e^{tB} y0, 0)`.
pub fn solve_fixed_point(op: &Operator, y0: &DVector<f64>, cfg: &FixedPointConfig) -> Result<SolveResult> {
    let init = op.linear_flow(y0)?;
    solve_from(op, y0, init, cfg, &mut |_, _| {})
}

/// Iterates `T` from a given trajectory, reporting every iterate `phi_k`, `k >= 0`.
pub fn solve_from(
    op: &Operator,
    y0: &DVector<f64>,
    init: Trajectory,
    cfg: &FixedPointConfig,
    observe: &mut dyn FnMut(usize, &Trajectory),
) -> Result<SolveResult> {
    cfg.validate()?;
    let dphi = op.delta_phi();
    if op.report.flags.c2 != Some(true) {
        if cfg.allow_unverified {
            log::warn!("C2 fails (delta_phi = {dphi}); iterating without the contraction guarantee");
        } else {
            return Err(Error::ConditionsNotMet(format!("C2 fails, delta_phi = {dphi}")));
        }
    }
    let rate_bound = dphi + cfg.rate_slack;
    let mut phi = init;
    observe(0, &phi);
    let mut steps: Vec<f64> = Vec::new();
    let mut rates = Vec::new();
    let mut over = 0;
    let mut apriori = usize::MAX;
    for k in 1..=cfg.max_iters {
        let (next, tail) = op.apply(&phi, y0)?;
        let step = next.distance(&phi, &op.sigma);
        let floor = 1e-13 * next.sigma_norm(&op.sigma).max(1.0);
        if let Some(&prev) = steps.last() {
            if prev > floor && step > floor {
                let rate = step / prev;
                rates.push(rate);
                if rate > rate_bound {
                    over += 1;
                } else {
                    over = 0;
                }
                if over >= 3 {
                    if cfg.allow_unverified {
                        log::warn!("measured rate {rate} above {rate_bound} for {over} iterations");
                    } else {
                        return Err(Error::ContractionViolated { rate, bound: rate_bound, consecutive: over });
                    }
                }
            }
        } else if cfg.a_priori_check {
            apriori = apriori_iterations(dphi, cfg.tol, step);
        }
        steps.push(step);
        phi = next;
        observe(k, &phi);
        if step < cfg.tol {
            let origin = phi.at_origin().clone();
            return Ok(SolveResult {
                iterations: k,
                final_step_norm: step,
                measured_rates: rates,
                step_norms: steps,
                phi_x: origin.x,
                phi_z: origin.z,
                tail_estimate: tail,
                phi,
            });
        }
        if cfg.a_priori_check && k >= apriori {
            if cfg.allow_unverified {
                if k == apriori {
                    log::warn!("a-priori iteration bound {apriori} reached");
                }
            } else {
                return Err(Error::AprioriBoundExceeded { iters: k + 1, bound: apriori });
            }
        }
    }
    Err(Error::MaxIterations { iters: cfg.max_iters, last_step: steps.last().copied().unwrap_or(f64::NAN) })
}

/// One row of a manifold sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub y0: Vec<f64>,
    pub phi_x: Vec<f64>,
    pub phi_z: Vec<f64>,
    pub iters: usize,
    pub final_step_norm: f64,
    pub max_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dphi_x: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dphi_z: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl ManifoldPoint {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSample {
    pub points: Vec<ManifoldPoint>,
    pub lipschitz_bound: f64,
    pub max_quotient: f64,
    pub violations: usize,
    pub failures: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn solve_point(op: &Operator, y0: &DVector<f64>, cfg: &FixedPointConfig, jacobian: bool) -> ManifoldPoint {
    let mut point = ManifoldPoint {
        y0: y0.iter().copied().collect(),
        phi_x: Vec::new(),
        phi_z: Vec::new(),
        iters: 0,
        final_step_norm: f64::NAN,
        max_rate: f64::NAN,
        dphi_x: None,
        dphi_z: None,
        error: None,
    };
    let res = match solve_fixed_point(op, y0, cfg) {
        Ok(r) => r,
        Err(e) => {
            point.error = Some(e.to_string());
            return point;
        }
    };
    point.phi_x = res.phi_x.iter().copied().collect();
    point.phi_z = res.phi_z.iter().copied().collect();
    point.iters = res.iterations;
    point.final_step_norm = res.final_step_norm;
    point.max_rate = res.max_rate();
    if jacobian {
        match solve_t1_fixed_point(op, &res.phi, cfg) {
            Ok(T1Result { dphi_x, dphi_z, .. }) => {
                point.dphi_x = Some(rows(&dphi_x));
                point.dphi_z = Some(rows(&dphi_z));
            }
            Err(e) => point.error = Some(format!("derivative: {e}")),
        }
    }
    point
}

/// `max(|a_x - b_x|, |a_z - b_z|) / |a_y - b_y|` over all successful pairs.
pub fn lipschitz_quotients(points: &[ManifoldPoint]) -> Vec<f64> {
    let good: Vec<_> = points.iter().filter(|p| p.error.is_none()).collect();
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let mut out = Vec::new();
    for i in 0..good.len() {
        for j in i + 1..good.len() {
            let dy = diff(&good[i].y0, &good[j].y0);
            if dy == 0.0 {
                continue;
            }
            let dphi = diff(&good[i].phi_x, &good[j].phi_x).max(diff(&good[i].phi_z, &good[j].phi_z));
            out.push(dphi / dy);
        }
    }
    out
}

/// Independent solves over `ys`, run concurrently; failures are recorded per point.
pub fn sample_manifold(op: &Operator, ys: &[DVector<f64>], cfg: &FixedPointConfig, jacobian: bool) -> ManifoldSample {
    let points: Vec<ManifoldPoint> = ys.par_iter().map(|y| solve_point(op, y, cfg, jacobian)).collect();
    let bound = op.report.lipschitz_bound.unwrap_or(f64::INFINITY);
    let q = lipschitz_quotients(&points);
    ManifoldSample {
        failures: points.iter().filter(|p| !p.ok()).count(),
        max_quotient: q.iter().copied().fold(0.0, f64::max),
        violations: q.iter().filter(|&&v| v > bound).count(),
        lipschitz_bound: bound,
        points,
    }
}

impl ManifoldSample {
    /// Flattened CSV: `y0_*, phi_x_*, phi_z_*, [dphi_x_r_c.., dphi_z_r_c..], iters, final_step_norm, max_rate, error`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let Some(first) = self.points.first() else {
            return Ok(());
        };
        let n_y = first.y0.len();
        let n_x = self.points.iter().map(|p| p.phi_x.len()).max().unwrap_or(0);
        let n_z = self.points.iter().map(|p| p.phi_z.len()).max().unwrap_or(0);
        let with_d = self.points.iter().any(|p| p.dphi_x.is_some());
        let mut header: Vec<String> = Vec::new();
        header.extend((1..=n_y).map(|k| format!("y0_{k}")));
        header.extend((1..=n_x).map(|k| format!("phi_x_{k}")));
        header.extend((1..=n_z).map(|k| format!("phi_z_{k}")));
        if with_d {
            for (name, rows) in [("dphi_x", n_x), ("dphi_z", n_z)] {
                for r in 1..=rows {
                    header.extend((1..=n_y).map(|c| format!("{name}_{r}_{c}")));
                }
            }
        }
        header.extend(["iters", "final_step_norm", "max_rate", "error"].map(String::from));
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        out.write_record(&header).map_err(io)?;
        let pad = |v: &[f64], n: usize| -> Vec<String> {
            (0..n).map(|i| v.get(i).map(|x| x.to_string()).unwrap_or_default()).collect()
        };
        for p in &self.points {
            let mut rec = pad(&p.y0, n_y);
            rec.extend(pad(&p.phi_x, n_x));
            rec.extend(pad(&p.phi_z, n_z));
            if with_d {
                for (d, rows) in [(&p.dphi_x, n_x), (&p.dphi_z, n_z)] {
                    let flat: Vec<f64> = d.iter().flatten().flatten().copied().collect();
                    rec.extend(pad(&flat, rows * n_y));
                }
            }
            rec.push(p.iters.to_string());
            rec.push(p.final_step_norm.to_string());
            rec.push(p.max_rate.to_string());
            rec.push(p.error.clone().unwrap_or_default());
            out.write_record(&rec).map_err(io)?;
        }
        out.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(())
    }
}

/// Manifold map value `(Phi_x, Phi_z)` at `y0` after a fresh solve.
pub fn manifold_map(op: &Operator, y0: &DVector<f64>, cfg: &FixedPointConfig) -> Result<(DVector<f64>, DVector<f64>)> {
    let r = solve_fixed_point(op, y0, cfg)?;
    Ok((r.phi_x, r.phi_z))
}

/// Sup-norm of the pair `(x, z)`.
pub fn graph_norm(x: &DVector<f64>, z: &DVector<f64>) -> f64 {
    inf_norm(x).max(inf_norm(z))
}
