use nalgebra::{DMatrix, DVector};

use super::expm::matrix_exp;
use super::grid::TimeGrid;
use crate::conditions::SigmaParameters;
use crate::error::{Error, Result};

/// Integration range of `e^{(t-s)M} g(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralKind {
    /// `(-inf, t]`
    Past,
    /// `[0, t]`, oriented, so negative for `t < 0`
    Anchored,
    /// `[t, inf)`
    Future,
}

/// Growth envelope of the integrand's argument: `|phi(s)| <= amplitude * e^{sigma(s) s}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub amplitude: f64,
    pub sigma: SigmaParameters,
}

/// `|e^{tM}| <= k e^{rate t}` on the relevant half-line and `Lip <= delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBound {
    pub k: f64,
    pub delta: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralEstimate {
    pub value: DVector<f64>,
    /// Bound on the part beyond the truncation horizon, not included in `value`.
    pub tail: f64,
}

/// Bound on the integral over `(-inf, -T]` or `[T, inf)` at time `t`.
pub fn tail_estimate(kind: IntegralKind, t: f64, grid: &TimeGrid, tail: &TailModel, bound: &TailBound) -> f64 {
    let scale = bound.k * bound.delta * tail.amplitude;
    if scale == 0.0 || bound.rate.is_infinite() {
        return 0.0;
    }
    let big_t = grid.t_max();
    match kind {
        IntegralKind::Anchored => 0.0,
        IntegralKind::Past => {
            let gap = tail.sigma.n - bound.rate;
            if gap <= 0.0 {
                return f64::INFINITY;
            }
            scale * (bound.rate * t - gap * big_t).exp() / gap
        }
        IntegralKind::Future => {
            let gap = bound.rate - tail.sigma.p;
            if gap <= 0.0 {
                return f64::INFINITY;
            }
            scale * (bound.rate * t - gap * big_t).exp() / gap
        }
    }
}

fn sample(grid: &TimeGrid, g: &[DVector<f64>], s: f64) -> Result<DVector<f64>> {
    let (i, theta) = grid.locate(s)?;
    if theta == 0.0 {
        Ok(g[i].clone())
    } else {
        Ok(&g[i] * (1.0 - theta) + &g[i + 1] * theta)
    }
}

/// Trapezoid value of the integral at a single time, with one matrix exponential per node.
///
/// Slow; used as an independent check on [`sweep`].
pub fn weighted_integral(
    kind: IntegralKind,
    t: f64,
    m: &DMatrix<f64>,
    grid: &TimeGrid,
    integrand: &[DVector<f64>],
    tail: &TailModel,
    bound: &TailBound,
) -> Result<IntegralEstimate> {
    if integrand.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "integrand has {} samples for {} grid nodes",
            integrand.len(),
            grid.len()
        )));
    }
    grid.locate(t)?;
    let (lo, hi, sign) = match kind {
        IntegralKind::Past => (-grid.t_max(), t, 1.0),
        IntegralKind::Future => (t, grid.t_max(), 1.0),
        IntegralKind::Anchored if t >= 0.0 => (0.0, t, 1.0),
        IntegralKind::Anchored => (t, 0.0, -1.0),
    };
    let mut points = vec![lo];
    points.extend(grid.nodes().filter(|&s| s > lo && s < hi));
    if hi > lo {
        points.push(hi);
    }
    let mut value = DVector::zeros(m.nrows());
    let mut prev: Option<(f64, DVector<f64>)> = None;
    for s in points {
        let term = matrix_exp(m, t - s)? * sample(grid, integrand, s)?;
        if let Some((s0, v0)) = prev {
            value += (&v0 + &term) * (0.5 * (s - s0));
        }
        prev = Some((s, term));
    }
    Ok(IntegralEstimate {
        value: value * sign,
        tail: tail_estimate(kind, t, grid, tail, bound),
    })
}

/// Trapezoid values of the integral at every node, in O(N) matrix products.
///
/// `e_fwd = e^{hM}` and `e_bwd = e^{-hM}`. Integrands may carry several columns.
pub fn sweep(
    kind: IntegralKind,
    e_fwd: &DMatrix<f64>,
    e_bwd: &DMatrix<f64>,
    grid: &TimeGrid,
    g: &[DMatrix<f64>],
) -> Vec<DMatrix<f64>> {
    let n = grid.n_steps();
    let h = grid.step();
    let half = 0.5 * h;
    let zero = DMatrix::zeros(g[0].nrows(), g[0].ncols());
    let mut out = vec![zero; n + 1];
    match kind {
        IntegralKind::Past => {
            for i in 0..n {
                out[i + 1] = e_fwd * (&out[i] + &g[i] * half) + &g[i + 1] * half;
            }
        }
        IntegralKind::Future => {
            for i in (1..=n).rev() {
                out[i - 1] = e_bwd * (&out[i] + &g[i] * half) + &g[i - 1] * half;
            }
        }
        IntegralKind::Anchored => {
            let mid = grid.mid();
            for i in mid..n {
                out[i + 1] = e_fwd * (&out[i] + &g[i] * half) + &g[i + 1] * half;
            }
            for i in (1..=mid).rev() {
                out[i - 1] = e_bwd * (&out[i] - &g[i] * half) - &g[i - 1] * half;
            }
        }
    }
    out
}

/// One-step and per-node linear flows on a fixed grid.
#[derive(Debug, Clone)]
pub struct Propagators {
    pub ea: DMatrix<f64>,
    pub ea_inv: DMatrix<f64>,
    pub eb: DMatrix<f64>,
    pub eb_inv: DMatrix<f64>,
    pub ec: DMatrix<f64>,
    pub ec_inv: DMatrix<f64>,
    /// `e^{t_i B}` at every node.
    pub eb_nodes: Vec<DMatrix<f64>>,
}

impl Propagators {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, grid: &TimeGrid) -> Result<Self> {
        let h = grid.step();
        let eb_nodes = grid.nodes().map(|t| matrix_exp(b, t)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ea: matrix_exp(a, h)?,
            ea_inv: matrix_exp(a, -h)?,
            eb: matrix_exp(b, h)?,
            eb_inv: matrix_exp(b, -h)?,
            ec: matrix_exp(c, h)?,
            ec_inv: matrix_exp(c, -h)?,
            eb_nodes,
        })
    }
}
