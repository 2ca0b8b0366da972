//! Trichotomy constants, the gap and sigma conditions, and the contraction rate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::matrix_exp;
use crate::system::{induced_inf_norm, LipschitzTriple};

/// Growth rates and constants of the linear flows.
///
/// An empty stable block has `alpha_x = -inf`, an empty unstable block `beta_z = +inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrichotomyConstants {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub beta_y: f64,
    pub beta_z: f64,
    pub k_x: f64,
    pub k_y: f64,
    pub k_z: f64,
}

impl TrichotomyConstants {
    pub fn ordered(&self) -> bool {
        self.alpha_x < self.alpha_y && self.alpha_y <= self.beta_y && self.beta_y < self.beta_z
    }

    /// `c(t)`: `beta_y` for `t <= 0`, `alpha_y` for `t > 0`.
    pub fn c(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.beta_y
        } else {
            self.alpha_y
        }
    }

    /// `k(t)`: `-K_y delta_y` for `t <= 0`, `K_y delta_y` for `t > 0`.
    pub fn k(&self, delta: &LipschitzTriple, t: f64) -> f64 {
        let kd = self.k_y * delta.y;
        if t <= 0.0 {
            -kd
        } else {
            kd
        }
    }

    pub fn v(&self, delta: &LipschitzTriple, t: f64) -> f64 {
        self.c(t) + self.k(delta, t)
    }
}

/// The two weights of the sigma-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaParameters {
    #[serde(rename = "sigma_n")]
    pub n: f64,
    #[serde(rename = "sigma_p")]
    pub p: f64,
}

impl SigmaParameters {
    pub fn new(n: f64, p: f64) -> Self {
        Self { n, p }
    }

    /// `sigma(t)`; both branches give weight 1 at `t = 0`.
    pub fn at(&self, t: f64) -> f64 {
        if t >= 0.0 {
            self.p
        } else {
            self.n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Stable,
    Center,
    Unstable,
}

/// Rates and constant proposed for one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConstants {
    /// Lower rate: `alpha_x`, `alpha_y` or `beta_z`.
    pub lo: f64,
    /// Upper rate; equal to `lo` except for the center block.
    pub hi: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeriveOptions {
    pub t_ver: f64,
    pub points: usize,
    /// Margin applied once when the spectral rate fails on the grid.
    pub eta: Option<f64>,
    pub k_max: f64,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            t_ver: 50.0,
            points: 512,
            eta: Some(0.05),
            k_max: 1e6,
        }
    }
}

impl DeriveOptions {
    fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.points.max(2);
        (0..n).map(move |i| self.t_ver * i as f64 / (n - 1) as f64)
    }
}

// `sup_t |e^{sign t M}| e^{-sign rate t}` over the grid, and whether it is still growing at the end
fn envelope(m: &DMatrix<f64>, sign: f64, rate: f64, opts: &DeriveOptions) -> Result<(f64, bool)> {
    let vals = opts
        .grid()
        .map(|t| Ok(induced_inf_norm(&matrix_exp(m, sign * t)?) * (-sign * rate * t).exp()))
        .collect::<Result<Vec<f64>>>()?;
    let cut = vals.len() * 9 / 10;
    let early = vals[..cut].iter().copied().fold(1.0, f64::max);
    let late = vals[cut..].iter().copied().fold(0.0, f64::max);
    let k = early.max(late);
    // e^{tM} e^{-rate t} of a scalar block is 1 only up to rounding
    let k = if k < 1.0 + 1e-12 { 1.0 } else { k };
    Ok((k, late > early * 1.01))
}

fn real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    m.complex_eigenvalues().iter().map(|z| z.re).collect()
}

fn block_k(m: &DMatrix<f64>, kind: BlockKind, lo: f64, hi: f64, opts: &DeriveOptions) -> Result<(f64, bool)> {
    match kind {
        BlockKind::Stable => envelope(m, 1.0, lo, opts),
        BlockKind::Unstable => envelope(m, -1.0, lo, opts),
        BlockKind::Center => {
            let (kf, gf) = envelope(m, 1.0, lo, opts)?;
            let (kb, gb) = envelope(m, -1.0, hi, opts)?;
            Ok((kf.max(kb), gf || gb))
        }
    }
}

/// Proposes rates from eigenvalue real parts and computes the smallest `K >= 1`
/// making the trichotomy bounds hold on `[0, t_ver]`.
pub fn derive_constants(m: &DMatrix<f64>, kind: BlockKind, opts: &DeriveOptions) -> Result<BlockConstants> {
    if m.nrows() == 0 {
        let (lo, hi) = match kind {
            BlockKind::Stable => (f64::NEG_INFINITY, f64::NEG_INFINITY),
            BlockKind::Unstable => (f64::INFINITY, f64::INFINITY),
            BlockKind::Center => {
                return Err(Error::InvalidArgument("the center block cannot be empty".into()));
            }
        };
        return Ok(BlockConstants { lo, hi, k: 1.0 });
    }
    let re = real_parts(m);
    let min = re.iter().copied().fold(f64::INFINITY, f64::min);
    let max = re.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = match kind {
        BlockKind::Stable => (max, max),
        BlockKind::Center => (min, max),
        BlockKind::Unstable => (min, min),
    };
    let label = match kind {
        BlockKind::Stable => "alpha_x",
        BlockKind::Center => "alpha_y/beta_y",
        BlockKind::Unstable => "beta_z",
    };
    let (mut k, mut growing) = block_k(m, kind, lo, hi, opts)?;
    if (growing || k > opts.k_max) && opts.eta.is_some() {
        let eta = opts.eta.unwrap_or(0.0);
        match kind {
            BlockKind::Stable => {
                lo += eta;
                hi = lo;
            }
            BlockKind::Unstable => {
                lo -= eta;
                hi = lo;
            }
            BlockKind::Center => {
                lo += eta;
                hi -= eta;
            }
        }
        if lo > hi && kind == BlockKind::Center {
            return Err(Error::RateViolation { kind: label.into(), rate: lo, k_max: opts.k_max });
        }
        log::warn!("{label}: spectral rate fails on the verification grid, widened by {eta}");
        (k, growing) = block_k(m, kind, lo, hi, opts)?;
    }
    if growing || k > opts.k_max {
        return Err(Error::RateViolation { kind: label.into(), rate: lo, k_max: opts.k_max });
    }
    Ok(BlockConstants { lo, hi, k })
}

/// Derives all seven constants from the linear blocks.
pub fn derive_trichotomy(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    opts: &DeriveOptions,
) -> Result<TrichotomyConstants> {
    let x = derive_constants(a, BlockKind::Stable, opts)?;
    let y = derive_constants(b, BlockKind::Center, opts)?;
    let z = derive_constants(c, BlockKind::Unstable, opts)?;
    Ok(TrichotomyConstants {
        alpha_x: x.lo,
        alpha_y: y.lo,
        beta_y: y.hi,
        beta_z: z.lo,
        k_x: x.k,
        k_y: y.k,
        k_z: z.k,
    })
}

/// Largest ratio `|e^{tM}| / (K e^{rate t})` over the four trichotomy bounds on the grid;
/// at most 1 when the bounds hold.
pub fn verify_trichotomy(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    tc: &TrichotomyConstants,
    opts: &DeriveOptions,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut check = |m: &DMatrix<f64>, sign: f64, rate: f64, k: f64| -> Result<()> {
        if m.nrows() == 0 {
            return Ok(());
        }
        for t in opts.grid() {
            let lhs = induced_inf_norm(&matrix_exp(m, sign * t)?);
            let rhs = k * (sign * rate * t).exp();
            worst = worst.max(lhs / rhs);
        }
        Ok(())
    };
    check(a, 1.0, tc.alpha_x, tc.k_x)?;
    check(b, 1.0, tc.alpha_y, tc.k_y)?;
    check(b, -1.0, tc.beta_y, tc.k_y)?;
    check(c, -1.0, tc.beta_z, tc.k_z)?;
    Ok(worst)
}

/// The four quotients whose maximum is the contraction rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRatios {
    /// `K_y delta_y / (beta_y - sigma_n)`
    pub center_past: f64,
    /// `K_y delta_y / (sigma_p - alpha_y)`
    pub center_future: f64,
    /// `K_z delta_z / (beta_z - sigma_p)`
    pub unstable: f64,
    /// `K_x delta_x / (sigma_n - alpha_x)`
    pub stable: f64,
}

impl GapRatios {
    pub fn max(&self) -> f64 {
        self.center_past.max(self.center_future).max(self.unstable).max(self.stable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionFlags {
    /// `None` until checked against the matrices.
    pub a1: Option<bool>,
    /// `None` until spot-checked.
    pub a2: Option<bool>,
    pub a3: bool,
    pub c1: Option<bool>,
    pub c2: Option<bool>,
    pub a6: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub constants: TrichotomyConstants,
    pub lipschitz: LipschitzTriple,
    pub sigma: Option<SigmaParameters>,
    pub ratios: Option<GapRatios>,
    pub delta_phi: Option<f64>,
    pub lipschitz_bound: Option<f64>,
    pub flags: ConditionFlags,
    pub messages: Vec<String>,
}

impl GapReport {
    /// A1, A2 (when checked), A3, C1 and C2 all pass. A6 only gates the regularity checks.
    pub fn passes(&self) -> bool {
        let f = &self.flags;
        f.a1 != Some(false) && f.a2 != Some(false) && f.a3 && f.c1 == Some(true) && f.c2 == Some(true)
    }

    pub fn set_a1(&mut self, ok: bool, detail: impl Into<String>) {
        self.flags.a1 = Some(ok);
        if !ok {
            self.messages.push(detail.into());
        }
    }

    pub fn set_a2(&mut self, ok: bool, detail: impl Into<String>) {
        self.flags.a2 = Some(ok);
        if !ok {
            self.messages.push(detail.into());
        }
    }
}

fn kd(k: f64, d: f64) -> f64 {
    // an empty block carries delta = 0 and must not meet an infinite rate
    if d == 0.0 {
        0.0
    } else {
        k * d
    }
}

/// Gap and gap-restriction flags; never fails.
pub fn check_conditions(tc: &TrichotomyConstants, delta: &LipschitzTriple) -> GapReport {
    let (x, y, z) = (kd(tc.k_x, delta.x), kd(tc.k_y, delta.y), kd(tc.k_z, delta.z));
    let a3 = tc.beta_y - tc.alpha_x > x + y && tc.beta_z - tc.alpha_y > y + z;
    let a6 = y + tc.alpha_y <= 0.0 && tc.beta_y - y >= 0.0;
    let mut messages = Vec::new();
    if !tc.ordered() {
        messages.push(format!(
            "rates are not ordered: alpha_x={} alpha_y={} beta_y={} beta_z={}",
            tc.alpha_x, tc.alpha_y, tc.beta_y, tc.beta_z
        ));
    }
    if !a3 {
        messages.push(format!(
            "A3 fails: beta_y-alpha_x={} vs {}, beta_z-alpha_y={} vs {}",
            tc.beta_y - tc.alpha_x,
            x + y,
            tc.beta_z - tc.alpha_y,
            y + z
        ));
    }
    if !a6 {
        messages.push(format!(
            "A6 fails: K_y delta_y + alpha_y = {}, beta_y - K_y delta_y = {}",
            y + tc.alpha_y,
            tc.beta_y - y
        ));
    }
    GapReport {
        constants: *tc,
        lipschitz: *delta,
        sigma: None,
        ratios: None,
        delta_phi: None,
        lipschitz_bound: None,
        flags: ConditionFlags { a1: None, a2: None, a3, c1: None, c2: None, a6 },
        messages,
    }
}

fn c1_holds(tc: &TrichotomyConstants, s: &SigmaParameters) -> bool {
    tc.alpha_x < s.n && s.n < tc.alpha_y && tc.alpha_y <= tc.beta_y && tc.beta_y < s.p && s.p < tc.beta_z
}

fn c2_holds(tc: &TrichotomyConstants, delta: &LipschitzTriple, s: &SigmaParameters) -> bool {
    let (x, y, z) = (kd(tc.k_x, delta.x), kd(tc.k_y, delta.y), kd(tc.k_z, delta.z));
    tc.alpha_x + x < s.n && s.n < tc.beta_y - y && tc.alpha_y + y < s.p && s.p < tc.beta_z - z
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 || den == f64::INFINITY {
        0.0
    } else if den <= 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Full report: flags, the four ratios, `delta_phi` and the manifold Lipschitz bound `K_y e^{delta_phi}`.
pub fn delta_phi(tc: &TrichotomyConstants, delta: &LipschitzTriple, sigma: &SigmaParameters) -> GapReport {
    let mut report = check_conditions(tc, delta);
    let (x, y, z) = (kd(tc.k_x, delta.x), kd(tc.k_y, delta.y), kd(tc.k_z, delta.z));
    let ratios = GapRatios {
        center_past: ratio(y, tc.beta_y - sigma.n),
        center_future: ratio(y, sigma.p - tc.alpha_y),
        unstable: ratio(z, tc.beta_z - sigma.p),
        stable: ratio(x, sigma.n - tc.alpha_x),
    };
    let d = ratios.max();
    let c1 = c1_holds(tc, sigma);
    let c2 = c2_holds(tc, delta, sigma);
    if !c1 {
        report.messages.push(format!("C1 fails for sigma_n={} sigma_p={}", sigma.n, sigma.p));
    }
    if !c2 {
        report.messages.push(format!("C2 fails: delta_phi = {d}"));
    }
    report.sigma = Some(*sigma);
    report.ratios = Some(ratios);
    report.delta_phi = Some(d);
    report.lipschitz_bound = Some(tc.k_y * d.exp());
    report.flags.c1 = Some(c1);
    report.flags.c2 = Some(c2);
    report
}

// point inside (lo, hi): midpoint, or a unit-plus-margin step from the finite end
fn interior(lo: f64, hi: f64, margin: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (false, true) => hi - (margin + 1.0),
        (true, false) => lo + (margin + 1.0),
        (false, false) => 0.0,
    }
}

/// Midpoints of the C2 intervals, moved into the C1 intervals when needed.
pub fn choose_sigma(tc: &TrichotomyConstants, delta: &LipschitzTriple) -> Result<SigmaParameters> {
    let (x, y, z) = (kd(tc.k_x, delta.x), kd(tc.k_y, delta.y), kd(tc.k_z, delta.z));
    let pick = |which: &'static str, c2: (f64, f64), c1: (f64, f64)| -> Result<f64> {
        if !(c2.0 < c2.1) {
            return Err(Error::EmptySigmaInterval { which, lo: c2.0, hi: c2.1 });
        }
        let s = interior(c2.0, c2.1, y);
        if c1.0 < s && s < c1.1 {
            return Ok(s);
        }
        let (lo, hi) = (c2.0.max(c1.0), c2.1.min(c1.1));
        if !(lo < hi) {
            return Err(Error::EmptySigmaInterval { which, lo, hi });
        }
        Ok(interior(lo, hi, y))
    };
    let n = pick("sigma_n", (tc.alpha_x + x, tc.beta_y - y), (tc.alpha_x, tc.alpha_y))?;
    let p = pick("sigma_p", (tc.alpha_y + y, tc.beta_z - z), (tc.beta_y, tc.beta_z))?;
    Ok(SigmaParameters::new(n, p))
}
