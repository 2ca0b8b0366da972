use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::Nonlinearity;

/// Plateau radius and transition width of the localizing multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub rho: f64,
    pub width: f64,
}

impl CutoffSpec {
    pub fn new(rho: f64, width: f64) -> Result<Self> {
        if !(rho > 0.0 && width > 0.0 && rho.is_finite() && width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cutoff needs rho > 0 and width > 0, got rho = {rho}, width = {width}"
            )));
        }
        Ok(Self { rho, width })
    }

    /// Outer radius of the support.
    pub fn support_radius(&self) -> f64 {
        self.rho + self.width
    }

    /// Cubic smoothstep: 1 on `r <= rho`, 0 on `r >= rho + width`, C^1 in between.
    pub fn chi(&self, r: f64) -> f64 {
        let s = ((r - self.rho) / self.width).clamp(0.0, 1.0);
        1.0 - s * s * (3.0 - 2.0 * s)
    }

    pub fn chi_prime(&self, r: f64) -> f64 {
        let s = (r - self.rho) / self.width;
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        -6.0 * s * (1.0 - s) / self.width
    }

    /// Radius used by the multiplier. Euclidean, so that `chi(|u|)` stays C^1.
    pub fn radius(u: &[f64]) -> f64 {
        u.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `u -> chi(|u|) * inner(u)`.
#[derive(Debug, Clone)]
pub struct CutoffMap {
    inner: Arc<dyn Nonlinearity>,
    cutoff: CutoffSpec,
}

impl CutoffMap {
    pub fn new(inner: Arc<dyn Nonlinearity>, cutoff: CutoffSpec) -> Self {
        Self { inner, cutoff }
    }

    pub fn cutoff(&self) -> CutoffSpec {
        self.cutoff
    }
}

impl Nonlinearity for CutoffMap {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let r = CutoffSpec::radius(u);
        let chi = self.cutoff.chi(r);
        if chi == 0.0 {
            out.fill(0.0);
            return Ok(());
        }
        self.inner.eval(u, out)?;
        if chi != 1.0 {
            out.iter_mut().for_each(|v| *v *= chi);
        }
        Ok(())
    }

    fn jacobian(&self, u: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let r = CutoffSpec::radius(u);
        let chi = self.cutoff.chi(r);
        if chi == 0.0 {
            out.fill(0.0);
            return Ok(());
        }
        self.inner.jacobian(u, out)?;
        if chi == 1.0 {
            return Ok(());
        }
        *out *= chi;
        let dchi = self.cutoff.chi_prime(r);
        if dchi != 0.0 {
            let mut vals = vec![0.0; self.output_dim()];
            self.inner.eval(u, &mut vals)?;
            for (i, v) in vals.iter().enumerate() {
                for (j, uj) in u.iter().enumerate() {
                    out[(i, j)] += v * dchi * uj / r;
                }
            }
        }
        Ok(())
    }
}

/// Localizes `map` with the multiplier `chi(|u|)`.
pub fn apply_cutoff(map: Arc<dyn Nonlinearity>, c: CutoffSpec) -> CutoffMap {
    CutoffMap::new(map, c)
}
