//! The decomposed system
//!
//! ```text
//! x' = A x + F(u)
//! y' = B y + G(u)
//! z' = C z + H(u)
//! ```
//!
//! on `E = R^nx x R^ny x R^nz` with the max-of-infinity-norms norm.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Component, Error, Result};

/// Sizes of the stable, center and unstable blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
}

impl Dims {
    pub fn new(n_x: usize, n_y: usize, n_z: usize) -> Self {
        Self { n_x, n_y, n_z }
    }

    pub fn total(&self) -> usize {
        self.n_x + self.n_y + self.n_z
    }

    pub fn of(&self, c: Component) -> usize {
        match c {
            Component::X => self.n_x,
            Component::Y => self.n_y,
            Component::Z => self.n_z,
        }
    }
}

/// A point `u = x + y + z` of the phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
}

impl StateVector {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            x: DVector::zeros(dims.n_x),
            y: DVector::zeros(dims.n_y),
            z: DVector::zeros(dims.n_z),
        }
    }

    pub fn new(x: DVector<f64>, y: DVector<f64>, z: DVector<f64>) -> Self {
        Self { x, y, z }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.x.len(), self.y.len(), self.z.len())
    }

    /// Splits a flat vector laid out as `[x, y, z]`.
    pub fn split(u: &[f64], dims: Dims) -> Result<Self> {
        if u.len() != dims.total() {
            return Err(Error::InvalidArgument(format!(
                "flat state has length {}, expected {}",
                u.len(),
                dims.total()
            )));
        }
        let (x, rest) = u.split_at(dims.n_x);
        let (y, z) = rest.split_at(dims.n_y);
        Ok(Self {
            x: DVector::from_column_slice(x),
            y: DVector::from_column_slice(y),
            z: DVector::from_column_slice(z),
        })
    }

    pub fn compose(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.x.len() + self.y.len() + self.z.len());
        self.write_flat(&mut out);
        out
    }

    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.x.as_slice());
        out.extend_from_slice(self.y.as_slice());
        out.extend_from_slice(self.z.as_slice());
    }

    pub fn component(&self, c: Component) -> &DVector<f64> {
        match c {
            Component::X => &self.x,
            Component::Y => &self.y,
            Component::Z => &self.z,
        }
    }

    /// `max(|x|_inf, |y|_inf, |z|_inf)`.
    pub fn norm(&self) -> f64 {
        inf_norm(&self.x).max(inf_norm(&self.y)).max(inf_norm(&self.z))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            x: &self.x - &other.x,
            y: &self.y - &other.y,
            z: &self.z - &other.z,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            x: &self.x + &other.x,
            y: &self.y + &other.y,
            z: &self.z + &other.z,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            x: &self.x * s,
            y: &self.y * s,
            z: &self.z * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).chain(self.z.iter()).all(|v| v.is_finite())
    }
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Induced infinity norm (max absolute row sum).
pub fn induced_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// A nonlinear term `E -> R^m` with its Jacobian. Inputs are flat `[x, y, z]` slices.
pub trait Nonlinearity: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()>;
    /// Writes the `output_dim x input_dim` Jacobian into `out`.
    fn jacobian(&self, u: &[f64], out: &mut DMatrix<f64>) -> Result<()>;
}

/// The identically zero map.
#[derive(Debug, Clone)]
pub struct ZeroMap {
    input: usize,
    output: usize,
}

impl ZeroMap {
    pub fn new(input: usize, output: usize) -> Self {
        Self { input, output }
    }
}

impl Nonlinearity for ZeroMap {
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn eval(&self, _u: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn jacobian(&self, _u: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

type EvalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// An opaque evaluator whose Jacobian is taken by central differences.
pub struct FiniteDifferenceMap {
    input: usize,
    output: usize,
    h_fd: f64,
    f: Box<EvalFn>,
}

impl FiniteDifferenceMap {
    pub const DEFAULT_STEP: f64 = 1e-5;

    pub fn new<F>(input: usize, output: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            input,
            output,
            h_fd: Self::DEFAULT_STEP,
            f: Box::new(f),
        }
    }

    pub fn with_step(mut self, h_fd: f64) -> Self {
        self.h_fd = h_fd;
        self
    }
}

impl fmt::Debug for FiniteDifferenceMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteDifferenceMap")
            .field("input", &self.input)
            .field("output", &self.output)
            .field("h_fd", &self.h_fd)
            .finish()
    }
}

impl Nonlinearity for FiniteDifferenceMap {
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(u, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NotDifferentiable("opaque evaluator returned a non-finite value".into()))
        }
    }
    fn jacobian(&self, u: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let mut probe = u.to_vec();
        let mut plus = vec![0.0; self.output];
        let mut minus = vec![0.0; self.output];
        for j in 0..self.input {
            let orig = probe[j];
            probe[j] = orig + self.h_fd;
            self.eval(&probe, &mut plus)?;
            probe[j] = orig - self.h_fd;
            self.eval(&probe, &mut minus)?;
            probe[j] = orig;
            for i in 0..self.output {
                out[(i, j)] = (plus[i] - minus[i]) / (2.0 * self.h_fd);
            }
        }
        Ok(())
    }
}

/// Nonnegative constants attached to the three nonlinear terms (`delta` or `gamma`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LipschitzTriple {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl LipschitzTriple {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn uniform(v: f64) -> Self {
        Self::new(v, v, v)
    }
}

/// The full system: linear blocks, nonlinear terms and their Lipschitz data.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub dims: Dims,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub f: Arc<dyn Nonlinearity>,
    pub g: Arc<dyn Nonlinearity>,
    pub h: Arc<dyn Nonlinearity>,
    pub lipschitz: LipschitzTriple,
    pub deriv_lipschitz: Option<LipschitzTriple>,
}

impl SystemSpec {
    /// Builds a spec, checking every block against `dims`.
    pub fn new(
        dims: Dims,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        f: Arc<dyn Nonlinearity>,
        g: Arc<dyn Nonlinearity>,
        h: Arc<dyn Nonlinearity>,
    ) -> Result<Self> {
        if dims.n_y == 0 {
            return Err(Error::InvalidArgument(
                "a center manifold needs at least one center direction (n_y >= 1)".into(),
            ));
        }
        for (comp, m) in [(Component::X, &a), (Component::Y, &b), (Component::Z, &c)] {
            let n = dims.of(comp);
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension {
                    component: comp,
                    expected: n,
                    got: if m.nrows() != n { m.nrows() } else { m.ncols() },
                });
            }
        }
        for (comp, map) in [(Component::X, &f), (Component::Y, &g), (Component::Z, &h)] {
            if map.output_dim() != dims.of(comp) {
                return Err(Error::Dimension {
                    component: comp,
                    expected: dims.of(comp),
                    got: map.output_dim(),
                });
            }
            if map.input_dim() != dims.total() {
                return Err(Error::InvalidArgument(format!(
                    "nonlinear term for {comp} takes {} inputs, state has {}",
                    map.input_dim(),
                    dims.total()
                )));
            }
        }
        Ok(Self {
            dims,
            a,
            b,
            c,
            f,
            g,
            h,
            lipschitz: LipschitzTriple::default(),
            deriv_lipschitz: None,
        })
    }

    /// Purely linear system with zero nonlinear terms.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let dims = Dims::new(a.nrows(), b.nrows(), c.nrows());
        let n = dims.total();
        Self::new(
            dims,
            a,
            b,
            c,
            Arc::new(ZeroMap::new(n, dims.n_x)),
            Arc::new(ZeroMap::new(n, dims.n_y)),
            Arc::new(ZeroMap::new(n, dims.n_z)),
        )
    }

    pub fn with_lipschitz(mut self, delta: LipschitzTriple) -> Self {
        self.lipschitz = delta;
        self
    }

    pub fn with_deriv_lipschitz(mut self, gamma: LipschitzTriple) -> Self {
        self.deriv_lipschitz = Some(gamma);
        self
    }

    pub fn linear_block(&self, c: Component) -> &DMatrix<f64> {
        match c {
            Component::X => &self.a,
            Component::Y => &self.b,
            Component::Z => &self.c,
        }
    }

    pub fn nonlinear(&self, c: Component) -> &dyn Nonlinearity {
        match c {
            Component::X => self.f.as_ref(),
            Component::Y => self.g.as_ref(),
            Component::Z => self.h.as_ref(),
        }
    }

    pub fn check_dims(&self, u: &StateVector) -> Result<()> {
        for comp in [Component::X, Component::Y, Component::Z] {
            let got = u.component(comp).len();
            let expected = self.dims.of(comp);
            if got != expected {
                return Err(Error::Dimension {
                    component: comp,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Evaluates `(F(u), G(u), H(u))`.
    pub fn eval_nonlinear(&self, u: &StateVector) -> Result<StateVector> {
        self.check_dims(u)?;
        let flat = u.compose();
        let mut out = StateVector::zeros(self.dims);
        self.f.eval(&flat, out.x.as_mut_slice())?;
        self.g.eval(&flat, out.y.as_mut_slice())?;
        self.h.eval(&flat, out.z.as_mut_slice())?;
        Ok(out)
    }

    /// Right-hand side `(Ax + F(u), By + G(u), Cz + H(u))`.
    pub fn eval_rhs(&self, u: &StateVector) -> Result<StateVector> {
        let mut n = self.eval_nonlinear(u)?;
        n.x += &self.a * &u.x;
        n.y += &self.b * &u.y;
        n.z += &self.c * &u.z;
        Ok(n)
    }

    /// Jacobian of the right-hand side on the flat `[x, y, z]` coordinates.
    pub fn eval_jacobian(&self, u: &StateVector) -> Result<DMatrix<f64>> {
        self.check_dims(u)?;
        let d = self.dims;
        let n = d.total();
        let flat = u.compose();
        let mut jac = DMatrix::zeros(n, n);
        let offsets = [(0, d.n_x), (d.n_x, d.n_y), (d.n_x + d.n_y, d.n_z)];
        for (comp, (off, len)) in [Component::X, Component::Y, Component::Z].into_iter().zip(offsets) {
            if len == 0 {
                continue;
            }
            let mut block = DMatrix::zeros(len, n);
            self.nonlinear(comp).jacobian(&flat, &mut block)?;
            jac.view_mut((off, 0), (len, n)).copy_from(&block);
            let mut diag = jac.view_mut((off, off), (len, len));
            diag += self.linear_block(comp);
        }
        Ok(jac)
    }
}
