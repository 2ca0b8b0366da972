use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conditions::SigmaParameters;
use crate::error::{Error, Result};
use crate::system::{Dims, StateVector};

/// Uniform grid `t_i = (i - n/2) * h` on `[-t_max, t_max]`, `h = 2 t_max / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("T_max must be positive, got {t_max}")));
        }
        if n_steps == 0 || n_steps % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_steps must be even and positive, got {n_steps}"
            )));
        }
        Ok(Self { t_max, n_steps })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        2.0 * self.t_max / self.n_steps as f64
    }

    /// Index of the node `t = 0`.
    pub fn mid(&self) -> usize {
        self.n_steps / 2
    }

    pub fn node(&self, i: usize) -> f64 {
        (i as f64 - self.mid() as f64) * self.step()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    /// Bracketing interval `(i, theta)` with `t = t_i + theta * h`, `theta` in `[0, 1)`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if !(t.abs() <= self.t_max * (1.0 + 1e-12)) {
            return Err(Error::OutOfGrid { t, t_max: self.t_max });
        }
        let pos = (t / self.step() + self.mid() as f64).clamp(0.0, self.n_steps as f64);
        let i = (pos.floor() as usize).min(self.n_steps - 1);
        Ok((i, pos - i as f64))
    }
}

/// `e^{-sigma(t) t}`.
pub fn sigma_weight(sigma: &SigmaParameters, t: f64) -> f64 {
    (-sigma.at(t) * t).exp()
}

/// A candidate trajectory sampled on every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<StateVector>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: Vec<StateVector>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t: grid.node(i) });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid, dims: Dims) -> Self {
        Self {
            grid,
            values: vec![StateVector::zeros(dims); grid.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.values[0].dims()
    }

    /// The value at `t = 0`.
    pub fn at_origin(&self) -> &StateVector {
        &self.values[self.grid.mid()]
    }

    /// `sup_i e^{-sigma(t_i) t_i} |phi(t_i)|`.
    pub fn sigma_norm(&self, sigma: &SigmaParameters) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| sigma_weight(sigma, self.grid.node(i)) * v.norm())
            .fold(0.0, f64::max)
    }

    /// `|self - other|_sigma`.
    pub fn distance(&self, other: &Trajectory, sigma: &SigmaParameters) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| sigma_weight(sigma, self.grid.node(i)) * a.sub(b).norm())
            .fold(0.0, f64::max)
    }

    /// Linear interpolation between bracketing nodes; exact at nodes.
    pub fn interpolate(&self, t: f64) -> Result<StateVector> {
        let (i, theta) = self.grid.locate(t)?;
        if theta == 0.0 {
            return Ok(self.values[i].clone());
        }
        let a = &self.values[i];
        let b = &self.values[i + 1];
        Ok(a.scale(1.0 - theta).add(&b.scale(theta)))
    }

    /// CSV with columns `t, x_1.., y_1.., z_1..`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.dims();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d.n_x).map(|k| format!("x_{k}")));
        header.extend((1..=d.n_y).map(|k| format!("y_{k}")));
        header.extend((1..=d.n_z).map(|k| format!("z_{k}")));
        writeln!(w, "{}", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let mut row = vec![format!("{:e}", self.grid.node(i))];
            row.extend(v.compose().iter().map(|c| format!("{c:e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn sigma() -> SigmaParameters {
        SigmaParameters::new(-0.5, 0.5)
    }

    fn dims() -> Dims {
        Dims::new(1, 1, 0)
    }

    fn sv(x: f64, y: f64) -> StateVector {
        StateVector::new(DVector::from_vec(vec![x]), DVector::from_vec(vec![y]), DVector::zeros(0))
    }

    #[test]
    fn grid_is_symmetric() {
        let g = TimeGrid::new(3.0, 8).unwrap();
        assert_eq!(g.node(g.mid()), 0.0);
        for i in 0..g.len() {
            assert_eq!(g.node(i), -g.node(g.n_steps() - i));
        }
        assert!((g.node(0) + 3.0).abs() < 1e-15);
        assert!(TimeGrid::new(3.0, 7).is_err());
        assert!(TimeGrid::new(-1.0, 8).is_err());
    }

    #[test]
    fn constant_has_norm_at_origin() {
        let g = TimeGrid::new(10.0, 100).unwrap();
        let phi = Trajectory::new(g, vec![sv(0.3, -0.7); g.len()]).unwrap();
        assert_eq!(phi.sigma_norm(&sigma()), 0.7);
        assert_eq!(Trajectory::zeros(g, dims()).sigma_norm(&sigma()), 0.0);
    }

    #[test]
    fn single_spike() {
        let g = TimeGrid::new(10.0, 100).unwrap();
        let mut phi = Trajectory::zeros(g, dims());
        let i = g.mid() + 20;
        phi.values[i] = sv(5.0, 0.0);
        let t1 = g.node(i);
        assert!((phi.sigma_norm(&sigma()) - 5.0 * (-0.5 * t1).exp()).abs() < 1e-14);
    }

    #[test]
    fn interpolation() {
        let g = TimeGrid::new(2.0, 16).unwrap();
        let linear = Trajectory::new(g, g.nodes().map(|t| sv(2.0 * t - 1.0, t)).collect()).unwrap();
        let i = 5;
        assert_eq!(linear.interpolate(g.node(i)).unwrap(), linear.values[i]);
        let mid = 0.5 * (g.node(3) + g.node(4));
        let v = linear.interpolate(mid).unwrap();
        assert!((v.x[0] - (2.0 * mid - 1.0)).abs() < 1e-14);

        let h = g.step();
        let quad = Trajectory::new(g, g.nodes().map(|t| sv(t * t, 0.0)).collect()).unwrap();
        for k in 0..g.n_steps() {
            let m = g.node(k) + 0.5 * h;
            let err = (quad.interpolate(m).unwrap().x[0] - m * m).abs();
            assert!(err <= h * h / 4.0 + 1e-14);
        }
        assert!(matches!(linear.interpolate(2.5), Err(Error::OutOfGrid { .. })));
    }

    #[test]
    fn csv_layout() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let phi = Trajectory::new(g, vec![sv(1.0, 2.0); 3]).unwrap();
        let mut buf = Vec::new();
        phi.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,y_1");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("0e0,"));
    }

    fn traj_strategy(g: TimeGrid) -> impl Strategy<Value = Trajectory> {
        prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), g.len())
            .prop_map(move |v| Trajectory::new(g, v.into_iter().map(|(a, b)| sv(a, b)).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn sigma_norm_is_a_norm(
            (a, b) in (traj_strategy(TimeGrid::new(4.0, 32).unwrap()), traj_strategy(TimeGrid::new(4.0, 32).unwrap())),
            c in -3.0f64..3.0,
        ) {
            let s = sigma();
            let scaled = Trajectory::new(a.grid, a.values.iter().map(|v| v.scale(c)).collect()).unwrap();
            prop_assert!((scaled.sigma_norm(&s) - c.abs() * a.sigma_norm(&s)).abs() <= 1e-12 * (1.0 + a.sigma_norm(&s)));
            let sum = Trajectory::new(a.grid, a.values.iter().zip(&b.values).map(|(p, q)| p.add(q)).collect()).unwrap();
            prop_assert!(sum.sigma_norm(&s) <= a.sigma_norm(&s) + b.sigma_norm(&s) + 1e-12);
        }
    }
}
