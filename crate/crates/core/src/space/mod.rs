//! Discretized trajectory space: symmetric time grids, sigma-weighted sup norms,
//! matrix exponentials and the half-line integrals of the Lyapunov-Perron operator.

mod expm;
mod grid;
mod quadrature;

pub use expm::matrix_exp;
pub use grid::{sigma_weight, TimeGrid, Trajectory};
pub use quadrature::{
    sweep, tail_estimate, weighted_integral, IntegralEstimate, IntegralKind, Propagators, TailBound, TailModel,
};
