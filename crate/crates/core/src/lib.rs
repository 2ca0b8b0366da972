pub mod conditions;
pub mod config;
pub mod error;
pub mod expr;
pub mod lyapunov_perron;
pub mod regularity;
pub mod space;
pub mod system;
pub mod validation;

pub use error::{Component, Error, Result};
