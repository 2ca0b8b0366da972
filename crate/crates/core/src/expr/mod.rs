//! Arithmetic expressions over the state variables `x1.., y1.., z1..`.
//!
//! Used to write the nonlinear terms in config files. Supports `+ - * / ^`,
//! unary minus, and `sin cos tanh exp`. Exponents must be constant.

mod cutoff;
mod diff;
mod lipschitz;
mod parse;

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::error::{Component, Result};
use crate::system::{Dims, Nonlinearity};

pub use cutoff::{apply_cutoff, CutoffMap, CutoffSpec};
pub use diff::differentiate;
pub use lipschitz::{estimate_deriv_lipschitz, estimate_lipschitz, LipschitzOptions, SampleBox};
pub use parse::{parse, ParseError};

/// A state variable, e.g. `y2` is `Var { component: Y, index: 1 }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    pub component: Component,
    pub index: usize,
}

impl Var {
    pub fn new(component: Component, index: usize) -> Self {
        Self { component, index }
    }

    /// Position in the flat `[x, y, z]` state.
    pub fn flat_index(&self, dims: Dims) -> usize {
        match self.component {
            Component::X => self.index,
            Component::Y => dims.n_x + self.index,
            Component::Z => dims.n_x + dims.n_y + self.index,
        }
    }

    /// Inverse of [`Var::flat_index`].
    pub fn from_flat(i: usize, dims: Dims) -> Self {
        if i < dims.n_x {
            Var::new(Component::X, i)
        } else if i < dims.n_x + dims.n_y {
            Var::new(Component::Y, i - dims.n_x)
        } else {
            Var::new(Component::Z, i - dims.n_x - dims.n_y)
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.component, self.index + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tanh,
    Exp,
}

impl Func {
    pub fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Exp => "exp",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            _ => return None,
        })
    }

    fn apply(&self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tanh => v.tanh(),
            Func::Exp => v.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Num(f64),
    Var(Var),
    Neg(Box<Expression>),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    /// Base raised to a variable-free exponent.
    Pow(Box<Expression>, Box<Expression>),
    Call(Func, Box<Expression>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-integer exponent {exponent} of negative base {base}")]
    NegativeBase { base: f64, exponent: f64 },
    #[error("variable {0} is out of range for the supplied state")]
    UnboundVariable(String),
}

impl Expression {
    pub fn num(v: f64) -> Self {
        Expression::Num(v)
    }

    pub fn var(component: Component, index: usize) -> Self {
        Expression::Var(Var::new(component, index))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expression::Num(v) if *v == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expression::Num(v) => Some(*v),
            _ => None,
        }
    }

    /// True if no variable occurs in the expression.
    pub fn is_constant(&self) -> bool {
        match self {
            Expression::Num(_) => true,
            Expression::Var(_) => false,
            Expression::Neg(e) | Expression::Call(_, e) => e.is_constant(),
            Expression::Add(a, b)
            | Expression::Sub(a, b)
            | Expression::Mul(a, b)
            | Expression::Div(a, b)
            | Expression::Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn vars(&self, out: &mut Vec<Var>) {
        match self {
            Expression::Num(_) => {}
            Expression::Var(v) => {
                if !out.contains(v) {
                    out.push(*v)
                }
            }
            Expression::Neg(e) | Expression::Call(_, e) => e.vars(out),
            Expression::Add(a, b)
            | Expression::Sub(a, b)
            | Expression::Mul(a, b)
            | Expression::Div(a, b)
            | Expression::Pow(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }

    /// Evaluates at a flat `[x, y, z]` state.
    pub fn eval(&self, u: &[f64], dims: Dims) -> Result<f64, EvalError> {
        Ok(match self {
            Expression::Num(v) => *v,
            Expression::Var(v) => {
                let i = v.flat_index(dims);
                *u.get(i).ok_or_else(|| EvalError::UnboundVariable(v.to_string()))?
            }
            Expression::Neg(e) => -e.eval(u, dims)?,
            Expression::Add(a, b) => a.eval(u, dims)? + b.eval(u, dims)?,
            Expression::Sub(a, b) => a.eval(u, dims)? - b.eval(u, dims)?,
            Expression::Mul(a, b) => a.eval(u, dims)? * b.eval(u, dims)?,
            Expression::Div(a, b) => {
                let num = a.eval(u, dims)?;
                let den = b.eval(u, dims)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                num / den
            }
            Expression::Pow(a, b) => {
                let base = a.eval(u, dims)?;
                let exponent = b.eval(u, dims)?;
                if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
                    if exponent < 0.0 && base == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    base.powi(exponent as i32)
                } else if base < 0.0 {
                    return Err(EvalError::NegativeBase { base, exponent });
                } else {
                    base.powf(exponent)
                }
            }
            Expression::Call(f, e) => f.apply(e.eval(u, dims)?),
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Expression::Add(..) | Expression::Sub(..) => 1,
            Expression::Mul(..) | Expression::Div(..) => 2,
            Expression::Neg(_) => 3,
            Expression::Pow(..) => 4,
            Expression::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
            Expression::Num(_) | Expression::Var(_) | Expression::Call(..) => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = self.precedence();
        let wrap = p < min;
        if wrap {
            f.write_str("(")?;
        }
        match self {
            Expression::Num(v) => write!(f, "{v}")?,
            Expression::Var(v) => write!(f, "{v}")?,
            Expression::Neg(e) => {
                f.write_str("-")?;
                e.fmt_prec(f, 3)?;
            }
            Expression::Add(a, b) => {
                a.fmt_prec(f, 1)?;
                f.write_str(" + ")?;
                b.fmt_prec(f, 2)?;
            }
            Expression::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                f.write_str(" - ")?;
                b.fmt_prec(f, 2)?;
            }
            Expression::Mul(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str("*")?;
                b.fmt_prec(f, 3)?;
            }
            Expression::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str("/")?;
                b.fmt_prec(f, 3)?;
            }
            Expression::Pow(a, b) => {
                a.fmt_prec(f, 5)?;
                f.write_str("^")?;
                b.fmt_prec(f, 5)?;
            }
            Expression::Call(func, e) => {
                write!(f, "{}(", func.name())?;
                e.fmt_prec(f, 0)?;
                f.write_str(")")?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// A vector of expressions with their symbolic gradients, evaluable as a [`Nonlinearity`].
#[derive(Debug, Clone)]
pub struct ExprMap {
    dims: Dims,
    exprs: Vec<Expression>,
    // grads[i][j] = d exprs[i] / d u_j
    grads: Vec<Vec<Expression>>,
}

impl ExprMap {
    pub fn new(exprs: Vec<Expression>, dims: Dims) -> Self {
        let n = dims.total();
        let grads = exprs
            .iter()
            .map(|e| {
                (0..n)
                    .map(|j| differentiate(e, Var::from_flat(j, dims)))
                    .collect()
            })
            .collect();
        Self { dims, exprs, grads }
    }

    /// Parses one expression per output component.
    pub fn parse_all<S: AsRef<str>>(sources: &[S], dims: Dims) -> Result<Self> {
        let exprs = sources
            .iter()
            .map(|s| parse(s.as_ref(), dims))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(exprs, dims))
    }

    pub fn exprs(&self) -> &[Expression] {
        &self.exprs
    }

    pub fn gradient(&self, i: usize) -> &[Expression] {
        &self.grads[i]
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
}

impl Nonlinearity for ExprMap {
    fn input_dim(&self) -> usize {
        self.dims.total()
    }

    fn output_dim(&self) -> usize {
        self.exprs.len()
    }

    fn eval(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(u, self.dims)?;
        }
        Ok(())
    }

    fn jacobian(&self, u: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        for (i, row) in self.grads.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                out[(i, j)] = d.eval(u, self.dims)?;
            }
        }
        Ok(())
    }
}
