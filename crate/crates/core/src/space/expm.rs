use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `exp(tM)`, via nalgebra's Padé scaling-and-squaring.
pub fn matrix_exp(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "matrix exponential of a non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scaled = m * t;
    if !scaled.iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow { t });
    }
    let e = scaled.exp();
    if e.iter().all(|v| v.is_finite()) {
        Ok(e)
    } else {
        Err(Error::Overflow { t })
    }
}
