use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::system::{induced_inf_norm, Nonlinearity};

/// Axis-aligned box of per-variable intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidArgument("sample box needs lo <= hi per variable".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `[-half, half]^n`.
    pub fn cube(n: usize, half: f64) -> Self {
        Self {
            lo: vec![-half; n],
            hi: vec![half; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, other: &SampleBox) -> bool {
        self.lo.iter().zip(&other.lo).all(|(a, b)| a <= b) && self.hi.iter().zip(&other.hi).all(|(a, b)| a >= b)
    }

    /// Center, corners (for dimension <= 10), then `n_random` uniform points.
    pub(crate) fn sample_points(&self, n_random: usize, seed: u64) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut pts = Vec::with_capacity(n_random + (1 << n.min(10)) + 1);
        pts.push(self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect());
        if n <= 10 {
            for mask in 0..(1usize << n) {
                pts.push(
                    (0..n)
                        .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                        .collect(),
                );
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n_random {
            pts.push(
                (0..n)
                    .map(|i| {
                        let t: f64 = rng.random();
                        self.lo[i] + t * (self.hi[i] - self.lo[i])
                    })
                    .collect(),
            );
        }
        pts
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LipschitzOptions {
    pub samples: usize,
    pub safety_factor: f64,
    pub seed: u64,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        Self {
            samples: 4096,
            safety_factor: 1.1,
            seed: 0,
        }
    }
}

/// Sampled sup of the induced infinity norm of the Jacobian over `bx`, times the safety factor.
pub fn estimate_lipschitz(map: &dyn Nonlinearity, bx: &SampleBox, opts: &LipschitzOptions) -> Result<f64> {
    check_args(map, bx, opts)?;
    let mut jac = DMatrix::zeros(map.output_dim(), map.input_dim());
    let mut sup: f64 = 0.0;
    for p in bx.sample_points(opts.samples, opts.seed) {
        map.jacobian(&p, &mut jac)?;
        sup = sup.max(induced_inf_norm(&jac));
    }
    Ok(sup * opts.safety_factor)
}

/// Sampled Lipschitz constant of the Jacobian itself (the `gamma` constants).
///
/// Bounds `|DF(u1) - DF(u2)| <= sum_k sup |d_k DF| * |u1 - u2|_inf`, with each
/// `d_k DF` taken by central differences of the Jacobian.
pub fn estimate_deriv_lipschitz(map: &dyn Nonlinearity, bx: &SampleBox, opts: &LipschitzOptions) -> Result<f64> {
    check_args(map, bx, opts)?;
    const H: f64 = 1e-4;
    let (m, n) = (map.output_dim(), map.input_dim());
    let mut jp = DMatrix::zeros(m, n);
    let mut jm = DMatrix::zeros(m, n);
    let mut sup: f64 = 0.0;
    for p in bx.sample_points(opts.samples, opts.seed) {
        let mut total = 0.0;
        let mut q = p.clone();
        for k in 0..n {
            q[k] = p[k] + H;
            map.jacobian(&q, &mut jp)?;
            q[k] = p[k] - H;
            map.jacobian(&q, &mut jm)?;
            q[k] = p[k];
            total += induced_inf_norm(&((&jp - &jm) / (2.0 * H)));
        }
        sup = sup.max(total);
    }
    Ok(sup * opts.safety_factor)
}

fn check_args(map: &dyn Nonlinearity, bx: &SampleBox, opts: &LipschitzOptions) -> Result<()> {
    if opts.samples < 1 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    if bx.dim() != map.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "sample box has {} variables, map takes {}",
            bx.dim(),
            map.input_dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ExprMap;
    use crate::system::Dims;

    fn map(src: &str) -> ExprMap {
        ExprMap::parse_all(&[src], Dims::new(1, 1, 0)).unwrap()
    }

    #[test]
    fn damped_sine() {
        let b = SampleBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let est = estimate_lipschitz(&map("0.1*sin(x1)"), &b, &LipschitzOptions::default()).unwrap();
        assert!((est - 0.11).abs() < 1e-12, "{est}");
    }

    #[test]
    fn zero_map() {
        let b = SampleBox::cube(2, 1.0);
        assert_eq!(estimate_lipschitz(&map("0"), &b, &LipschitzOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn square_on_half_interval() {
        let b = SampleBox::new(vec![-1.0, -0.5], vec![1.0, 0.5]).unwrap();
        let est = estimate_lipschitz(&map("y1^2"), &b, &LipschitzOptions::default()).unwrap();
        assert!((est - 1.1).abs() < 1e-12, "{est}");
    }

    #[test]
    fn gamma_of_square() {
        // D(y^2) = 2y, Lipschitz 2
        let b = SampleBox::cube(2, 1.0);
        let est = estimate_deriv_lipschitz(&map("y1^2"), &b, &LipschitzOptions::default()).unwrap();
        assert!((est - 2.2).abs() < 1e-6, "{est}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let opts = LipschitzOptions { samples: 0, ..Default::default() };
        assert!(estimate_lipschitz(&map("y1"), &SampleBox::cube(2, 1.0), &opts).is_err());
        assert!(estimate_lipschitz(&map("y1"), &SampleBox::cube(3, 1.0), &LipschitzOptions::default()).is_err());
        assert!(SampleBox::new(vec![1.0], vec![0.0]).is_err());
    }
}
