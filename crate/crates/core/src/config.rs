//! JSON problem description and assembly of a ready-to-solve problem.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conditions::{
    check_conditions, choose_sigma, delta_phi, derive_trichotomy, verify_trichotomy, DeriveOptions, GapReport,
    SigmaParameters, TrichotomyConstants,
};
use crate::error::{Error, Result};
use crate::expr::{
    apply_cutoff, estimate_deriv_lipschitz, estimate_lipschitz, CutoffSpec, ExprMap, LipschitzOptions, SampleBox,
};
use crate::lyapunov_perron::{default_t_max, FixedPointConfig, Operator};
use crate::space::TimeGrid;
use crate::system::{Dims, LipschitzTriple, Nonlinearity, SystemSpec};
use crate::validation::spotcheck_a2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
}

/// A matrix as a row-major flat array or as an array of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixInput {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixInput {
    fn to_matrix(&self, n: usize, path: &str) -> Result<DMatrix<f64>> {
        let flat: Vec<f64> = match self {
            MatrixInput::Flat(v) => v.clone(),
            MatrixInput::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config { path: path.into(), message: format!("expected {n} rows of length {n}") });
                }
                rows.concat()
            }
        };
        if flat.len() != n * n {
            return Err(Error::Config {
                path: path.into(),
                message: format!("expected {} entries for a {n}x{n} matrix, got {}", n * n, flat.len()),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config { path: path.into(), message: "entries must be finite".into() });
        }
        Ok(DMatrix::from_row_slice(n, n, &flat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linear {
    #[serde(rename = "A", default)]
    pub a: Option<MatrixInput>,
    #[serde(rename = "B")]
    pub b: MatrixInput,
    #[serde(rename = "C", default)]
    pub c: Option<MatrixInput>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nonlinear {
    #[serde(rename = "F", default)]
    pub f: Vec<String>,
    #[serde(rename = "G", default)]
    pub g: Vec<String>,
    #[serde(rename = "H", default)]
    pub h: Vec<String>,
}

/// Overrides; anything absent is derived.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    pub alpha_x: Option<f64>,
    pub alpha_y: Option<f64>,
    pub beta_y: Option<f64>,
    pub beta_z: Option<f64>,
    #[serde(rename = "K_x")]
    pub k_x: Option<f64>,
    #[serde(rename = "K_y")]
    pub k_y: Option<f64>,
    #[serde(rename = "K_z")]
    pub k_z: Option<f64>,
    pub delta_x: Option<f64>,
    pub delta_y: Option<f64>,
    pub delta_z: Option<f64>,
    pub gamma_x: Option<f64>,
    pub gamma_y: Option<f64>,
    pub gamma_z: Option<f64>,
    pub sigma_n: Option<f64>,
    pub sigma_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cutoff {
    pub rho: f64,
    pub width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    #[serde(rename = "T_max")]
    pub t_max: Option<f64>,
    pub n_steps: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub tail_tol: f64,
    pub seed: u64,
    pub rate_slack: f64,
    pub a_priori_check: bool,
    pub allow_unverified: bool,
    pub eta: Option<f64>,
    #[serde(rename = "T_ver")]
    pub t_ver: f64,
    pub verification_points: usize,
    pub lipschitz_samples: usize,
    pub safety_factor: f64,
    /// Half-width of the sampling cube when there is no cutoff.
    pub lipschitz_box: f64,
    pub a2_pairs: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            t_max: None,
            n_steps: 4096,
            tol: 1e-10,
            max_iters: 200,
            tail_tol: 1e-8,
            seed: 0,
            rate_slack: 0.05,
            a_priori_check: true,
            allow_unverified: false,
            eta: Some(0.05),
            t_ver: 50.0,
            verification_points: 512,
            lipschitz_samples: 4096,
            safety_factor: 1.1,
            lipschitz_box: 1.0,
            a2_pairs: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dimensions: Dimensions,
    pub linear: Linear,
    #[serde(default)]
    pub nonlinear: Nonlinear,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub cutoff: Option<Cutoff>,
    #[serde(default)]
    pub numerics: Numerics,
}

impl ConfigFile {
    /// Parses JSON, reporting the failing path and position.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config {
                path: if path.is_empty() || path == "." { "<root>".into() } else { path },
                message: format!("{inner} (line {}, column {})", inner.line(), inner.column()),
            }
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }
}

/// Everything derived from a config: the system, constants, sigma and the gap report.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: SystemSpec,
    pub tc: TrichotomyConstants,
    /// `None` when no admissible sigma exists.
    pub sigma: Option<SigmaParameters>,
    pub report: GapReport,
    pub numerics: Numerics,
    pub cutoff: Option<CutoffSpec>,
    pub sample_box: SampleBox,
}

fn build_map(sources: &[String], rows: usize, dims: Dims, name: &str, cutoff: Option<CutoffSpec>) -> Result<Arc<dyn Nonlinearity>> {
    if sources.len() != rows {
        return Err(Error::Config {
            path: format!("nonlinear.{name}"),
            message: format!("expected {rows} expressions, got {}", sources.len()),
        });
    }
    let mut exprs = Vec::with_capacity(rows);
    for (i, s) in sources.iter().enumerate() {
        let e = crate::expr::parse(s, dims).map_err(|e| Error::Config {
            path: format!("nonlinear.{name}[{i}]"),
            message: e.to_string(),
        })?;
        exprs.push(e);
    }
    let map = ExprMap::new(exprs, dims);
    let origin = vec![0.0; dims.total()];
    let mut at_origin = vec![0.0; rows];
    map.eval(&origin, &mut at_origin)?;
    if at_origin.iter().any(|v| *v != 0.0) {
        return Err(Error::Config {
            path: format!("nonlinear.{name}"),
            message: "nonlinear terms must vanish at the origin".into(),
        });
    }
    let map: Arc<dyn Nonlinearity> = Arc::new(map);
    Ok(match cutoff {
        Some(c) => Arc::new(apply_cutoff(map, c)),
        None => map,
    })
}

fn finite_nonneg(v: Option<f64>, path: &str) -> Result<Option<f64>> {
    match v {
        Some(x) if !(x >= 0.0 && x.is_finite()) => {
            Err(Error::Config { path: path.into(), message: format!("must be finite and nonnegative, got {x}") })
        }
        _ => Ok(v),
    }
}

impl Problem {
    pub fn from_config(cfg: &ConfigFile) -> Result<Self> {
        let d = &cfg.dimensions;
        let dims = Dims::new(d.n_x, d.n_y, d.n_z);
        if dims.n_y == 0 {
            return Err(Error::Config { path: "dimensions.n_y".into(), message: "the center block needs n_y >= 1".into() });
        }
        let num = cfg.numerics.clone();
        if num.n_steps == 0 || num.n_steps % 2 != 0 {
            return Err(Error::Config { path: "numerics.n_steps".into(), message: "must be even and positive".into() });
        }
        if !(num.tol > 0.0) || num.max_iters == 0 || !(num.tail_tol > 0.0) {
            return Err(Error::Config {
                path: "numerics".into(),
                message: "tol and tail_tol must be positive and max_iters at least 1".into(),
            });
        }
        let matrix = |m: &Option<MatrixInput>, n: usize, path: &str| -> Result<DMatrix<f64>> {
            match m {
                Some(m) => m.to_matrix(n, path),
                None if n == 0 => Ok(DMatrix::zeros(0, 0)),
                None => Err(Error::Config { path: path.into(), message: "missing".into() }),
            }
        };
        let a = matrix(&cfg.linear.a, dims.n_x, "linear.A")?;
        let b = cfg.linear.b.to_matrix(dims.n_y, "linear.B")?;
        let c = matrix(&cfg.linear.c, dims.n_z, "linear.C")?;

        let cutoff = match &cfg.cutoff {
            Some(cut) => Some(
                CutoffSpec::new(cut.rho, cut.width.unwrap_or(0.5 * cut.rho))
                    .map_err(|e| Error::Config { path: "cutoff".into(), message: e.to_string() })?,
            ),
            None => None,
        };
        let nl = &cfg.nonlinear;
        let zeros = |n: usize| vec!["0".to_string(); n];
        let pick = |v: &Vec<String>, n: usize| if v.is_empty() { zeros(n) } else { v.clone() };
        let f = build_map(&pick(&nl.f, dims.n_x), dims.n_x, dims, "F", cutoff)?;
        let g = build_map(&pick(&nl.g, dims.n_y), dims.n_y, dims, "G", cutoff)?;
        let h = build_map(&pick(&nl.h, dims.n_z), dims.n_z, dims, "H", cutoff)?;
        let mut spec = SystemSpec::new(dims, a, b, c, f, g, h)?;

        let k = &cfg.constants;
        let half = cutoff.map(|c| c.support_radius()).unwrap_or(num.lipschitz_box);
        let sample_box = SampleBox::cube(dims.total(), half);
        let opts = LipschitzOptions { samples: num.lipschitz_samples, safety_factor: num.safety_factor, seed: num.seed };
        let est = |m: &dyn Nonlinearity, given: Option<f64>, path: &str| -> Result<f64> {
            match finite_nonneg(given, path)? {
                Some(v) => Ok(v),
                None if m.output_dim() == 0 => Ok(0.0),
                None => estimate_lipschitz(m, &sample_box, &opts),
            }
        };
        let delta = LipschitzTriple::new(
            est(spec.f.as_ref(), k.delta_x, "constants.delta_x")?,
            est(spec.g.as_ref(), k.delta_y, "constants.delta_y")?,
            est(spec.h.as_ref(), k.delta_z, "constants.delta_z")?,
        );
        let gest = |m: &dyn Nonlinearity, given: Option<f64>, path: &str| -> Result<f64> {
            match finite_nonneg(given, path)? {
                Some(v) => Ok(v),
                None if m.output_dim() == 0 => Ok(0.0),
                None => estimate_deriv_lipschitz(m, &sample_box, &opts),
            }
        };
        let gamma = LipschitzTriple::new(
            gest(spec.f.as_ref(), k.gamma_x, "constants.gamma_x")?,
            gest(spec.g.as_ref(), k.gamma_y, "constants.gamma_y")?,
            gest(spec.h.as_ref(), k.gamma_z, "constants.gamma_z")?,
        );
        spec = spec.with_lipschitz(delta).with_deriv_lipschitz(gamma);

        let dopts = DeriveOptions { t_ver: num.t_ver, points: num.verification_points, eta: num.eta, k_max: 1e6 };
        let derived = derive_trichotomy(&spec.a, &spec.b, &spec.c, &dopts);
        let (tc, a1_error) = match derived {
            Ok(tc) => (tc, None),
            Err(Error::RateViolation { kind, rate, k_max }) => {
                let fallback = TrichotomyConstants {
                    alpha_x: if dims.n_x == 0 { f64::NEG_INFINITY } else { f64::NAN },
                    alpha_y: f64::NAN,
                    beta_y: f64::NAN,
                    beta_z: if dims.n_z == 0 { f64::INFINITY } else { f64::NAN },
                    k_x: 1.0,
                    k_y: 1.0,
                    k_z: 1.0,
                };
                (fallback, Some(Error::RateViolation { kind, rate, k_max }.to_string()))
            }
            Err(e) => return Err(e),
        };
        let tc = TrichotomyConstants {
            alpha_x: k.alpha_x.unwrap_or(tc.alpha_x),
            alpha_y: k.alpha_y.unwrap_or(tc.alpha_y),
            beta_y: k.beta_y.unwrap_or(tc.beta_y),
            beta_z: k.beta_z.unwrap_or(tc.beta_z),
            k_x: k.k_x.unwrap_or(tc.k_x),
            k_y: k.k_y.unwrap_or(tc.k_y),
            k_z: k.k_z.unwrap_or(tc.k_z),
        };
        for (v, p) in [(tc.k_x, "constants.K_x"), (tc.k_y, "constants.K_y"), (tc.k_z, "constants.K_z")] {
            if !(v >= 1.0) {
                return Err(Error::Config { path: p.into(), message: format!("K must be at least 1, got {v}") });
            }
        }

        let a1_ratio = if tc.alpha_y.is_nan() || tc.beta_y.is_nan() || tc.alpha_x.is_nan() || tc.beta_z.is_nan() {
            f64::INFINITY
        } else {
            verify_trichotomy(&spec.a, &spec.b, &spec.c, &tc, &dopts)?
        };
        let a1_ok = a1_ratio <= 1.0 + 1e-9 && tc.ordered();

        let sigma = match (k.sigma_n, k.sigma_p) {
            (Some(n), Some(p)) => Some(SigmaParameters::new(n, p)),
            (n, p) => match choose_sigma(&tc, &delta) {
                Ok(s) => Some(SigmaParameters::new(n.unwrap_or(s.n), p.unwrap_or(s.p))),
                Err(e) => {
                    log::warn!("{e}");
                    None
                }
            },
        };
        let mut report = match &sigma {
            Some(s) => delta_phi(&tc, &delta, s),
            None => {
                let mut r = check_conditions(&tc, &delta);
                r.messages.push("no admissible sigma: the C2 intervals are empty".into());
                r
            }
        };
        let a1_msg = a1_error.unwrap_or_else(|| {
            format!("trichotomy bounds fail on the verification grid (worst ratio {a1_ratio})")
        });
        report.set_a1(a1_ok, a1_msg);
        let a2 = spotcheck_a2(&spec, &sample_box, num.a2_pairs, num.seed)?;
        report.set_a2(
            !a2.violated,
            format!(
                "A2 spot-check quotients ({}, {}, {}) exceed the declared delta",
                a2.max_quotient.x, a2.max_quotient.y, a2.max_quotient.z
            ),
        );
        Ok(Self { spec, tc, sigma, report, numerics: num, cutoff, sample_box })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_config(&ConfigFile::from_json(text)?)
    }

    pub fn fixed_point_config(&self) -> FixedPointConfig {
        FixedPointConfig {
            tol: self.numerics.tol,
            max_iters: self.numerics.max_iters,
            a_priori_check: self.numerics.a_priori_check,
            rate_slack: self.numerics.rate_slack,
            allow_unverified: self.numerics.allow_unverified,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        self.grid_with(self.numerics.n_steps)
    }

    pub fn grid_with(&self, n_steps: usize) -> Result<TimeGrid> {
        let sigma = self.require_sigma()?;
        let t = self.numerics.t_max.unwrap_or_else(|| default_t_max(&self.tc, &sigma));
        TimeGrid::new(t, n_steps)
    }

    fn require_sigma(&self) -> Result<SigmaParameters> {
        self.sigma.ok_or_else(|| Error::ConditionsNotMet("no admissible sigma exists (A3 fails)".into()))
    }

    /// The operator on the default grid, refusing to build unless the conditions pass
    /// or unverified iteration was requested.
    pub fn operator(&self) -> Result<Operator> {
        self.operator_with(self.numerics.n_steps)
    }

    pub fn operator_with(&self, n_steps: usize) -> Result<Operator> {
        if !self.report.passes() && !self.numerics.allow_unverified {
            return Err(Error::ConditionsNotMet(self.report.messages.join("; ")));
        }
        let sigma = self.require_sigma()?;
        Operator::new(self.spec.clone(), self.tc, sigma, self.grid_with(n_steps)?, self.numerics.tail_tol)
    }

    /// Plateau radius of the cutoff, if any.
    pub fn plateau(&self) -> Option<f64> {
        self.cutoff.map(|c| c.rho)
    }

    pub fn y_vector(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.spec.dims.n_y {
            return Err(Error::InvalidArgument(format!("y0 needs {} entries, got {}", self.spec.dims.n_y, v.len())));
        }
        Ok(DVector::from_column_slice(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REFERENCE: &str = r#"{
        "dimensions": {"n_x": 1, "n_y": 1, "n_z": 1},
        "linear": {"A": [[-1]], "B": [0], "C": [1]},
        "nonlinear": {"F": ["0.1*sin(y1)"], "G": ["0.1*sin(y1)"], "H": ["0.1*sin(y1)"]},
        "constants": {"delta_x": 0.1, "delta_y": 0.1, "delta_z": 0.1, "sigma_n": -0.5, "sigma_p": 0.5}
    }"#;

    #[test]
    fn reference_constants() {
        let p = Problem::from_json(REFERENCE).unwrap();
        assert_eq!(p.report.delta_phi, Some(0.2));
        assert!((p.report.lipschitz_bound.unwrap() - 0.2f64.exp()).abs() < 1e-12);
        assert_eq!(p.tc.k_x, 1.0);
        assert_eq!((p.tc.alpha_x, p.tc.beta_z), (-1.0, 1.0));
        assert!(p.report.passes(), "{:?}", p.report);
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = REFERENCE.replace("\"sigma_p\"", "\"sigma_q\"");
        match ConfigFile::from_json(&text) {
            Err(Error::Config { path, message }) => {
                assert!(path.starts_with("constants"), "{path}");
                assert!(message.contains("sigma_q"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        match ConfigFile::from_json("{\n  \"dimensions\": {\"n_x\": 1,,}\n}") {
            Err(Error::Config { message, .. }) => assert!(message.contains("line 2"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arity_and_parse_errors() {
        let text = REFERENCE.replace("[\"0.1*sin(y1)\"], \"G\"", "[\"0.1*sin(y1)\", \"0\"], \"G\"");
        assert!(matches!(Problem::from_json(&text), Err(Error::Config { path, .. }) if path == "nonlinear.F"));
        let text = REFERENCE.replace("\"F\": [\"0.1*sin(y1)\"]", "\"F\": [\"0.1*sin(w1)\"]");
        assert!(matches!(Problem::from_json(&text), Err(Error::Config { path, .. }) if path == "nonlinear.F[0]"));
        let text = REFERENCE.replace("\"C\": [1]", "\"C\": [1, 2]");
        assert!(matches!(Problem::from_json(&text), Err(Error::Config { path, .. }) if path == "linear.C"));
        let text = REFERENCE.replace("\"F\": [\"0.1*sin(y1)\"]", "\"F\": [\"1 + y1\"]");
        assert!(matches!(Problem::from_json(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn inflated_delta_fails_a3() {
        let text = REFERENCE.replace("\"delta_x\": 0.1, \"delta_y\": 0.1", "\"delta_x\": 0.6, \"delta_y\": 0.6");
        let p = Problem::from_json(&text).unwrap();
        assert!(!p.report.flags.a3);
        assert!(!p.report.passes());
        assert!(p.operator().is_err());
    }

    #[test]
    fn derived_sigma_and_estimated_delta() {
        let text = r#"{
            "dimensions": {"n_x": 1, "n_y": 1, "n_z": 0},
            "linear": {"A": [-1], "B": [0]},
            "nonlinear": {"F": ["0.2*sin(y1)"], "G": ["0.1*tanh(x1)"]}
        }"#;
        let p = Problem::from_json(text).unwrap();
        assert!((p.spec.lipschitz.x - 0.22).abs() < 1e-9);
        assert!(p.report.passes(), "{:?}", p.report);
        assert!(p.operator_with(256).is_ok());
    }
}
