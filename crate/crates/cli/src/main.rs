use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lypmfd::config::{ConfigFile, Problem};
use lypmfd::lyapunov_perron::{sample_manifold, solve_fixed_point};
use lypmfd::regularity::{fd_jacobian, solve_t1_fixed_point};
use lypmfd::validation::{validate, ValidationOptions};
use lypmfd::Error;
use nalgebra::{DMatrix, DVector};
use serde_json::json;

const EXIT_CONDITIONS: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "lypmfd", version, about = "Center manifolds by Lyapunov-Perron iteration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON problem description.
    #[arg(long)]
    config: PathBuf,
    /// Overrides numerics.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Iterate even when the gap conditions fail.
    #[arg(long)]
    allow_unverified: bool,
    /// Overrides numerics.n_steps.
    #[arg(long)]
    n_steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Derive the constants and report every condition.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Compute Phi(y0).
    Solve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated center coordinates.
        #[arg(long, allow_hyphen_values = true)]
        y0: String,
        /// Write the fixed-point trajectory as CSV.
        #[arg(long)]
        dump_trajectory: Option<PathBuf>,
    },
    /// Solve on a uniform grid of the center space.
    Sample {
        #[command(flatten)]
        common: Common,
        /// `lo:hi:n`, applied to every center coordinate.
        #[arg(long, allow_hyphen_values = true, default_value = "-0.3:0.3:9")]
        grid: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also compute DPhi at every point.
        #[arg(long)]
        jacobian: bool,
    },
    /// DPhi(y0) with a finite-difference cross-check.
    Jacobian {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        y0: String,
        #[arg(long, default_value_t = 1e-4)]
        h_fd: f64,
    },
    /// Run the validation suite around y0.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        y0: String,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConditionsNotMet(_) | Error::EmptySigmaInterval { .. } | Error::RateViolation { .. } => EXIT_CONDITIONS,
        Error::Config { .. } | Error::Parse(_) | Error::Dimension { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn load(common: &Common) -> Result<Problem, Error> {
    let mut cfg = ConfigFile::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.numerics.seed = seed;
    }
    if let Some(n) = common.n_steps {
        cfg.numerics.n_steps = n;
    }
    cfg.numerics.allow_unverified |= common.allow_unverified;
    let problem = Problem::from_config(&cfg)?;
    if !problem.report.passes() {
        for m in &problem.report.messages {
            log::warn!("{m}");
        }
    }
    Ok(problem)
}

fn parse_vector(s: &str) -> Result<Vec<f64>, Error> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad number {p:?}: {e}"))))
        .collect()
}

fn parse_grid(s: &str, dim: usize) -> Result<Vec<DVector<f64>>, Error> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidArgument(format!("grid must be lo:hi:n, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || !(lo <= hi) {
        return Err(bad());
    }
    let axis: Vec<f64> = if n == 1 {
        vec![lo]
    } else {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let mut points = vec![Vec::new()];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|p| axis.iter().map(move |&a| [p.clone(), vec![a]].concat()))
            .collect();
    }
    Ok(points.into_iter().map(DVector::from_vec).collect())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values always serialize"));
}

fn io_error(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Config { path: path.display().to_string(), message: e.to_string() }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Check { common } => {
            let p = load(&common)?;
            emit(&serde_json::to_value(&p.report).expect("report serializes"));
            Ok(if p.report.passes() { 0 } else { EXIT_CONDITIONS })
        }
        Command::Solve { common, y0, dump_trajectory } => {
            let p = load(&common)?;
            let y0 = p.y_vector(&parse_vector(&y0)?)?;
            let op = p.operator()?;
            let sol = solve_fixed_point(&op, &y0, &p.fixed_point_config())?;
            if let Some(path) = dump_trajectory {
                let f = File::create(&path).map_err(|e| io_error(&path, e))?;
                sol.phi.write_csv(BufWriter::new(f)).map_err(|e| io_error(&path, e))?;
            }
            emit(&json!({
                "y0": vec_of(&y0),
                "phi_x": vec_of(&sol.phi_x),
                "phi_z": vec_of(&sol.phi_z),
                "iterations": sol.iterations,
                "final_step_norm": sol.final_step_norm,
                "measured_rates": sol.measured_rates,
                "max_rate": sol.max_rate(),
                "delta_phi": op.delta_phi(),
                "tail_estimate": sol.tail_estimate,
                "verified": p.report.passes(),
            }));
            Ok(0)
        }
        Command::Sample { common, grid, csv, jacobian } => {
            let p = load(&common)?;
            let ys = parse_grid(&grid, p.spec.dims.n_y)?;
            let op = p.operator()?;
            let sample = sample_manifold(&op, &ys, &p.fixed_point_config(), jacobian);
            if let Some(path) = csv {
                let f = File::create(&path).map_err(|e| io_error(&path, e))?;
                sample.write_csv(BufWriter::new(f))?;
            }
            for pt in sample.points.iter().filter(|pt| !pt.ok()) {
                log::warn!("y0 = {:?}: {}", pt.y0, pt.error.as_deref().unwrap_or(""));
            }
            emit(&serde_json::to_value(&sample).expect("sample serializes"));
            Ok(if sample.violations > 0 && p.report.passes() { EXIT_NUMERICAL } else { 0 })
        }
        Command::Jacobian { common, y0, h_fd } => {
            let p = load(&common)?;
            let y0 = p.y_vector(&parse_vector(&y0)?)?;
            let op = p.operator()?;
            let cfg = p.fixed_point_config();
            let sol = solve_fixed_point(&op, &y0, &cfg)?;
            let t1 = solve_t1_fixed_point(&op, &sol.phi, &cfg)?;
            let dphi = t1.dphi();
            let fd = fd_jacobian(&op, &y0, h_fd, &cfg)?;
            let discrepancy = (&dphi - &fd).amax();
            if !p.report.flags.a6 {
                log::warn!("A6 does not hold; the derivative is reported without a regularity guarantee");
            }
            emit(&json!({
                "y0": vec_of(&y0),
                "dphi_x": rows(&t1.dphi_x),
                "dphi_z": rows(&t1.dphi_z),
                "fd": rows(&fd),
                "fd_step": h_fd,
                "discrepancy": discrepancy,
                "iterations": t1.iterations,
                "final_step_norm": t1.final_step_norm,
                "measured_rates": t1.measured_rates,
            }));
            Ok(0)
        }
        Command::Validate { common, y0, horizon } => {
            let p = load(&common)?;
            let y0 = p.y_vector(&parse_vector(&y0)?)?;
            let op = p.operator()?;
            let opts = ValidationOptions {
                horizon,
                seed: p.numerics.seed,
                a2_pairs: p.numerics.a2_pairs,
                plateau: p.plateau(),
                a2_half_width: p.sample_box.hi[0],
                ..ValidationOptions::default()
            };
            let report = validate(&op, &y0, &p.fixed_point_config(), &opts)?;
            emit(&serde_json::to_value(&report).expect("report serializes"));
            Ok(if report.passed() { 0 } else { EXIT_NUMERICAL })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = exit_code(&e);
            log::error!("{e}");
            let mut body = json!({ "error": e.to_string(), "exit_code": code });
            if let Error::Config { path, .. } = &e {
                body["path"] = json!(path);
            }
            emit(&body);
            ExitCode::from(code)
        }
    }
}
