//! Command-line studies over the nefem toolkit.

pub mod commands;
pub mod geometry;

use clap::{Args, Parser, Subcommand};
use nefem::quadrature::BoundaryQuadrature;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Largest refinement level count accepted by the studies.
pub const MAX_LEVELS: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("check failed: {0}")]
    Check(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(e: nefem::Error) -> Self {
        CliError::Input(e.to_string())
    }

    pub fn numerical(e: nefem::Error) -> Self {
        CliError::Numerical(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nefem", version, about = "NURBS-enhanced hexahedral FEM studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant battery on every level.
    Check(StudyArgs),
    /// Export the Greville and boundary quadrature rules as CSV.
    Quadrature(StudyArgs),
    /// Interpolation error study, one block per ζ̃.
    Interpolate(StudyArgs),
    /// Manufactured-solution convergence study.
    Converge(StudyArgs),
    /// Single manufactured solve on the finest level.
    Solve(StudyArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Check(_) => "check",
            Command::Quadrature(_) => "quadrature",
            Command::Interpolate(_) => "interpolate",
            Command::Converge(_) => "converge",
            Command::Solve(_) => "solve",
        }
    }

    pub fn args(&self) -> &StudyArgs {
        match self {
            Command::Check(a) | Command::Quadrature(a) | Command::Interpolate(a) | Command::Converge(a) | Command::Solve(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Preset name (flat_cube, bump_cube, cylinder_sector) or path to a TOML geometry file.
    #[arg(long, default_value = "bump_cube")]
    pub geometry: String,
    /// Number of mesh levels, starting from the coarse mesh.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Blend parameter(s) of the hybrid interpolant, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub zeta_tilde: Vec<f64>,
    /// Boundary-element rule: hybrid, hybrid2, diagnostic_no_normalize or gaussN.
    #[arg(long, default_value = "hybrid")]
    pub quad_mode: String,
    /// Relative residual tolerance of the CG solve.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
    /// Worker threads for assembly and integration.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Manufactured solution: sine or quadratic.
    #[arg(long, default_value = "sine")]
    pub problem: String,
    /// Fill the timing columns (makes output differ between runs).
    #[arg(long)]
    pub timings: bool,
}

/// Parsed and range-checked configuration.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub command: &'static str,
    pub args: StudyArgs,
    pub quadrature: BoundaryQuadrature,
    pub problem: nefem::solver::Manufactured,
}

impl StudyConfig {
    pub fn new(command: &Command) -> Result<Self, CliError> {
        let args = command.args().clone();
        if args.levels == 0 || args.levels > MAX_LEVELS {
            return Err(CliError::Input(format!("--levels {} outside 1..={MAX_LEVELS}", args.levels)));
        }
        if args.zeta_tilde.is_empty() || args.zeta_tilde.iter().any(|z| !(*z > 0.0 && *z < 1.0)) {
            return Err(CliError::Input(format!("--zeta-tilde values {:?} must lie in (0, 1)", args.zeta_tilde)));
        }
        if !(args.tol > 0.0 && args.tol < 1.0) {
            return Err(CliError::Input(format!("--tol {} must lie in (0, 1)", args.tol)));
        }
        if args.workers == 0 {
            return Err(CliError::Input("--workers must be at least 1".into()));
        }
        let quadrature = BoundaryQuadrature::parse(&args.quad_mode)
            .ok_or_else(|| CliError::Input(format!("--quad-mode '{}' is not hybrid, hybrid2, diagnostic_no_normalize or gaussN", args.quad_mode)))?;
        let problem = nefem::solver::Manufactured::from_name(&args.problem)
            .ok_or_else(|| CliError::Input(format!("--problem '{}' is not sine or quadratic", args.problem)))?;
        Ok(Self { command: command.name(), args, quadrature, problem })
    }

    /// Comment lines echoing the version and the full configuration.
    pub fn header(&self) -> String {
        let a = &self.args;
        let zetas: Vec<String> = a.zeta_tilde.iter().map(|z| z.to_string()).collect();
        format!(
            "# nefem {VERSION}\n# command: {}\n# geometry: {}\n# levels: {}\n# zeta_tilde: {}\n# quad_mode: {}\n# tol: {:e}\n# workers: {}\n# problem: {}\n# timings: {}\n",
            self.command,
            a.geometry,
            a.levels,
            zetas.join(","),
            self.quadrature.tag(),
            a.tol,
            a.workers,
            self.problem.name,
            a.timings
        )
    }
}

/// Parses, runs and writes the output. Returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = StudyConfig::new(&cli.command).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.args.workers)
            .build()
            .map_err(|e| CliError::Input(format!("--workers: {e}")))?;
        let (body, verdict) = pool.install(|| commands::dispatch(&cfg))?;
        let text = cfg.header() + &body;
        match &cfg.args.out {
            Some(path) => std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?,
            None => print!("{text}"),
        }
        verdict
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("nefem: {e}");
            e.exit_code()
        }
    }
}
