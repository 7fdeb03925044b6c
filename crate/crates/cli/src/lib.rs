//! Batch front end: configuration, dispatch and reproducible run
//! directories.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser};

pub use commands::{dispatch, manifest_text, MANIFEST};
pub use config::{parse_config, RawConfig, RunConfig, Subcommand};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Worker-count variable; it never changes results.
pub const WORKERS_ENV: &str = "ROUGHPVAR_WORKERS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] roughpvar::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Parser)]
#[command(name = "roughpvar", version, about = "Power variations of fBm-controlled paths")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Sample an fBm path and the levels of a process built on it.
    Simulate(RunArgs),
    /// Gaussian moments, chaos coefficients and the limit variance.
    Constants(RunArgs),
    /// Power variation, U-statistic and limit functionals for one path.
    Pvar(RunArgs),
    /// Monte Carlo check of the limit law.
    LimitCheck(RunArgs),
    /// Monte Carlo convergence-rate regression.
    RateFit(RunArgs),
    /// Scaling exponents of weighted Hermite sums.
    ScalingCheck(RunArgs),
    /// Re-run the subcommand recorded in a config or manifest.
    Run(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// key=value or JSON config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for the manifest and CSV outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub hurst: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    /// fbm, sq, cube, exp-rde or custom-rde.
    #[arg(long)]
    pub process: Option<String>,
    /// Grid sizes, comma separated.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub replicas: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub t: Option<String>,
    #[arg(long)]
    pub fine_factor: Option<String>,
    /// circulant-embedding, cholesky or auto.
    #[arg(long)]
    pub method: Option<String>,
    /// Run outside the parameter range of the limit theorem.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub chaos_q: Option<String>,
    #[arg(long)]
    pub lag_k: Option<String>,
    /// Hermite rank of the scaling-check functional (0 for f = 0).
    #[arg(long)]
    pub rank: Option<String>,
    #[arg(long)]
    pub ks_tol: Option<String>,
    #[arg(long)]
    pub median_tol: Option<String>,
    #[arg(long)]
    pub slope_tol: Option<String>,
    #[arg(long)]
    pub scaling_tol: Option<String>,
    /// Drift coefficients `b0,b1` of custom-rde.
    #[arg(long, allow_hyphen_values = true)]
    pub rde_b: Option<String>,
    /// Volatility coefficients `v0,v1` of custom-rde.
    #[arg(long, allow_hyphen_values = true)]
    pub rde_v: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub y0: Option<String>,
    #[arg(long)]
    pub experiment_id: Option<String>,
}

impl RunArgs {
    /// Config file contents overridden by flags.
    pub fn raw_config(&self) -> Result<RawConfig, CliError> {
        let mut raw = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                parse_config(&text)?
            }
            None => RawConfig::new(),
        };
        // Outputs are derived from the subcommand, never read back.
        raw.remove("outputs");
        let flags = [
            ("hurst", &self.hurst),
            ("p", &self.p),
            ("process", &self.process),
            ("n", &self.n),
            ("replicas", &self.replicas),
            ("seed", &self.seed),
            ("t", &self.t),
            ("fine_factor", &self.fine_factor),
            ("method", &self.method),
            ("chaos_q", &self.chaos_q),
            ("lag_k", &self.lag_k),
            ("rank", &self.rank),
            ("ks_tol", &self.ks_tol),
            ("median_tol", &self.median_tol),
            ("slope_tol", &self.slope_tol),
            ("scaling_tol", &self.scaling_tol),
            ("rde_b", &self.rde_b),
            ("rde_v", &self.rde_v),
            ("y0", &self.y0),
            ("experiment_id", &self.experiment_id),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                raw.insert(key.to_string(), v.clone());
            }
        }
        if self.force {
            raw.insert("force".into(), "true".into());
        }
        Ok(raw)
    }
}

impl Command {
    fn split(&self) -> (Option<Subcommand>, &RunArgs) {
        match self {
            Self::Simulate(a) => (Some(Subcommand::Simulate), a),
            Self::Constants(a) => (Some(Subcommand::Constants), a),
            Self::Pvar(a) => (Some(Subcommand::Pvar), a),
            Self::LimitCheck(a) => (Some(Subcommand::LimitCheck), a),
            Self::RateFit(a) => (Some(Subcommand::RateFit), a),
            Self::ScalingCheck(a) => (Some(Subcommand::ScalingCheck), a),
            Self::Run(a) => (None, a),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code: 0 pass, 1 acceptance failure, 2 usage or runtime error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            };
        }
    };
    let (sub, args) = cli.command.split();
    let outcome = args
        .raw_config()
        .and_then(|raw| RunConfig::resolve(sub, &raw))
        .and_then(|cfg| dispatch(&cfg, args.out.as_deref(), stdout));
    match outcome {
        Ok(true) => EXIT_PASS,
        Ok(false) => {
            let _ = writeln!(stderr, "acceptance check failed");
            EXIT_FAIL
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}
