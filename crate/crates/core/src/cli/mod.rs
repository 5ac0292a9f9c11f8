//! Command-line front end: `predict`, `kernel-check`, `pou-check`,
//! `simulate`, `analyze` and `report`.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::analysis::ShellMode;
use crate::error::GmcError;
use config::Overrides;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "GMC_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "torus-gmc", version, about = "Gaussian multiplicative chaos on the d-torus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default, Clone)]
pub struct RunArgs {
    /// key=value configuration file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// M = 2^grid_log2 points per axis
    #[arg(long = "grid-log2")]
    pub grid_log2: Option<u32>,
    #[arg(long)]
    pub levels: Option<u32>,
    #[arg(long)]
    pub replicas: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    /// Regression shells, e.g. 2..7
    #[arg(long, value_parser = config::parse_range)]
    pub shells: Option<(u32, u32)>,
    #[arg(long)]
    pub mode: Option<ShellMode>,
}

impl RunArgs {
    pub fn overrides(&self) -> Result<Overrides, GmcError> {
        let file = match &self.config {
            Some(path) => Overrides::from_file(path)?,
            None => Overrides::default(),
        };
        Ok(file.merge(Overrides {
            dim: self.dim,
            gamma: self.gamma,
            grid_log2: self.grid_log2,
            levels: self.levels,
            replicas: self.replicas,
            seed: self.seed,
            tau: self.tau,
            p: self.p,
            q: self.q,
            shells: self.shells,
            mode: self.mode,
            out: self.out.clone(),
        }))
    }
}

impl clap::ValueEnum for ShellMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[ShellMode::Sup, ShellMode::Mean]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            ShellMode::Sup => "sup",
            ShellMode::Mean => "mean",
        }))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predicted Fourier dimension, optimal p and the (tau, q) window
    Predict {
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
    /// Certify profiles and grid kernels
    KernelCheck {
        #[command(flatten)]
        run: RunArgs,
        /// Audit a kernel CSV instead of building one
        #[arg(long)]
        load: Option<PathBuf>,
        /// Level of the loaded kernel
        #[arg(long, requires = "load")]
        level: Option<u32>,
    },
    /// Certify the dyadic windows and the decoupling identity
    PouCheck {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run an ensemble and write its artifacts
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Also dump the level fields of replica 0
        #[arg(long)]
        dump_fields: bool,
    },
    /// Estimate dimensions from a simulation directory
    Analyze {
        dir: PathBuf,
        #[arg(long)]
        mode: Option<ShellMode>,
        #[arg(long, value_parser = config::parse_range)]
        shells: Option<(u32, u32)>,
    },
    /// Tabulate predicted against estimated dimensions over several runs
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status for a run whose checks failed.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit status for invalid input or I/O trouble.
pub const EXIT_ERROR: i32 = 2;

pub fn configure_workers() {
    if let Some(n) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<bool, GmcError> {
    match cli.command {
        Command::Predict { gamma, dim } => commands::predict(gamma, dim, out),
        Command::KernelCheck { run, load, level } => commands::kernel_check(&run.overrides()?, load, level, out),
        Command::PouCheck { run } => commands::pou_check(&run.overrides()?, out),
        Command::Simulate { run, dump_fields } => commands::simulate(&run.overrides()?, dump_fields, out),
        Command::Analyze { dir, mode, shells } => commands::analyze(&dir, mode, shells, out),
        Command::Report { dirs, out: path } => commands::report(&dirs, path.as_deref(), out),
    }
}

pub fn main() -> i32 {
    configure_workers();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout();
    match run(cli, &mut stdout) {
        Ok(true) => 0,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                GmcError::CertificationFailed { .. } => EXIT_CHECK_FAILED,
                _ => EXIT_ERROR,
            }
        }
    }
}
