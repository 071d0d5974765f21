//! Front end of the `wkam` binary: argument parsing, configuration layering,
//! worker pool and exit-code mapping. The experiments live in [`commands`].

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

/// Every check passed.
pub const EXIT_PASS: i32 = 0;
/// At least one check failed (or the numerics gave up).
pub const EXIT_CHECK_FAILED: i32 = 1;
/// The command line or the configuration is invalid.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] wkam_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(wkam_core::Error::Domain(_)) => EXIT_USAGE,
            _ => EXIT_CHECK_FAILED,
        }
    }
}

fn defaults_help() -> String {
    let mut cfg = ExperimentConfig::default();
    cfg.command = "<command>".into();
    format!(
        "Defaults (a --config file uses the same keys; flags override the file):\n\n{}\n\
         Default tolerances (--tol): connect {} (relative slack on the bound), phi {} (relative slack on the sandwich), \
         holder {} (exponent), weakkam {} (sup change), central {} (tangential gradient), parabolic {} (relative action error).\n\n\
         Exit codes: 0 all checks pass, 1 a check failed, 2 usage or configuration error.",
        cfg.to_toml(),
        config::DEFAULT_CONNECT_TOL,
        config::DEFAULT_PHI_TOL,
        config::DEFAULT_HOLDER_TOL,
        config::DEFAULT_WEAKKAM_TOL,
        config::DEFAULT_CENTRAL_TOL,
        config::DEFAULT_PARABOLIC_TOL,
    )
}

#[derive(Debug, Parser)]
#[command(
    name = "wkam",
    version,
    about = "Certified experiments on homogeneous N-body action potentials and weak KAM solutions",
    after_long_help = defaults_help(),
    allow_negative_numbers = true
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; sample k uses seed + k.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per logical processor).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Primary tolerance of the command.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(long, global = true)]
    pub bodies: Option<usize>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    /// Comma-separated masses.
    #[arg(long, global = true, value_delimiter = ',')]
    pub masses: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explicit connectors between random configurations, each with its action certificate.
    Connect {
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Action potential estimates between random configurations, checked against their bounds.
    Phi {
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        nodes: Option<usize>,
        /// Fixed horizon; omit for the free-time potential.
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Free-time potential from total collision across scales: fitted exponent and Holder bound.
    Holder {
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Grid Lax-Oleinik experiment on a reduced two-body problem at spacings h and h/2.
    Weakkam {
        #[arg(long)]
        reduced: Option<String>,
        #[arg(long)]
        oracle: Option<String>,
        #[arg(long)]
        semigroup: Option<String>,
        #[arg(long)]
        lower: Option<f64>,
        #[arg(long)]
        upper: Option<f64>,
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long)]
        exclusion: Option<f64>,
        #[arg(long)]
        eikonal_constant: Option<f64>,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        #[arg(long)]
        phi_nodes: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Minimal central configuration on the inertia sphere.
    Central {
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Parabolic homothetic motion: quadrature action against the closed form.
    Parabolic {
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(cli: Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.workers, cli.workers);
    set(&mut cfg.out, cli.out);
    if cli.tol.is_some() {
        cfg.tol = cli.tol;
    }
    set(&mut cfg.problem.bodies, cli.problem.bodies);
    set(&mut cfg.problem.dim, cli.problem.dim);
    set(&mut cfg.problem.kappa, cli.problem.kappa);
    set(&mut cfg.problem.masses, cli.problem.masses);
    match cli.command {
        Command::Connect { radius, horizon, samples } => {
            cfg.command = "connect".into();
            set(&mut cfg.connect.radius, radius);
            set(&mut cfg.connect.horizon, horizon);
            set(&mut cfg.connect.samples, samples);
        }
        Command::Phi { radius, samples, nodes, horizon } => {
            cfg.command = "phi".into();
            set(&mut cfg.phi.radius, radius);
            set(&mut cfg.phi.samples, samples);
            set(&mut cfg.phi.nodes, nodes);
            if horizon.is_some() {
                cfg.phi.horizon = horizon;
            }
        }
        Command::Holder { scales, nodes } => {
            cfg.command = "holder".into();
            set(&mut cfg.holder.scales, scales);
            set(&mut cfg.holder.nodes, nodes);
        }
        Command::Weakkam {
            reduced,
            oracle,
            semigroup,
            lower,
            upper,
            half_width,
            exclusion,
            eikonal_constant,
            spacing,
            step,
            phi_nodes,
            max_iter,
            pairs,
        } => {
            cfg.command = "weakkam".into();
            let w = &mut cfg.weakkam;
            set(&mut w.reduced, reduced);
            set(&mut w.oracle, oracle);
            set(&mut w.semigroup, semigroup);
            set(&mut w.lower, lower);
            set(&mut w.upper, upper);
            set(&mut w.half_width, half_width);
            set(&mut w.exclusion, exclusion);
            set(&mut w.eikonal_constant, eikonal_constant);
            set(&mut w.spacing, spacing);
            set(&mut w.step, step);
            set(&mut w.phi_nodes, phi_nodes);
            set(&mut w.max_iter, max_iter);
            set(&mut w.pairs, pairs);
        }
        Command::Central { restarts } => {
            cfg.command = "central".into();
            set(&mut cfg.central.restarts, restarts);
        }
        Command::Parabolic { horizon, nodes, samples } => {
            cfg.command = "parabolic".into();
            set(&mut cfg.parabolic.horizon, horizon);
            set(&mut cfg.parabolic.nodes, nodes);
            set(&mut cfg.parabolic.samples, samples);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    let print_only = cli.print_config;
    let cfg = match resolve(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("wkam: {e}");
            return e.exit_code();
        }
    };
    if print_only {
        print!("{}", cfg.to_toml());
        return EXIT_PASS;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("wkam: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| commands::execute(&cfg)) {
        Ok(summary) => {
            summary.print();
            if summary.pass {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("wkam: {e}");
            e.exit_code()
        }
    }
}
