use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mvheat::experiments::{cmd_alpha_sweep, cmd_convergence, cmd_solve, RunConfig, SchemeChoice, SolveOutputs};
use mvheat::{ConfigError, RunError};

/// Sparse measure-valued control of the 1D heat equation.
#[derive(Parser)]
#[command(name = "mvheat", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scheme of the config file.
    #[arg(long)]
    scheme: Option<SchemeChoice>,
    /// Output directory; defaults to the config's `output`, else `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at the configured alpha.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write MatrixMarket dumps of the assembled matrices.
        #[arg(long)]
        dump_matrices: bool,
        /// Write the Newton iteration log as CSV.
        #[arg(long)]
        log: bool,
        /// Write the sampled desired state as CSV.
        #[arg(long)]
        dump_ydensity: bool,
    },
    /// Descending continuation in alpha.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
    },
    /// Mesh-refinement study with manufactured data.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<(RunConfig, Vec<mvheat::Scheme>, PathBuf), ConfigError> {
    let cfg = RunConfig::from_path(&common.config)?;
    let schemes = common.scheme.unwrap_or(cfg.scheme).schemes();
    let out = common.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, schemes, out))
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.cmd {
        Command::Solve { common, dump_matrices, log, dump_ydensity } => {
            let (cfg, schemes, out) = load(&common)?;
            let extra = SolveOutputs { iteration_log: log, matrices: dump_matrices, desired_state: dump_ydensity };
            for r in cmd_solve(&cfg, &schemes, &out, extra)? {
                println!(
                    "{}: alpha={} |u|={:.6} tracking={:.6e} gap={:.2e} iters={} atoms={}",
                    r.scheme,
                    r.alpha,
                    r.measure_norm,
                    r.tracking_error,
                    r.duality_gap,
                    r.iterations,
                    r.support.len()
                );
            }
        }
        Command::SweepAlpha { common } => {
            let (cfg, schemes, out) = load(&common)?;
            let (rows, summaries) = cmd_alpha_sweep(&cfg, &schemes, &out)?;
            for s in summaries {
                println!("{}: alpha_critical={:.6} alpha0 |u|={:.6}", s.scheme, s.alpha_critical, s.alpha_zero_norm);
            }
            println!("{} sweep rows written to {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::Convergence { common } => {
            let (cfg, schemes, out) = load(&common)?;
            let (_, slopes) = cmd_convergence(&cfg, &schemes, &out, |r| {
                eprintln!(
                    "{} {} h={} norm_err={:.3e} y_err={:.3e} iters={} {}",
                    r.scheme,
                    r.coupling.label(),
                    r.h,
                    r.norm_error,
                    r.y_error,
                    r.iters,
                    r.status
                );
            })?;
            for s in slopes {
                println!(
                    "{} {} {}: slope={:.3} over {} levels, monotone={}",
                    s.scheme,
                    s.coupling.label(),
                    s.quantity,
                    s.slope,
                    s.levels,
                    s.monotone
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunError::Config(_) | RunError::Grid(_) | RunError::Data(_) => ExitCode::from(2),
                RunError::Solve(_) | RunError::Recovery(_) => ExitCode::from(3),
                RunError::Output(_) => ExitCode::FAILURE,
            }
        }
    }
}
