use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use collapse_lab::commands::{self, Context};
use collapse_lab::config::RunConfig;
use collapse_lab::Failure;

#[derive(Parser)]
#[command(
    name = "collapse-lab",
    version,
    about = "Particle experiments for 1D aggregation-diffusion with singular kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "COLLAPSE_LAB_JOBS", default_value_t = 0)]
    jobs: usize,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one initial state and write its trajectory and summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate the global-existence and blow-up criteria without integrating.
    Criteria {
        #[arg(long)]
        config: PathBuf,
    },
    /// Basin map and criterion curves of the three-particle system.
    PhasePlane {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabulate the optimal entropy constant C(N).
    Cn {
        #[arg(long, default_value_t = 3)]
        n_min: usize,
        #[arg(long, default_value_t = 64)]
        n_max: usize,
    },
    /// Compare quantile particle states with their continuous density.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Locate a critical point of the energy on the zero-mean slice.
    CriticalPoint {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(|e| Failure::Config(format!("--jobs: {e}")))?;
    }
    let ctx = Context { out: cli.out, quiet: cli.quiet };
    match cli.command {
        Command::Simulate { config } => commands::simulate(&load(&config, cli.seed)?, &ctx).map(drop),
        Command::Criteria { config } => commands::criteria(&load(&config, cli.seed)?, &ctx).map(drop),
        Command::PhasePlane { config } => commands::phase_plane(&load(&config, cli.seed)?, &ctx).map(drop),
        Command::Cn { n_min, n_max } => commands::cn(n_min, n_max, &ctx).map(drop),
        Command::Converge { config } => commands::converge(&load(&config, cli.seed)?, &ctx).map(drop),
        Command::CriticalPoint { config } => commands::critical_point(&load(&config, cli.seed)?, &ctx).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
