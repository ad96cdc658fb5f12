//! `ferm`: population profiles, bound reports, localization traces and Monte
//! Carlo experiments for ERM over finite unions of linear classes.

mod commands;
mod config;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::RunSettings;
use config::ConfigError;
use output::OutputDir;

#[derive(Parser, Debug)]
#[command(name = "ferm", version, about = "ERM over finite unions of linear classes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Population profile: approximation risks, the gap and the optimal set.
    Profile(Common),
    /// Thresholds and bounds over a delta grid.
    Bounds(Common),
    /// Localization trace and k sweep.
    Localize(Common),
    /// Monte Carlo experiments.
    Montecarlo {
        #[command(subcommand)]
        experiment: Experiment,
    },
}

#[derive(Subcommand, Debug)]
enum Experiment {
    /// Scaled excess-risk quantiles against the Gaussian limit.
    Quantiles(Common),
    /// Probability of selecting a suboptimal index along an n grid.
    Consistency(Common),
    /// Empirical violation rate of a high-probability bound.
    Validity(Common),
    /// Pathwise suboptimality and estimation inequalities.
    Pathwise(Common),
    /// Best subset selection: support recovery and the scaled excess ratio.
    Bss(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the command's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_INTERNAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;
const EXIT_TRIALS: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<ferm_core::Error>() {
        Some(e) => {
            use ferm_core::Error as E;
            match e {
                E::DegenerateFeature { .. } | E::DuplicateClass { .. } | E::NotPsd { .. } => EXIT_DEGENERATE,
                E::InsufficientTrials { .. } => EXIT_TRIALS,
                E::GenerativeLaw
                | E::InvalidLaw(_)
                | E::NonFinite(_)
                | E::DimensionMismatch { .. }
                | E::EmptySample
                | E::InvalidSparsity { .. }
                | E::EmptyCollection
                | E::InvalidArgument(_) => EXIT_CONFIG,
                _ => EXIT_INTERNAL,
            }
        }
        None => EXIT_INTERNAL,
    }
}

type Exec = fn(&config::ExperimentConfig, RunSettings, &mut OutputDir) -> anyhow::Result<()>;

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, exec): (Common, Exec) = match cli.command {
        Command::Profile(c) => (c, |cfg, _, out| commands::profile(cfg, out)),
        Command::Bounds(c) => (c, commands::bounds),
        Command::Localize(c) => (c, commands::localize),
        Command::Montecarlo { experiment } => match experiment {
            Experiment::Quantiles(c) => (c, commands::quantiles),
            Experiment::Consistency(c) => (c, commands::consistency),
            Experiment::Validity(c) => (c, commands::validity),
            Experiment::Pathwise(c) => (c, commands::pathwise),
            Experiment::Bss(c) => (c, commands::bss),
        },
    };
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(ConfigError::new("--threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let cfg = config::load(&common.config)?;
    let seed = cfg.seed(common.seed)?;
    log::info!("seed {seed}, config {}", common.config.display());
    let mut out = OutputDir::create(&common.out)?;
    exec(&cfg, RunSettings { seed, trials: common.trials }, &mut out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
