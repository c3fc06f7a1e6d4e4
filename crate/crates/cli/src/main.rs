use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use cwlab::config::ExperimentKind;
use cwlab::{recipes, CliError, ExperimentConfig};

/// Critical-window experiments on Gaussian-mixture diffusions.
///
/// Configurations are TOML files; see `list-recipes` for complete examples.
/// Defaults: occupancy steps `max(1000, ⌈500·T⌉)` with the exponential
/// integrator, reverse floor 1e-4, ε = 0.1, windows horizon 20 with 100000
/// Monte Carlo samples per probe, hierarchy radius `√d + 4`, MIA `t_under =
/// "auto"` (half the retention time, retention, midpoint, mixing, mixing + 1.5).
#[derive(Debug, Parser)]
#[command(name = "cwlab", version)]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "CWLAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        config: PathBuf,
        /// Output directory (default: `out` from the config, else `runs/<kind>-<seed>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the builtin recipes.
    ListRecipes,
    /// Occupancy curve of the four-cluster figure with its critical times.
    ReproduceFig {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run any builtin recipe.
    Recipe {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Critical-window bounds for the pairs of a configuration.
    Windows {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Membership-inference sweep of a configuration.
    Mia {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", cfg.kind.name(), cfg.seed)))
}

fn from_file(path: &Path, kind: Option<ExperimentKind>) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(k) = kind {
        cfg.kind = k;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building the worker pool")?;
    }
    let (cfg, base, out) = match cli.command {
        Command::ListRecipes => {
            print!("{}", recipes::listing());
            return Ok(());
        }
        Command::Run { config, out } => {
            let (c, b) = from_file(&config, None)?;
            (c, b, out)
        }
        Command::Windows { config, out } => {
            let (c, b) = from_file(&config, Some(ExperimentKind::Windows))?;
            (c, b, out)
        }
        Command::Mia { config, out } => {
            let (c, b) = from_file(&config, Some(ExperimentKind::Mia))?;
            (c, b, out)
        }
        Command::ReproduceFig { out, seed } => (recipes::find("reproduce-fig")?.config(seed)?, PathBuf::new(), out),
        Command::Recipe { name, out, seed } => (recipes::find(&name)?.config(seed)?, PathBuf::new(), out),
    };
    let out = out_dir(&cfg, out);
    let art = cwlab::run(&cfg, &base, &out)?;
    for name in art.files.keys() {
        println!("{}", out.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<CliError>() {
            Some(ce) => {
                eprintln!("{}", ce.machine_line());
                ExitCode::from(ce.exit_code())
            }
            None => {
                let reason = format!("{e:#}").split_whitespace().collect::<Vec<_>>().join(" ");
                eprintln!("error kind=internal reason=\"{}\"", reason.replace('"', "\\\""));
                ExitCode::from(1)
            }
        },
    }
}
