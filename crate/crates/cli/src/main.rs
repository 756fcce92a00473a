use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavesrc_cli::commands::{self, ObservationSource, Run};
use wavesrc_cli::config::{self, RawConfig};

/// Source localization for the 2-D acoustic wave equation with a neural
/// surrogate and Metropolis-Hastings sampling.
#[derive(Parser)]
#[command(name = "wavesrc", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file merged over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set grid.nx=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for `--set mh.iterations=N`.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; defaults to a fresh timestamped directory under
    /// `$WAVESRC_RUNS_ROOT` (or `runs/`).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver for every train and test source and write the dataset.
    Simulate {
        /// Dataset directory [default: <run-dir>/dataset].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the surrogate network on a dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Model file [default: <run-dir>/model.txt].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Localize one observation set.
    Infer {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Index of the dataset's test source.
        #[arg(long, default_value_t = 0, conflicts_with = "observations")]
        source: usize,
        /// Trace CSV to localize instead of a dataset test source.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Localize every test source and report aggregate accuracy.
    Suite {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Localize one source with shrinking receiver subsets.
    Ablate {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Show the mirror ambiguity of receivers on the line x = 1/2.
    Symmetry {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Print the resolved configuration, or the key reference with `--keys`.
    Config {
        #[arg(long)]
        keys: bool,
    },
}

fn resolve_raw(c: &Common) -> wavesrc::Result<RawConfig> {
    let mut raw = RawConfig::default();
    if let Some(p) = &c.config {
        raw.merge_file(p)?;
    }
    for pair in &c.set {
        raw.set_pair(pair)?;
    }
    if let Some(s) = c.seed {
        raw.set("seed", &s.to_string())?;
    }
    if let Some(n) = c.iterations {
        raw.set("mh.iterations", &n.to_string())?;
    }
    if let Some(n) = c.workers {
        raw.set("workers", &n.to_string())?;
    }
    Ok(raw)
}

fn run(cli: Cli) -> wavesrc::Result<()> {
    let raw = resolve_raw(&cli.common)?;
    if let Command::Config { keys } = cli.command {
        if keys {
            print!("{}", config::describe_keys());
        } else {
            raw.resolve()?;
            print!("{}", raw.to_text());
        }
        return Ok(());
    }
    let run = Run::start(raw, cli.common.run_dir.as_deref())?;
    if run.config.workers > 0 {
        wavesrc::par::set_workers(run.config.workers);
    }
    eprintln!("[wavesrc] run directory {}", run.dir.display());
    match &cli.command {
        Command::Simulate { out } => commands::simulate(&run, out.as_deref()),
        Command::Train { dataset, out } => commands::train(&run, dataset.as_deref(), out.as_deref()),
        Command::Infer {
            model,
            dataset,
            source,
            observations,
        } => {
            let which = match observations {
                Some(p) => ObservationSource::File(p),
                None => ObservationSource::TestIndex(*source),
            };
            commands::infer(&run, model.as_deref(), dataset.as_deref(), which)
        }
        Command::Suite { model, dataset } => commands::suite(&run, model.as_deref(), dataset.as_deref()),
        Command::Ablate { model } => commands::ablate(&run, model.as_deref()),
        Command::Symmetry { model } => commands::symmetry(&run, model.as_deref()),
        Command::Config { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
