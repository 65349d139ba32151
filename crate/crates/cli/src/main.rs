use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use redcmp::corpus::{SetId, Subset};
use redcmp_cli::error::exit;
use redcmp_cli::{report, CliError, Pipeline, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "redcmp",
    version,
    about = "Train and compare reconstruction encoder-decoder variants"
)]
struct Cli {
    /// Output root for the run.
    #[arg(long, global = true, env = "REDCMP_OUT", default_value = "redcmp-out")]
    out: PathBuf,

    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: number of processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Override the configured epoch count.
    #[arg(long, global = true)]
    epochs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write corpus files (all configured sets and subsets unless filtered).
    Gen {
        #[arg(long)]
        set: Option<SetId>,
        #[arg(long)]
        subset: Option<Subset>,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Train one model per grid cell.
    Train,
    /// Score every checkpoint and write the eval tables.
    Eval,
    /// Summarize the eval tables as per-claim verdicts.
    Report,
    /// gen, train, eval and report in sequence.
    Run,
}

fn load_config(cli: &Cli, length: Option<usize>) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(epochs) = cli.epochs {
        config.hyper.epochs = epochs;
    }
    if let Some(length) = length {
        config.corpus.length = length;
    }
    config.validate()?;
    Ok(config)
}

fn pipeline(cli: &Cli, length: Option<usize>) -> Result<Pipeline> {
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Pipeline::new(load_config(cli, length)?, &cli.out, jobs)
}

fn print_report(cli: &Cli) -> Result<()> {
    let (text, _) = report::write_report(&cli.out)?;
    print!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen {
            set,
            subset,
            length,
        } => {
            let p = pipeline(cli, *length)?;
            let sets: Vec<SetId> = set.iter().copied().collect();
            let subsets: Vec<Subset> = subset.iter().copied().collect();
            p.gen(&sets, &subsets)?;
        }
        Command::Train => pipeline(cli, None)?.train()?,
        Command::Eval => {
            pipeline(cli, None)?.eval()?;
        }
        Command::Report => print_report(cli)?,
        Command::Run => {
            let p = pipeline(cli, None)?;
            p.gen(&[], &[])?;
            p.train()?;
            p.eval()?;
            print_report(cli)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
