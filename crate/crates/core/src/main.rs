//! Command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use anomaly_rl::cli::{
    cmd_eval, cmd_gen_corpus, cmd_sweep, cmd_train, load_run_config, CliError, EvalArgs, GridSpec,
    OutputFormat, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "anomaly-rl",
    about = "Group-relative policy training and evaluation for structured defect/normal verdicts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: manifest plus feature sidecar.
    GenCorpus(ConfigArgs),
    /// Train on the configured corpus; write log and final checkpoint.
    Train(ConfigArgs),
    /// Score a dataset with a checkpoint or an external response file.
    Eval {
        /// Checkpoint to predict with.
        #[arg(long, conflicts_with = "responses")]
        checkpoint: Option<PathBuf>,
        /// Response file (JSONL with sample_id and response) to score.
        #[arg(long)]
        responses: Option<PathBuf>,
        /// Manifest with ground-truth labels.
        #[arg(long)]
        dataset: PathBuf,
        /// Feature sidecar; defaults to features.bin next to the manifest.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run a hyperparameter grid; one seeded run per cell.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Grid axis, repeatable: key=v1,v2 over alpha, gamma,
        /// scale_defect, group_size, beta, learning_rate, seed.
        #[arg(long)]
        grid: Vec<String>,
        /// Concurrent cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Records,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => OutputFormat::Table,
            Format::Records => OutputFormat::Records,
        }
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(args: &ConfigArgs, config: &RunConfig) -> Result<PathBuf, CliError> {
    args.out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set output_dir"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus(args) => {
            let config = resolve_config(&args)?;
            let out = out_dir(&args, &config)?;
            let summary = cmd_gen_corpus(&config, &out)?;
            println!("{summary}");
        }
        Command::Train(args) => {
            let config = resolve_config(&args)?;
            let out = out_dir(&args, &config)?;
            let summary = cmd_train(&config, &out)?;
            println!("{summary}");
        }
        Command::Eval {
            checkpoint,
            responses,
            dataset,
            features,
            out,
            format,
        } => {
            let args = EvalArgs {
                checkpoint,
                responses,
                dataset,
                features,
                out,
                format: format.into(),
            };
            let summary = cmd_eval(&args)?;
            for warning in &summary.warnings {
                eprintln!("warning: {warning}");
            }
            print!("{}", summary.rendered(args.format));
        }
        Command::Sweep { config, grid, jobs } => {
            let run_config = resolve_config(&config)?;
            let out = out_dir(&config, &run_config)?;
            let grid = GridSpec::parse(&grid)?;
            let summary = cmd_sweep(&run_config, &grid, &out, jobs)?;
            print!("{}", summary.render_table());
            println!("table: {}", summary.table_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap's own help/version output exits 0.
            if err.use_stderr() {
                eprintln!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::from(0);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
