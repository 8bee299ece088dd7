use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use igd_cli::commands::{eval_cmd, redenoise_cmd, sample_cmd, train_cmd, verify, Options};
use igd_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "igd",
    version,
    about = "Interleaved Gibbs diffusion: verify, train, sample, eval, redenoise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Number of samples.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Proceed when the checkpoint was trained under a different config.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the oracle suite.
    Verify,
    /// Train the network.
    Train,
    /// Generate samples from a checkpoint.
    Sample {
        /// Condition file: sample lines with `_` marking free entries.
        #[arg(long)]
        condition: Option<PathBuf>,
    },
    /// Score a samples file.
    Eval {
        #[arg(long)]
        samples: PathBuf,
        /// Reference samples file; defaults to target draws or the test split.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Re-noise and denoise a samples file.
    Redenoise {
        #[arg(long)]
        samples: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Validation("--config is required".into()))?;
    let cfg = RunConfig::load(&path)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut opts = Options {
        seed: cli.seed,
        checkpoint: cli.checkpoint,
        n: cli.n,
        out: cli.out,
        force: cli.force,
        ..Default::default()
    };
    match cli.command {
        Command::Verify => {
            let outcome = verify(&cfg, &opts)?;
            print!("{}", outcome.text);
            if !outcome.report.passed() {
                return Err(CliError::Assertion(format!(
                    "{} check(s) failed",
                    outcome.report.failures()
                )));
            }
            Ok(String::new())
        }
        Command::Train => train_cmd(&cfg, &opts),
        Command::Sample { condition } => {
            opts.condition = condition;
            sample_cmd(&cfg, &opts)
        }
        Command::Eval { samples, reference } => {
            opts.samples = Some(samples);
            opts.reference = reference;
            eval_cmd(&cfg, &opts)
        }
        Command::Redenoise { samples } => {
            opts.samples = Some(samples);
            redenoise_cmd(&cfg, &opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("igd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
