use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steerreg::harness::{self, ExperimentConfig};
use steerreg::Error;

#[derive(Parser)]
#[command(name = "steerreg", version, about = "Steerable 3-D convolutions and toy deformable registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// INI experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides [output] dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct WithCheckpoint {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to load (defaults to <out>/checkpoint.strg).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(Common),
    /// Train a model and write a checkpoint plus training curve.
    Train(Common),
    /// Evaluate a checkpoint on the test pairs.
    Eval(WithCheckpoint),
    /// Equivariance residuals of the encoder.
    EquivCheck(WithCheckpoint),
    /// Dice as a function of moving-image rotation.
    RotateEval(WithCheckpoint),
    /// Train and score one equivariant model per channel ratio.
    RatioSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ratios, e.g. 1:0:0,5:2:1 (default: the full sweep).
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Dice per training fraction 1, 1/2, 1/4, 1/8 for both variants.
    SampleEfficiency(Common),
    /// Standard vs equivariant parameter counts.
    ParamCount(Common),
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Budget(_) | Error::Synth(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let cfg = ExperimentConfig::from_file(&c.config).map_err(|e| Failure::Config(e.to_string()))?;
    let out = c.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<String, Failure> {
    let msg = match cli.command {
        Command::GenData(c) => {
            let (cfg, out) = load(&c)?;
            harness::cmd_gen_data(&cfg, &out)?
        }
        Command::Train(c) => {
            let (cfg, out) = load(&c)?;
            harness::cmd_train(&cfg, &out)?
        }
        Command::Eval(w) => {
            let (cfg, out) = load(&w.common)?;
            harness::cmd_eval(&cfg, &out, w.checkpoint.as_deref())?
        }
        Command::EquivCheck(w) => {
            let (cfg, out) = load(&w.common)?;
            harness::cmd_equiv_check(&cfg, &out, w.checkpoint.as_deref())?
        }
        Command::RotateEval(w) => {
            let (cfg, out) = load(&w.common)?;
            harness::cmd_rotate_eval(&cfg, &out, w.checkpoint.as_deref())?
        }
        Command::RatioSweep { common, ratios } => {
            let (cfg, out) = load(&common)?;
            let ratios = match ratios {
                Some(s) => harness::parse_ratio_list(&s).map_err(|e| Failure::Config(e.to_string()))?,
                None => harness::SWEEP_RATIOS.to_vec(),
            };
            harness::cmd_ratio_sweep(&cfg, &out, &ratios)?
        }
        Command::SampleEfficiency(c) => {
            let (cfg, out) = load(&c)?;
            harness::cmd_sample_efficiency(&cfg, &out)?
        }
        Command::ParamCount(c) => {
            let (cfg, out) = load(&c)?;
            harness::cmd_param_count(&cfg, &out)?
        }
    };
    Ok(msg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
