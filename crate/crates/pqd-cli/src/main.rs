//! `pqd` — post-training quantization experiments on toy diffusion
//! models, split into inspectable stages.
//!
//! Exit codes: 0 success, 2 config error, 3 file-format error,
//! 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pqd_core::error::{Error, Result};
use pqd_core::qmodel::BitConfig;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "pqd", version, about = "Time-aware PTQ for toy diffusion models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON); omit to use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides every stage seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the bit grid with a single WxAy entry, e.g. W8A8.
    #[arg(long)]
    bits: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the toy denoiser and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Build a calibration set from a checkpoint.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Quantize a checkpoint at one bit configuration.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibration set file (required when activation bits < 32).
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Evaluate quantized model files against held-out reference data.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Quantized model file; repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
    },
    /// Run the full pipeline: train, calibrate, quantize grid, evaluate.
    Reproduce {
        #[command(flatten)]
        common: Common,
    },
    /// Print the built-in default config as JSON.
    Defaults,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(bits) = &common.bits {
        let bc: BitConfig = bits.parse()?;
        cfg.bit_grid = vec![[bc.weight_bits, bc.act_bits]];
    }
    Ok(cfg)
}

fn single_bits(cfg: &ExperimentConfig) -> Result<BitConfig> {
    match cfg.bit_grid.as_slice() {
        [[w, a]] => BitConfig::new(*w, *a),
        grid => Err(Error::config(format!(
            "quantize needs exactly one bit config; the grid has {} — pass --bits WxAy",
            grid.len()
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { common } => {
            let cfg = load_config(&common)?;
            let path = commands::cmd_train(&cfg, &common.out)?;
            println!("checkpoint written to {}", path.display());
        }
        Cmd::Calibrate { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let path = commands::cmd_calibrate(&cfg, &checkpoint, &common.out)?;
            println!("calibration set written to {}", path.display());
        }
        Cmd::Quantize {
            common,
            checkpoint,
            calibration,
        } => {
            let cfg = load_config(&common)?;
            let bits = single_bits(&cfg)?;
            let path =
                commands::cmd_quantize(&cfg, &checkpoint, calibration.as_deref(), bits, &common.out)?;
            println!("quantized model written to {}", path.display());
        }
        Cmd::Evaluate { common, models } => {
            let cfg = load_config(&common)?;
            let rows = commands::cmd_evaluate(&cfg, &models, &common.out)?;
            print!("{}", commands::comparison_csv(&rows));
        }
        Cmd::Reproduce { common } => {
            let cfg = load_config(&common)?;
            let csv = commands::cmd_reproduce(&cfg, &common.out)?;
            println!("comparison table written to {}", csv.display());
        }
        Cmd::Defaults => {
            println!("{}", ExperimentConfig::default().to_pretty_json());
        }
    }
    Ok(())
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape(_) => 2,
        Error::Format(_) | Error::Io(_) => 3,
        Error::Numerical(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
