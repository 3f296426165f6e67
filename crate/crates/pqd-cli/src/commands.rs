//! Stage implementations behind the subcommands. Every stage is a pure
//! function of (config, seeds) and leaves its artifacts in the output
//! directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use pqd_core::calib::CalibrationSet;
use pqd_core::data::eight_gaussians;
use pqd_core::denoiser::Denoiser;
use pqd_core::error::{Error, Result};
use pqd_core::io;
use pqd_core::metrics::{evaluate, EvalReport};
use pqd_core::qmodel::BitConfig;
use pqd_core::train::{derive_seed, epsilon_prediction_loss, train_denoiser};
use pqd_core::SampleBatch;

use crate::config::ExperimentConfig;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CALIBRATION_FILE: &str = "calibration.bin";
pub const COMPARISON_CSV: &str = "comparison.csv";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("manifest serialization: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn reference_data(cfg: &ExperimentConfig) -> SampleBatch {
    // held out from training by a derived seed
    eight_gaussians(cfg.data.n_reference, derive_seed(cfg.data.seed, 2), false)
}

fn class_list(model: &Denoiser) -> Option<Vec<u32>> {
    (model.num_classes > 0).then(|| (0..model.num_classes).collect())
}

#[derive(Serialize)]
struct TrainLog {
    seed: u64,
    num_iterations: usize,
    num_params: usize,
    held_out_loss: f64,
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let sched = cfg.schedule.build()?;
    let data = eight_gaussians(cfg.data.n_train, cfg.data.seed, cfg.data.labeled);
    let model = train_denoiser(&data, &sched, &cfg.train)?;
    let held_out = eight_gaussians(1024, derive_seed(cfg.data.seed, 1), false);
    let loss = epsilon_prediction_loss(&model, &held_out, &sched, derive_seed(cfg.train.seed, 99), 1024)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    io::save_checkpoint(&model, &ckpt)?;
    write_json(
        &TrainLog {
            seed: cfg.train.seed,
            num_iterations: cfg.train.num_iterations,
            num_params: model.num_params(),
            held_out_loss: loss,
        },
        &out.join("train_log.json"),
    )?;
    Ok(ckpt)
}

#[derive(Serialize)]
struct CalibrateManifest {
    strategy: String,
    seed: u64,
    n: usize,
    conditional: bool,
    records: usize,
    timestep_histogram_25: Vec<usize>,
}

pub fn cmd_calibrate(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let sched = cfg.schedule.build()?;
    let model = io::load_checkpoint(checkpoint)?;
    let classes = class_list(&model);
    let law = cfg.strategy.timestep_law(cfg.calibration.mu, cfg.calibration.sigma);
    let set = pqd_core::calib::build_calibration_set_with_law(
        &model,
        &sched,
        &cfg.calibration,
        law,
        classes.as_deref(),
    )?;
    let path = out.join(CALIBRATION_FILE);
    io::save_calibration_set(&set, &path)?;
    write_json(
        &CalibrateManifest {
            strategy: cfg.strategy.label().to_string(),
            seed: cfg.calibration.seed,
            n: cfg.calibration.n,
            conditional: set.conditional,
            records: set.samples.len(),
            timestep_histogram_25: set.timestep_histogram(cfg.schedule.num_steps, 25),
        },
        &out.join("calibration_manifest.json"),
    )?;
    Ok(path)
}

#[derive(Serialize)]
struct QuantizeManifest {
    bit_config: String,
    strategy: String,
    weight_scales: Vec<Vec<f64>>,
    act_scales: Vec<Option<f64>>,
}

pub fn quantized_file_name(bits: BitConfig) -> String {
    format!("model_{}.bin", bits.label())
}

pub fn cmd_quantize(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    calibration: Option<&Path>,
    bits: BitConfig,
    out: &Path,
) -> Result<PathBuf> {
    ensure_dir(out)?;
    let model = io::load_checkpoint(checkpoint)?;
    let set: CalibrationSet = match calibration {
        Some(p) => io::load_calibration_set(p)?,
        None if bits.act_bits < 32 => {
            return Err(Error::config(format!(
                "{}: activation quantization needs a calibration set; run `pqd calibrate` and pass --calibration",
                bits.label()
            )));
        }
        None => {
            // weight-only path still flows through quantize_from_set,
            // which ignores the samples at A32
            CalibrationSet {
                samples: Vec::new(),
                config: cfg.calibration.clone(),
                dim: model.input_dim,
                conditional: false,
            }
        }
    };
    let qm = pqd_core::calib::quantize_from_set(
        &model,
        &set,
        bits.weight_bits,
        bits.act_bits,
        cfg.strategy,
    )?;
    let path = out.join(quantized_file_name(bits));
    // the loader resolves relative references against the quantized
    // file's directory, so keep a bare file name when the checkpoint
    // lives there and fall back to an absolute path otherwise
    let ckpt_abs = checkpoint
        .canonicalize()
        .map_err(|e| Error::config(format!("checkpoint {}: {e}", checkpoint.display())))?;
    let out_abs = out
        .canonicalize()
        .map_err(|e| Error::config(format!("out dir {}: {e}", out.display())))?;
    let stored_ref = if ckpt_abs.parent() == Some(out_abs.as_path()) {
        ckpt_abs.file_name().unwrap().to_string_lossy().into_owned()
    } else {
        ckpt_abs.to_string_lossy().into_owned()
    };
    io::save_quantized_model(&qm, &stored_ref, &path)?;
    write_json(
        &QuantizeManifest {
            bit_config: bits.label(),
            strategy: cfg.strategy.label().to_string(),
            weight_scales: qm
                .weight_params
                .iter()
                .map(|ps| ps.iter().map(|p| p.scale).collect())
                .collect(),
            act_scales: qm
                .act_params
                .iter()
                .map(|p| p.as_ref().map(|q| q.scale))
                .collect(),
        },
        &out.join(format!("quantize_manifest_{}.json", bits.label())),
    )?;
    Ok(path)
}

#[derive(Serialize)]
pub struct CsvRow {
    pub strategy: String,
    pub report: EvalReport,
}

/// Fixed column order: strategy, W, A, size_bits, bops, sw, mmd, seed.
pub fn comparison_csv(rows: &[CsvRow]) -> String {
    let mut csv = String::from(
        "strategy,weight_bits,act_bits,size_bits,bops_per_step,sliced_wasserstein,mmd,seed\n",
    );
    for row in rows {
        let r = &row.report;
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            row.strategy,
            r.bit_config.weight_bits,
            r.bit_config.act_bits,
            r.size_bits,
            r.bops_per_step,
            r.sliced_wasserstein,
            r.mmd,
            r.seed
        )
        .expect("string write");
    }
    csv
}

pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    models: &[PathBuf],
    out: &Path,
) -> Result<Vec<CsvRow>> {
    if models.is_empty() {
        return Err(Error::config("evaluate needs at least one --model file"));
    }
    ensure_dir(out)?;
    let sched = cfg.schedule.build()?;
    let reference = reference_data(cfg);
    let mut rows = Vec::new();
    for path in models {
        let qm = io::load_quantized_model(path)?;
        let report = evaluate(
            &qm,
            &sched,
            &reference,
            cfg.eval.n_samples,
            cfg.eval.n_projections,
            cfg.eval.num_inference_steps,
            cfg.eval.seed,
        )?;
        rows.push(CsvRow {
            strategy: cfg.strategy.label().to_string(),
            report,
        });
    }
    std::fs::write(out.join("evaluation.csv"), comparison_csv(&rows))?;
    write_json(&rows, &out.join("evaluation.json"))?;
    Ok(rows)
}

#[derive(Serialize)]
struct Provenance {
    tool_version: &'static str,
    config_sha256: String,
    train_seed: u64,
    data_seed: u64,
    calibration_seed: u64,
    eval_seed: u64,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{name} stage: {m}")),
        Error::Shape(m) => Error::Shape(format!("{name} stage: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{name} stage: {m}")),
        Error::Format(m) => Error::Format(format!("{name} stage: {m}")),
        Error::Io(e) => Error::Config(format!("{name} stage: {e}")),
    })
}

/// Runs train -> calibrate -> quantize x grid -> evaluate and writes the
/// comparison CSV plus a provenance manifest.
pub fn cmd_reproduce(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let canonical = cfg.to_pretty_json();
    let digest = Sha256::digest(canonical.as_bytes());
    write_json(
        &Provenance {
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: format!("{digest:x}"),
            train_seed: cfg.train.seed,
            data_seed: cfg.data.seed,
            calibration_seed: cfg.calibration.seed,
            eval_seed: cfg.eval.seed,
        },
        &out.join("provenance.json"),
    )?;
    std::fs::write(out.join("config.json"), &canonical)?;

    let ckpt = stage("train", cmd_train(cfg, out))?;
    let calib = stage("calibrate", cmd_calibrate(cfg, &ckpt, out))?;
    let mut models = Vec::new();
    for [w, a] in &cfg.bit_grid {
        let bits = BitConfig::new(*w, *a)?;
        let calib_arg = (bits.act_bits < 32).then_some(calib.as_path());
        models.push(stage(
            "quantize",
            cmd_quantize(cfg, &ckpt, calib_arg, bits, out),
        )?);
    }
    let rows = stage("evaluate", cmd_evaluate(cfg, &models, out))?;
    let csv_path = out.join(COMPARISON_CSV);
    std::fs::write(&csv_path, comparison_csv(&rows))?;
    Ok(csv_path)
}
