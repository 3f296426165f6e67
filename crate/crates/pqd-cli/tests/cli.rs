//! Black-box behavior of the `pqd` binary: exit codes, artifact layout,
//! and the staged workflow.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pqd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pqd"))
}

fn small_config(dir: &Path) -> PathBuf {
    let out = pqd().arg("defaults").output().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    cfg["schedule"]["num_steps"] = 40.into();
    cfg["data"]["n_train"] = 256.into();
    cfg["data"]["n_reference"] = 128.into();
    cfg["train"]["num_iterations"] = 100.into();
    cfg["calibration"]["n"] = 32.into();
    cfg["calibration"]["num_steps"] = 40.into();
    cfg["calibration"]["num_inference_steps"] = 20.into();
    cfg["eval"]["n_samples"] = 64.into();
    cfg["eval"]["n_projections"] = 8.into();
    cfg["eval"]["num_inference_steps"] = 20.into();
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

#[test]
fn defaults_emits_a_loadable_config() {
    let out = pqd().arg("defaults").output().unwrap();
    assert_eq!(code(&out), 0);
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(parsed["bit_grid"].is_array());

    // a config produced by `defaults` is accepted back verbatim: the
    // complaint below is about the bit grid, which means parsing and
    // validation already succeeded
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cfg.json");
    std::fs::write(&path, &out.stdout).unwrap();
    let out = pqd()
        .args(["quantize", "--config"])
        .arg(&path)
        .args(["--checkpoint", "unused.ckpt"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("exactly one bit config"), "{err}");
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let out = pqd()
        .args(["train", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/cfg.json"), "{err}");
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    std::fs::write(&ckpt, b"NOTMAGIC definitely not a checkpoint").unwrap();
    let out = pqd()
        .arg("calibrate")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_bits_flag_exits_2() {
    for bad in ["w8", "W8A", "W1A8", "8bits"] {
        let out = pqd().args(["train", "--bits", bad]).output().unwrap();
        assert_eq!(code(&out), 2, "--bits {bad}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn staged_workflow_produces_artifacts_and_guards_missing_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out_dir = tmp.path().join("run");

    let run = |args: &[&std::ffi::OsStr]| {
        let out = pqd().args(args).output().unwrap();
        (code(&out), String::from_utf8_lossy(&out.stderr).into_owned())
    };
    let os = std::ffi::OsStr::new;

    let (c, e) = run(&[os("train"), os("--config"), config.as_os_str(), os("--out"), out_dir.as_os_str()]);
    assert_eq!(c, 0, "{e}");
    let ckpt = out_dir.join("model.ckpt");
    assert!(ckpt.is_file());
    assert!(out_dir.join("train_log.json").is_file());

    // activation quantization without a calibration set is a usage error
    let (c, e) = run(&[
        os("quantize"), os("--config"), config.as_os_str(), os("--out"), out_dir.as_os_str(),
        os("--checkpoint"), ckpt.as_os_str(), os("--bits"), os("W8A8"),
    ]);
    assert_eq!(c, 2);
    assert!(e.contains("calibrate"), "{e}");

    let (c, e) = run(&[
        os("calibrate"), os("--config"), config.as_os_str(), os("--out"), out_dir.as_os_str(),
        os("--checkpoint"), ckpt.as_os_str(),
    ]);
    assert_eq!(c, 0, "{e}");
    let calib = out_dir.join("calibration.bin");
    assert!(calib.is_file());

    let (c, e) = run(&[
        os("quantize"), os("--config"), config.as_os_str(), os("--out"), out_dir.as_os_str(),
        os("--checkpoint"), ckpt.as_os_str(), os("--calibration"), calib.as_os_str(),
        os("--bits"), os("W8A8"),
    ]);
    assert_eq!(c, 0, "{e}");
    let model = out_dir.join("model_W8A8.bin");
    assert!(model.is_file());

    let (c, e) = run(&[
        os("evaluate"), os("--config"), config.as_os_str(), os("--out"), out_dir.as_os_str(),
        os("--model"), model.as_os_str(),
    ]);
    assert_eq!(c, 0, "{e}");
    let csv = std::fs::read_to_string(out_dir.join("evaluation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,weight_bits,act_bits,size_bits,bops_per_step,sliced_wasserstein,mmd,seed"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("pqd-normal,8,8,"), "{row}");
}

#[test]
fn calibrate_writes_manifest_with_record_count() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out_dir = tmp.path().join("run");
    let ok = pqd()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(ok.success());
    let ok = pqd()
        .args(["calibrate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .arg("--checkpoint")
        .arg(out_dir.join("model.ckpt"))
        .status()
        .unwrap();
    assert!(ok.success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("calibration_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["records"], 32);
    assert_eq!(manifest["conditional"], false);
    assert_eq!(manifest["strategy"], "pqd-normal");
    let hist: Vec<u64> = manifest["timestep_histogram_25"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(hist.iter().sum::<u64>(), 32);
}
