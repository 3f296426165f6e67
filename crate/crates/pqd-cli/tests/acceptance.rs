//! Acceptance gate for the binary: repeated pipeline runs must produce
//! byte-identical comparison tables.

use std::path::Path;
use std::process::Command;

fn pqd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pqd"))
}

/// A shrunk config so two full pipeline runs stay fast; determinism does
/// not depend on the problem size.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let out = pqd().arg("defaults").output().unwrap();
    assert!(out.status.success());
    let mut cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    cfg["schedule"]["num_steps"] = 50.into();
    cfg["data"]["n_train"] = 512.into();
    cfg["data"]["n_reference"] = 256.into();
    cfg["train"]["num_iterations"] = 300.into();
    cfg["calibration"]["n"] = 64.into();
    cfg["calibration"]["num_steps"] = 50.into();
    cfg["calibration"]["num_inference_steps"] = 25.into();
    cfg["eval"]["n_samples"] = 256.into();
    cfg["eval"]["n_projections"] = 16.into();
    cfg["eval"]["num_inference_steps"] = 25.into();
    cfg["bit_grid"] = serde_json::json!([[32, 32], [8, 8]]);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn criterion_8_reproduce_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let mut tables = Vec::new();
    for run in ["first", "second"] {
        let out_dir = tmp.path().join(run);
        let out = pqd()
            .args(["reproduce", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "reproduce failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        tables.push(std::fs::read(out_dir.join("comparison.csv")).unwrap());
    }
    let ok = tables[0] == tables[1] && !tables[0].is_empty();
    let header = String::from_utf8_lossy(&tables[0]);
    assert!(header.starts_with(
        "strategy,weight_bits,act_bits,size_bits,bops_per_step,sliced_wasserstein,mmd,seed\n"
    ));
    println!(
        "criterion 8 (byte-identical repeated runs): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion 8 failed: comparison tables differ");
}
