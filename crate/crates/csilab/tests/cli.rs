//! End-to-end smoke tests of the `csilab` binary through temp directories.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csilab"))
}

fn write_scenario(path: &Path) {
    let text = r#"{
        "array": {"n_bs_antennas": 8, "n_ue_antennas": 1, "spacing_over_wavelength": 0.5},
        "ofdm": {"n_subcarriers": 32, "sample_rate": 20e6},
        "path_count_range": [2, 8],
        "delay_spread": 120e-9,
        "angle_spread": 0.06,
        "cluster_count": 3,
        "rng_seed": 7,
        "scenario_id": "smoke"
    }"#;
    std::fs::write(path, text).unwrap();
}

#[test]
fn gen_train_compress_decompress_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario);
    let dataset = dir.path().join("data");
    let status = bin()
        .args(["gen", "--n", "60"])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&dataset)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dataset.join("manifest.json").is_file());
    assert!(dataset.join("tensors.bin").is_file());

    let ckpt = dir.path().join("ckpt");
    let status = bin()
        .args(["train", "--lambda", "0.05", "--epochs", "1", "--batch-size", "20"])
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(ckpt.join("arch.json").is_file());
    assert!(ckpt.join("weights.bin").is_file());

    let bs = dir.path().join("s0.csib");
    let status = bin()
        .args(["compress", "--index", "3"])
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&bs)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(bs.is_file());
    assert!(dir.path().join("s0.json").is_file());

    let rec = dir.path().join("s0.bin");
    let out = bin()
        .args(["decompress", "--index", "3"])
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--input")
        .arg(&bs)
        .arg("--out")
        .arg(&rec)
        .arg("--reference")
        .arg(&dataset)
        .output()
        .unwrap();
    assert!(out.status.success());
    // 32 x 8 complex entries as two f32 planes
    assert_eq!(std::fs::metadata(&rec).unwrap().len(), 32 * 8 * 2 * 4);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("NMSE"), "stdout: {text}");
}

#[test]
fn pilots_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario);
    let dataset = dir.path().join("data");
    assert!(bin()
        .args(["gen", "--n", "16"])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&dataset)
        .status()
        .unwrap()
        .success());
    let csv = dir.path().join("pilots.csv");
    assert!(bin()
        .args(["pilots", "--pilot-len", "8", "--snr-db", "10", "--bits", "8"])
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&csv)
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() > 16);
}

#[test]
fn sweep_and_plot_produce_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario);
    let spec = dir.path().join("sweep.json");
    let scenario_text = std::fs::read_to_string(&scenario).unwrap();
    let text = format!(
        r#"{{
            "axis": "keep_fraction",
            "values": [0.05, 0.2],
            "trials": 1,
            "scenario": {scenario_text},
            "checkpoints": [],
            "seed": 1,
            "n_test": 8
        }}"#
    );
    std::fs::write(&spec, text).unwrap();
    let csv = dir.path().join("rd.csv");
    let json = dir.path().join("rd.json");
    let png = dir.path().join("rd.png");
    assert!(bin()
        .arg("sweep")
        .arg("--spec")
        .arg(&spec)
        .arg("--out-csv")
        .arg(&csv)
        .arg("--out-json")
        .arg(&json)
        .arg("--plot")
        .arg(&png)
        .status()
        .unwrap()
        .success());
    let body = std::fs::read_to_string(&csv).unwrap();
    assert!(body.starts_with("axis_value,trial,bits_per_entry,nmse_db,delivered"));
    assert_eq!(body.lines().count(), 3);
    assert!(std::fs::read(&png).unwrap().starts_with(&[0x89, b'P', b'N', b'G']));
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(parsed["version"].as_str().unwrap().starts_with("csilab-v"));

    let png2 = dir.path().join("rd2.png");
    assert!(bin()
        .arg("plot")
        .arg("--csv")
        .arg(&csv)
        .arg("--out")
        .arg(&png2)
        .status()
        .unwrap()
        .success());
    assert!(png2.is_file());
}

#[test]
fn missing_input_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["plot", "--out", "x.png", "--csv"])
        .arg(dir.path().join("nope.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn corrupt_bitstream_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.json");
    write_scenario(&scenario);
    let dataset = dir.path().join("data");
    assert!(bin()
        .args(["gen", "--n", "30"])
        .arg("--scenario")
        .arg(&scenario)
        .arg("--out")
        .arg(&dataset)
        .status()
        .unwrap()
        .success());
    let ckpt = dir.path().join("ckpt");
    assert!(bin()
        .args(["train", "--epochs", "1", "--batch-size", "10"])
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&ckpt)
        .status()
        .unwrap()
        .success());
    let bs = dir.path().join("s.csib");
    assert!(bin()
        .arg("compress")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&dataset)
        .arg("--out")
        .arg(&bs)
        .status()
        .unwrap()
        .success());
    let mut bytes = std::fs::read(&bs).unwrap();
    bytes[0] ^= 0xFF; // break the magic
    std::fs::write(&bs, &bytes).unwrap();
    let status = bin()
        .arg("decompress")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--input")
        .arg(&bs)
        .arg("--out")
        .arg(dir.path().join("r.bin"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
