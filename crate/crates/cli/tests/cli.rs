use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;
use shtrans_cli::{run, Cli, RunManifest, EXIT_CONFIG, EXIT_IO};
use shtrans_core::dataset::read_shard;
use shtrans_core::{Error, Result};
use shtrans_nn::train::CheckpointManifest;
use shtrans_nn::Curriculum;
use tempfile::TempDir;

fn shtrans(args: &[&str]) -> Result<RunManifest> {
    let cli = Cli::try_parse_from(std::iter::once("shtrans").chain(args.iter().copied())).expect("valid arguments");
    run(&cli)
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).display().to_string()
}

/// Small 2 → 4 dataset on an 8-bin grid.
fn small_data(dir: &Path, extra: &[&str]) -> RunManifest {
    let out = p(dir, "data");
    let mut args = vec![
        "gen-data", "--n-in", "2", "--n-out", "4", "--k-bins", "8", "--freq-step", "400", "--q-min", "4", "--q-max", "5",
        "--train-count", "6", "--val-count", "2", "--test-count", "4", "--out", &out,
    ];
    args.extend_from_slice(extra);
    shtrans(&args).unwrap()
}

fn avg_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .filter(|r| r[3] == "mean")
        .collect()
}

#[test]
fn default_config_shards() {
    let dir = TempDir::new().unwrap();
    let out = p(dir.path(), "d");
    let m = shtrans(&["gen-data", "--count", "2", "--out", &out]).unwrap();
    assert_eq!(m.outputs.len(), 3);
    let shard = read_shard(&dir.path().join("d/train.shard")).unwrap();
    assert_eq!((shard.header.freqs.len(), shard.header.n_in, shard.header.n_out), (30, 4, 8));
    assert_eq!(shard.examples.len(), 2);
}

#[test]
fn zero_count_gives_empty_shards() {
    let dir = TempDir::new().unwrap();
    let out = p(dir.path(), "d");
    shtrans(&["gen-data", "--count", "0", "--out", &out]).unwrap();
    for split in ["train", "val", "test"] {
        assert_eq!(read_shard(&dir.path().join(format!("d/{split}.shard"))).unwrap().examples.len(), 0);
    }
    let lsm_out = p(dir.path(), "l");
    shtrans(&["lsm", "--shard", &p(dir.path(), "d/test.shard"), "--out", &lsm_out]).unwrap();
}

#[test]
fn gen_data_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = small_data(dir.path(), &[]);
    let b = shtrans(&[
        "gen-data", "--n-in", "2", "--n-out", "4", "--k-bins", "8", "--freq-step", "400", "--q-min", "4", "--q-max", "5",
        "--train-count", "6", "--val-count", "2", "--test-count", "4", "--out", &p(dir.path(), "again"),
    ])
    .unwrap();
    assert_eq!(a.input_hash, b.input_hash);
    assert_eq!(a.output_hash, b.output_hash);
    let c = small_data(dir.path(), &["--seed", "9"]);
    assert_ne!(a.output_hash, c.output_hash);
}

#[test]
fn config_file_and_flags_compose() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_in": 1, "n_out": 3, "k_bins": 4, "freq_hi": 400.0, "seed": 5}"#).unwrap();
    let out = p(dir.path(), "d");
    let m = shtrans(&["gen-data", "--config", cfg.to_str().unwrap(), "--n-out", "2", "--count", "1", "--out", &out]).unwrap();
    assert_eq!(m.config["n_in"], 1);
    assert_eq!(m.config["n_out"], 2);
    assert_eq!(m.config["seed"], 5);
    assert_eq!(m.inputs.len(), 1);
    fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    let err = shtrans(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", &out]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn lsm_exact_recovery_and_lambda_sweep() {
    let dir = TempDir::new().unwrap();
    // low k·d keeps the order-8 truncation of the plane-wave target negligible
    small_data(dir.path(), &["--noise-free", "--q-min", "8", "--q-max", "8", "--dist-min", "0.05", "--dist-max", "0.1", "--freq-lo", "50", "--freq-step", "50", "--k-bins", "3"]);
    let shard = p(dir.path(), "data/test.shard");
    let out = p(dir.path(), "clean");
    shtrans(&["lsm", "--shard", &shard, "--lambda", "0", "--lambda-mode", "fixed", "--out", &out]).unwrap();
    let rows = avg_rows(&fs::read_to_string(dir.path().join("clean/report.csv")).unwrap());
    assert_eq!(rows.len(), 1);
    let coss: f64 = rows[0][5].parse().unwrap();
    assert!(coss >= 0.999, "COSS {coss}");

    let out = p(dir.path(), "sweep");
    let m = shtrans(&["lsm", "--shard", &shard, "--lambda", "1e-4,1e-2,1", "--out", &out]).unwrap();
    let rows = avg_rows(&fs::read_to_string(dir.path().join("sweep/report.csv")).unwrap());
    assert_eq!(rows.iter().map(|r| r[2].as_str()).collect::<Vec<_>>(), ["0.0001", "0.01", "1"]);
    let cond = fs::read_to_string(dir.path().join("sweep/condition.csv")).unwrap();
    assert_eq!(cond.lines().count(), 1 + 3 * 4 * 3);
    // 3 λ × 4 examples × 3 bins × 25 coefficients × 16 bytes
    assert_eq!(fs::metadata(dir.path().join("sweep/estimates.bin")).unwrap().len(), 3 * 4 * 3 * 25 * 16);
    assert!(m.outputs.iter().any(|o| o.path == "condition.csv"));
}

#[test]
fn lsm_rejects_order_mismatch() {
    let dir = TempDir::new().unwrap();
    small_data(dir.path(), &[]);
    let err = shtrans(&["lsm", "--shard", &p(dir.path(), "data/test.shard"), "--n-in", "4", "--out", &p(dir.path(), "l")]).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
}

fn checkpoint_manifest(dir: &Path) -> CheckpointManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("checkpoint/manifest.json")).unwrap()).unwrap()
}

#[test]
fn single_layer_ladder_and_default_curriculum() {
    let dir = TempDir::new().unwrap();
    shtrans(&["gen-data", "--k-bins", "2", "--q-min", "4", "--q-max", "4", "--count", "1", "--out", &p(dir.path(), "d")]).unwrap();
    let out = p(dir.path(), "t");
    shtrans(&["train", "--train", &p(dir.path(), "d/train.shard"), "--layers", "1", "--max-steps", "1", "--out", &out]).unwrap();
    let ck = checkpoint_manifest(&dir.path().join("t"));
    let ladder: Vec<(u32, u32)> = ck.model.layers.iter().map(|l| (l.order_in, l.order_out)).collect();
    assert_eq!(ladder, [(4, 8), (8, 8)]);
    assert_eq!(ck.train.curriculum, Curriculum::Lrg2Sml);
    assert_eq!(ck.state.step, 1);
}

#[test]
fn interrupted_training_resumes_identically() {
    let dir = TempDir::new().unwrap();
    small_data(dir.path(), &[]);
    let train = p(dir.path(), "data/train.shard");
    let val = p(dir.path(), "data/val.shard");
    let common = ["--val", &val, "--layers", "1", "--epochs-per-stage", "2", "--batch-size", "2", "--j-hidden", "4", "--y-hidden", "4", "--tac-hidden", "8"];
    let full = p(dir.path(), "full");
    let mut args = vec!["train", "--train", &train, "--out", &full];
    args.extend_from_slice(&common);
    shtrans(&args).unwrap();

    let part = p(dir.path(), "part");
    let mut args = vec!["train", "--train", &train, "--out", &part, "--stop-after-epochs", "1"];
    args.extend_from_slice(&common);
    shtrans(&args).unwrap();
    assert_eq!(checkpoint_manifest(&dir.path().join("part")).state.epoch, 1);
    let mut args = vec!["train", "--train", &train, "--out", &part, "--resume"];
    args.extend_from_slice(&common);
    shtrans(&args).unwrap();

    let read = |d: &str, f: &str| fs::read(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("full", "loss.csv"), read("part", "loss.csv"));
    assert_eq!(read("full", "checkpoint/params.bin"), read("part", "checkpoint/params.bin"));
    assert_eq!(read("full", "checkpoint/optimizer.bin"), read("part", "checkpoint/optimizer.bin"));
}

/// Tiny 2 → 4 checkpoint trained on Q ∈ {4, 5}.
fn tiny_checkpoint(dir: &Path) -> String {
    small_data(dir, &[]);
    let out = p(dir, "tt");
    shtrans(&[
        "train", "--train", &p(dir, "data/train.shard"), "--layers", "1", "--max-steps", "2", "--j-hidden", "4", "--y-hidden", "4",
        "--tac-hidden", "8", "--out", &out,
    ])
    .unwrap();
    p(dir, "tt/checkpoint")
}

#[test]
fn eval_sweeps() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let grid = ["--n-in", "2", "--n-out", "4", "--k-bins", "8", "--freq-step", "400", "--region-step", "0.1"];
    let out = p(dir.path(), "snr");
    let mut args = vec!["eval", "--method", "lsm,oracle", "--sweep", "snr", "10,20,30", "--count", "3", "--out", &out];
    args.extend_from_slice(&grid);
    shtrans(&args).unwrap();
    let rows = avg_rows(&fs::read_to_string(dir.path().join("snr/report.csv")).unwrap());
    assert_eq!(rows.len(), 6);
    for r in rows.iter().filter(|r| r[0] == "oracle") {
        let (edm, coss, sdr): (f64, f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap(), r[6].parse().unwrap());
        assert_eq!((edm, coss, sdr), (0.0, 1.0, 300.0));
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("snr/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["groups"].as_array().unwrap().len(), 6);

    let out = p(dir.path(), "q");
    let mut args = vec!["eval", "--method", "lsm,ttnet", "--checkpoint", &ckpt, "--sweep", "q", "4,7,10,13", "--count", "2", "--out", &out];
    args.extend_from_slice(&grid);
    shtrans(&args).unwrap();
    let rows = avg_rows(&fs::read_to_string(dir.path().join("q/report.csv")).unwrap());
    let ttnet_qs: Vec<&str> = rows.iter().filter(|r| r[0] == "ttnet").map(|r| r[2].as_str()).collect();
    assert_eq!(ttnet_qs, ["4", "7", "10", "13"]);
    assert!(rows.iter().all(|r| r[5].parse::<f64>().unwrap().is_finite()));
}

#[test]
fn eval_rejects_incompatible_checkpoint() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    shtrans(&["gen-data", "--k-bins", "2", "--count", "1", "--out", &p(dir.path(), "big")]).unwrap();
    let err = shtrans(&[
        "eval", "--method", "ttnet", "--checkpoint", &ckpt, "--shard", &p(dir.path(), "big/test.shard"), "--out", &p(dir.path(), "e"),
    ])
    .unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("incompatible")), "{err}");
}

fn write_scene(dir: &Path) -> String {
    let scene = dir.join("scene.json");
    fs::write(
        &scene,
        r#"{"sources": [{"arrival_azimuth_deg": 30.0, "arrival_elevation_deg": 10.0, "amplitude": 1.0},
                        {"direction": [0.0, 0.0, -1.0], "amplitude": 0.5}],
            "sample_points": [[0.3,0,0],[-0.3,0,0],[0,0.3,0],[0,-0.3,0],[0,0,0.3],[0,0,-0.3],[0.2,0.2,0.2],[-0.2,-0.2,0.2]]}"#,
    )
    .unwrap();
    scene.display().to_string()
}

#[test]
fn render_triple() {
    let dir = TempDir::new().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let scene = write_scene(dir.path());
    let out = p(dir.path(), "r");
    let m = shtrans(&[
        "render", "--scene", &scene, "--freq", "900,1700", "--n-in", "2", "--n-out", "4", "--k-bins", "8", "--freq-step", "400",
        "--checkpoint", &ckpt, "--out", &out,
    ])
    .unwrap();
    assert_eq!(m.outputs.len(), 6);
    let csv = fs::read_to_string(dir.path().join("r/ideal_900hz.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 101 * 101);
    assert!(dir.path().join("r/ttnet_1700hz.csv").exists());
}

#[test]
fn render_plane_size_and_off_grid_frequency() {
    let dir = TempDir::new().unwrap();
    let scene = write_scene(dir.path());
    let out = p(dir.path(), "r");
    shtrans(&["render", "--scene", &scene, "--freq", "1000", "--extent", "2.0", "--step", "0.02", "--methods", "ideal", "--out", &out]).unwrap();
    let csv = fs::read_to_string(dir.path().join("r/ideal_1000hz.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 101 * 101);
    let err = shtrans(&["render", "--scene", &scene, "--freq", "1750", "--out", &out]).unwrap_err();
    assert!(err.to_string().contains("frequency 1750 Hz not on grid"), "{err}");
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_shtrans");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["gen-data", "--count", "0", "--out", &p(dir.path(), "d")]), Some(0));
    assert_eq!(status(&["gen-data", "--n-in", "5", "--n-out", "4", "--out", &p(dir.path(), "x")]), Some(EXIT_CONFIG as i32));
    assert_eq!(status(&["lsm", "--shard", &p(dir.path(), "missing.shard"), "--out", &p(dir.path(), "x")]), Some(EXIT_IO as i32));
    fs::write(dir.path().join("junk.shard"), b"not a shard at all").unwrap();
    assert_eq!(status(&["lsm", "--shard", &p(dir.path(), "junk.shard"), "--out", &p(dir.path(), "x")]), Some(EXIT_IO as i32));
    assert_eq!(status(&["eval", "--out", &p(dir.path(), "x")]), Some(EXIT_CONFIG as i32));
    assert_eq!(status(&["no-such-command"]), Some(EXIT_CONFIG as i32));
}
