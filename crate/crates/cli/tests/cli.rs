use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cylshear"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cylshear")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

const GRID: [&str; 6] = ["--dims", "16,16,16", "--frames", "4", "--stages", "3"];

fn simulate(dir: &TempDir, seed: &str) -> String {
    let stem = p(dir, "sino");
    let mut args = vec!["simulate", "--seed", seed, "--angles", "8", "--out", &stem];
    args.extend(GRID);
    ok(&args);
    stem
}

fn read_json(path: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn phantom_writes_volume_spec_and_provenance() {
    let dir = TempDir::new().unwrap();
    let stem = p(&dir, "ph");
    let mut args = vec!["phantom", "--out", &stem];
    args.extend(GRID);
    ok(&args);
    for suffix in [".raw", ".json", "_spec.json", "_provenance.json"] {
        assert!(Path::new(&format!("{stem}{suffix}")).exists(), "missing {suffix}");
    }
    let prov = read_json(&format!("{stem}_provenance.json"));
    assert_eq!(prov["command"], "phantom");
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let sa = simulate(&a, "7");
    let sb = simulate(&b, "7");
    let sc = simulate(&c, "8");
    let ra = std::fs::read(format!("{sa}.raw")).unwrap();
    assert_eq!(ra, std::fs::read(format!("{sb}.raw")).unwrap());
    assert_ne!(ra, std::fs::read(format!("{sc}.raw")).unwrap());
    assert!(Path::new(&format!("{sa}_truth.raw")).exists());
}

#[test]
fn reconstruct_writes_history_metrics_and_slices() {
    let dir = TempDir::new().unwrap();
    let sino = simulate(&dir, "1");
    let rec = p(&dir, "rec");
    let png = p(&dir, "png");
    let truth = format!("{sino}_truth");
    ok(&[
        "reconstruct", "--sino", &sino, "--reg", "dwt4", "--dwt-levels", "2", "--max-iters", "5",
        "--truth", &truth, "--png", &png, "--checkpoint-every", "2", "--out", &rec,
    ]);
    let hist = std::fs::read_to_string(format!("{rec}_history.csv")).unwrap();
    assert!(hist.starts_with("iteration,objective"));
    assert_eq!(hist.lines().count(), 1 + 6);
    let m = read_json(&format!("{rec}_metrics.json"));
    assert!(m["psnr_db"].as_f64().unwrap().is_finite());
    assert!(Path::new(&format!("{rec}_iter0002.raw")).exists());
    assert_eq!(std::fs::read_dir(&png).unwrap().count(), 4);

    let out = ok(&["metrics", "--recon", &rec, "--truth", &truth]);
    let again: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // The saved volume is float32, so the figures agree only to storage precision.
    let (a, b) = (again["psnr_db"].as_f64().unwrap(), m["psnr_db"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
}

#[test]
fn transform_forward_then_inverse_round_trips() {
    let dir = TempDir::new().unwrap();
    let stem = p(&dir, "ph");
    let mut args = vec!["phantom", "--out", &stem];
    args.extend(GRID);
    ok(&args);
    let coeffs = p(&dir, "coeffs");
    let back = p(&dir, "back");
    ok(&["transform", "fwd", "--input", &stem, "--shear-radii", "1", "--out", &coeffs]);
    ok(&["transform", "inv", "--input", &coeffs, "--shear-radii", "1", "--out", &back]);
    let out = ok(&["metrics", "--recon", &back, "--truth", &stem]);
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // A float32 round trip: limited by storage precision.
    let psnr = m["psnr_db"].as_f64().unwrap_or(f64::INFINITY);
    assert!(psnr > 100.0, "psnr {psnr}");
}

#[test]
fn approx_writes_curves_and_rejects_a_one_point_ladder() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "approx");
    ok(&[
        "approx", "--dims", "16,16,16", "--frames", "4", "--ladder", "16:1024:4", "--shear-radii", "1",
        "--dwt-levels", "2", "--out", &out,
    ]);
    let csv = std::fs::read_to_string(format!("{out}/curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    let slopes = read_json(&format!("{out}/slopes.json"));
    assert_eq!(slopes.as_array().unwrap().len(), 2);

    let bad = run(&["approx", "--dims", "16,16,16", "--frames", "4", "--ladder", "16:16:1", "--out", &out]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "cfg.json");
    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(run(&["--config", &cfg, "phantom"]).status.code(), Some(2));
    assert_eq!(run(&["phantom", "--stages", "4"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_code_4() {
    let dir = TempDir::new().unwrap();
    let out = run(&["metrics", "--recon", &p(&dir, "nope"), "--truth", &p(&dir, "nope")]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn config_file_values_are_used_and_flags_override_them() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "cfg.json");
    std::fs::write(&cfg, r#"{"dims": [16, 16, 16], "frames": 4, "stages": 3, "seed": 11}"#).unwrap();
    let stem = p(&dir, "ph");
    ok(&["--config", &cfg, "phantom", "--frames", "2", "--out", &stem]);
    let prov = read_json(&format!("{stem}_provenance.json"));
    assert_eq!(prov["config"]["frames"], 2);
    assert_eq!(prov["config"]["dims"][0], 16);
    assert_eq!(prov["seed"], 11);
}
