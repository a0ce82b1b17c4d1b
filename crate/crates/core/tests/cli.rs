use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn out_dir(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phtplate")).args(args).arg("--out").arg(out).output().unwrap()
}

fn model(name: &str) -> String {
    models().join(name).to_str().unwrap().to_string()
}

fn relaxed_square(dir: &Path) -> String {
    let text = std::fs::read_to_string(models().join("square.toml"))
        .unwrap()
        .replace("tau_lambda = 1e-4", "tau_lambda = 2e-3")
        .replace("tau_phi = 1e-2", "tau_phi = 5e-2");
    let p = dir.join("square_relaxed.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn solve_writes_spectrum_and_shape() {
    let d = out_dir("solve");
    let o = run(&["solve", "--model", &model("square.toml"), "--shape", "2", "--resolution", "5"], &d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("spectrum.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mode,frequency,lambda_n,reference");
    assert_eq!(lines.len(), 7);
    let f1: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((f1 - 0.29168).abs() < 1e-4);
    let shape = std::fs::read_to_string(d.join("mode_2.csv")).unwrap();
    assert_eq!(shape.lines().count(), 1 + 25);
}

#[test]
fn mac_shows_the_double_block() {
    let d = out_dir("mac");
    let o = run(&["mac", "--model", &model("square.toml"), "--band", "0.2:0.8"], &d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("mac.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        csv.lines().skip(1).map(|l| l.split(',').skip(1).map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0][0] > 0.999);
    let block: f64 = rows[1][1] + rows[1][2] + rows[2][1] + rows[2][2];
    assert!((block - 2.0).abs() < 1e-3, "{block}");
}

#[test]
fn adapt_converges_and_writes_trace() {
    let d = out_dir("adapt");
    let m = relaxed_square(&d);
    let o = run(&["adapt", "--model", &m, "--mode", "3", "--track", "mac"], &d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("mode set 2..3 (n = 2)"), "{stdout}");
    assert!(stdout.contains("converged"));
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert!(trace.lines().count() >= 2);
}

#[test]
fn verify_fails_on_a_coarse_mesh_with_code_3() {
    let d = out_dir("verify");
    let o = run(&["verify", "--model", &model("square.toml"), "--band", "0.2:0.5"], &d);
    assert_eq!(o.status.code(), Some(3));
    assert!(std::fs::read_to_string(d.join("verify.csv")).unwrap().contains("false"));
}

#[test]
fn sweep_writes_report_and_phases() {
    let d = out_dir("sweep");
    let m = relaxed_square(&d);
    let o = run(&["sweep", "--model", &m, "--band", "0.2:0.8", "--track", "fec", "--strategy", "sweep"], &d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let js: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(js["converged"], serde_json::Value::Bool(true));
    assert_eq!(js["phases"].as_array().unwrap().len(), 2);
    assert!(d.join("phase_001.csv").exists() && d.join("phase_002.csv").exists());
}

#[test]
fn table_uses_the_requested_dofs() {
    let d = out_dir("table");
    let o = run(
        &["table", "--model", &model("disk.toml"), "--dofs", "108", "--schemes", "gift,iga_nurbs", "--oracle-levels", "1:2"],
        &d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.contains("gift") && csv.contains("108"));
    assert!(d.join("table.json").exists() && d.join("reference.csv").exists());
}

#[test]
fn input_errors_exit_with_code_1() {
    let d = out_dir("errors");
    assert_eq!(run(&["solve", "--model", "/nonexistent.toml"], &d).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--model", &model("square.toml"), "--band", "nope"], &d).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--model", &model("square.toml"), "--band", "0.9:0.1"], &d).status.code(), Some(1));
    assert_eq!(run(&["adapt", "--model", &model("square.toml"), "--track", "xyz"], &d).status.code(), Some(1));
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "[geometry]\nkind = \"disk\"\nradius = -1.0\n[boundary]\ndefault = \"clamped\"\n[analysis]\nscheme = \"gift\"\n").unwrap();
    let o = run(&["solve", "--model", bad.to_str().unwrap()], &d);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert_eq!(run(&["table", "--model", &model("square.toml")], &d).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"], &d).status.code(), Some(1));
}
