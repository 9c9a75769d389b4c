use std::path::Path;
use std::process::{Command, Output};

use kgq_core::kernels::PeriodizedKernel;
use kgq_core::lattice::{ManifoldSpec, PinCharacter};
use kgq_core::specfun::KernelParams;
use tempfile::TempDir;

fn kgq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgq"))
        .current_dir(dir)
        .env_remove("KG_TOL")
        .env_remove("KG_THREADS")
        .args(args)
        .output()
        .expect("spawn kgq")
}

fn write(dir: &TempDir, name: &str, body: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn eval_row_matches_library() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "eval.json",
        r#"{"manifold": {"kind": "mobius", "n": 3, "k": 1}, "alpha": 1.25, "character": [1],
            "points": [[0.3, 0.2, -0.1]]}"#,
    );
    let out = kgq(dir.path(), &["--config", &cfg, "eval"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "x_1,x_2,x_3,value,tail,shells_used");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let got: f64 = row[3].parse().unwrap();

    let spec = ManifoldSpec::mobius(3, 1).unwrap();
    let k = PeriodizedKernel::new(spec, PinCharacter::contiguous(1), KernelParams::new(3, 1.25).unwrap()).unwrap();
    let want = k.value(&[0.3, 0.2, -0.1]).unwrap().value;
    assert_eq!(got, want);
    assert!(row[4].parse::<f64>().unwrap() < 1e-12);
}

#[test]
fn flags_override_config_and_output_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "eval.json", r#"{"points": [[0.5, 0.1, 0.2]]}"#);
    let out = kgq(dir.path(), &["--config", &cfg, "--alpha", "2", "--output", "values.csv", "eval"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let text = std::fs::read_to_string(dir.path().join("values.csv")).unwrap();
    let v: f64 = text.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();

    let spec = ManifoldSpec::mobius(3, 1).unwrap();
    let k = PeriodizedKernel::new(spec, PinCharacter::trivial(), KernelParams::new(3, 2.0).unwrap()).unwrap();
    assert_eq!(v, k.value(&[0.5, 0.1, 0.2]).unwrap().value);
}

#[test]
fn verify_periodic_suite() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "m.json", r#"{"manifold": {"kind": "mobius", "n": 3, "k": 2}}"#);
    let out = kgq(dir.path(), &["--config", &cfg, "verify", "--suite", "periodic", "--report", "r.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("PASS periodic"), "{text}");
    assert!(text.contains("4 characters x 2 generators"), "{text}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
}

#[test]
fn errors_carry_codes_and_exit_status() {
    let dir = TempDir::new().unwrap();

    let bad_alpha = kgq(dir.path(), &["--alpha", "-1", "eval"]);
    assert_eq!(bad_alpha.status.code(), Some(3));
    assert!(stderr(&bad_alpha).contains("error[E_PARAM]"), "{}", stderr(&bad_alpha));
    assert!(stderr(&bad_alpha).contains(r#""code":"E_PARAM""#));

    let cfg = write(&dir, "bad.json", r#"{"alpah": 1.0}"#);
    let unknown = kgq(dir.path(), &["--config", &cfg, "eval"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("error[E_CONFIG]"));

    let missing = kgq(dir.path(), &["--config", "nope.json", "eval"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("error[E_IO]"));

    let cfg = write(&dir, "fixed.json", r#"{"points": [[0.5, 0.1, 0.2]]}"#);
    let short = kgq(dir.path(), &["--config", &cfg, "--mode", "fixed-radius", "--radius", "1", "eval"]);
    assert_eq!(short.status.code(), Some(3));
    assert!(stderr(&short).contains("error[E_NOT_CERTIFIED]"));
}

#[test]
fn threads_env_is_rejected_when_zero() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kgq"))
        .current_dir(dir.path())
        .env("KG_THREADS", "0")
        .args(["eval"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_recovers_coefficients_from_csv() {
    let dir = TempDir::new().unwrap();
    let spec = ManifoldSpec::klein(2).unwrap();
    let k = PeriodizedKernel::new(spec, PinCharacter::trivial(), KernelParams::new(2, 2.0).unwrap()).unwrap();
    let pole = [0.3, 0.4];
    let mut csv = String::from("x_1,x_2,f\n");
    for i in 0..24 {
        for j in 0..2 {
            let x = [0.05 + 0.04 * i as f64, 0.9 + 0.5 * j as f64];
            let f = 1.5 * k.green(&x, &pole).unwrap().value;
            csv.push_str(&format!("{:.17e},{:.17e},{:.17e}\n", x[0], x[1], f));
        }
    }
    write(&dir, "samples.csv", &csv);
    let cfg = write(
        &dir,
        "fit.json",
        r#"{"manifold": {"kind": "klein", "n": 2}, "alpha": 2.0, "samples_path": "samples.csv",
            "fit": {"poles": [[0.3, 0.4]], "max_order": 1}}"#,
    );
    let out = kgq(dir.path(), &["--config", &cfg, "--report", "fit.json.out", "fit"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<Vec<String>> =
        text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let c: f64 = r.last().unwrap().parse().unwrap();
        let want = if r[1] == "0" && r[2] == "0" { 1.5 } else { 0.0 };
        assert!((c - want).abs() < 1e-8, "{r:?}");
    }
}
