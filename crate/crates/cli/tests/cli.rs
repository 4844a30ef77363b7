use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest_sum(dir: &Path) -> String {
    fs::read_to_string(dir.join("manifest.txt"))
        .unwrap()
        .lines()
        .find(|l| l.starts_with("sha256"))
        .unwrap()
        .to_string()
}

#[test]
fn solve_mfg_converges_and_is_deterministic() {
    let cfg = config("model_a.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let o = mfg(&["--config", s(&cfg), "--out", s(dir), "--seed", "5", "solve-mfg"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let report = fs::read_to_string(a.path().join("report.txt")).unwrap();
    assert!(report.contains("converged = true"), "{report}");
    assert_eq!(manifest_sum(&a.path().join("m")), manifest_sum(&b.path().join("m")));
    assert_eq!(manifest_sum(&a.path().join("u")), manifest_sum(&b.path().join("u")));
    let log = fs::read_to_string(a.path().join("run.log")).unwrap();
    assert!(log.contains("hypotheses:") && log.contains("default: solver.quadrature_order = 16"));

    let w = tempfile::tempdir().unwrap();
    let o = mfg(&["--out", s(w.path()), "wasserstein", s(&a.path().join("m")), s(&b.path().join("m"))]);
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(w.path().join("wasserstein.csv")).unwrap();
    assert_eq!(table.lines().nth(1), Some("0,1,0e0"));
}

#[test]
fn verify_sde_on_missing_directory_is_a_configuration_error() {
    let out = tempfile::tempdir().unwrap();
    let o = mfg(&[
        "--config",
        s(&config("model_a.toml")),
        "--out",
        s(out.path()),
        "verify-sde",
        "--from",
        "/definitely/not/here",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn planted_negative_density_is_a_contract_failure() {
    let out = tempfile::tempdir().unwrap();
    let o = mfg(&["--config", s(&config("model_a.toml")), "--out", s(out.path()), "solve-fp", "--inject-negative"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("negative density"));
    let clean = mfg(&["--config", s(&config("model_a.toml")), "--out", s(out.path()), "solve-fp"]);
    assert_eq!(code(&clean), 0);
}

#[test]
fn invalid_configurations_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("model_a.toml")).unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, text.replace("lambda1 = 1.0", "lambda1 = 3.0")).unwrap();
    let o = mfg(&["--config", s(&bad), "--out", s(dir.path()), "solve-hjb"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ControlBounds"));

    fs::write(&bad, text.replace("nt = 640", "nt = 100")).unwrap();
    let o = mfg(&["--config", s(&bad), "--out", s(dir.path()), "solve-hjb"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("minimal admissible nt = "));

    let o = mfg(&["solve-hjb"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn solve_hjb_and_diagnose_write_tables() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config("heat.toml");
    let o = mfg(&["--config", s(&cfg), "--out", s(out.path()), "solve-hjb"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let residual = fs::read_to_string(out.path().join("residual.csv")).unwrap();
    assert_eq!(residual.lines().count(), 2050);
    let o = mfg(&["--config", s(&cfg), "--out", s(out.path()), "diagnose", "--from", s(out.path())]);
    assert_eq!(code(&o), 0);
    let reg = fs::read_to_string(out.path().join("regularity.csv")).unwrap();
    assert!(reg.contains("lipschitz") && reg.contains("three_point"));
}
