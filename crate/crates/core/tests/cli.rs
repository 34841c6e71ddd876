use std::path::Path;
use std::process::{Command, Output};

fn qrobust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrobust")).args(args).output().expect("spawn qrobust")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn optimize_is_reproducible_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = qrobust(&["optimize", "--seed", "7", "--out", path(out), "--parallel", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = std::fs::read(a.join("field.csv")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("field.csv")).unwrap());
    let text = String::from_utf8(fa).unwrap();
    assert!(text.starts_with("t,eps_1\n"));
    let first = text.lines().nth(1).unwrap();
    let mantissa = first.split(',').nth(1).unwrap().split('e').next().unwrap();
    assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17, "{first}");

    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config"]["seed"], 7);
    assert_eq!(summary["config"]["system"]["total_time"], 1.0);
    assert!(summary["result"]["j_final"].as_f64().unwrap() < 1e-6);
}

#[test]
fn robustness_and_spectrum_on_optimized_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert!(qrobust(&["optimize", "--out", path(out)]).status.success());
    let field = out.join("field.csv");

    let o = qrobust(&["robustness", "--field", path(&field), "--out", path(out), "--samples", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&out.join("robustness.json"));
    assert!(report["config"]["noise"].is_object());
    let text = report["result"].to_string();
    assert!(text.contains("monte_carlo") || text.contains("MonteCarlo"), "{text}");
    let overlap = std::fs::read_to_string(out.join("overlap_additive.csv")).unwrap();
    assert!(overlap.starts_with("i,j,"));

    let o = qrobust(&["spectrum", "--field", path(&field), "--out", path(out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["hessian_eigenvalues.csv", "noise_eigenvalues.csv", "frequency.csv", "spectrum.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn small_ensemble_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[ensemble]\nmembers = 3\n\n[noise]\nalpha_grid = [0.01, 1.0]\n").unwrap();
    let out = dir.path().join("out");
    let o = qrobust(&["ensemble", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stats = std::fs::read_to_string(out.join("ensemble_stats.csv")).unwrap();
    // header plus 2 alphas x 2 couplings
    assert_eq!(stats.lines().count(), 5, "{stats}");
    let regimes = json(&out.join("regime_summary.json"));
    assert_eq!(regimes["config"]["ensemble"]["members"], 3);
}

#[test]
fn malformed_config_is_rejected_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");

    std::fs::write(&cfg, "[noise]\na_sq = -1.0\n").unwrap();
    let o = qrobust(&["optimize", "--config", path(&cfg), "--out", path(dir.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("a_sq"), "{}", stderr(&o));

    std::fs::write(&cfg, "[system]\nbogus = 1\n").unwrap();
    let o = qrobust(&["optimize", "--config", path(&cfg), "--out", path(dir.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn field_on_wrong_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("short.csv");
    std::fs::write(&field, "t,eps_1\n0.01,1.0\n0.02,1.0\n0.03,1.0\n").unwrap();
    let o = qrobust(&["robustness", "--field", path(&field), "--out", path(dir.path())]);
    assert!(!o.status.success());
    assert!(stderr(&o).to_lowercase().contains("grid"), "{}", stderr(&o));
}
