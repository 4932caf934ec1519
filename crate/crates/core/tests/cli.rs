use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn hkflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkflow")).args(args).env("HKFLOW_LOG", "error").output().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn two_dirac_distance_matches_closed_form() {
    let out = tempfile::tempdir().unwrap();
    let cfg = fixture("two_dirac.json");
    let o = hkflow(&["--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "distance"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.path().join("distance.json"));
    // Masses 1 and 2 at distance 1.
    let want = 3.0 - 2.0 * 2f64.sqrt() * 1f64.cos();
    assert!((v["hk2"].as_f64().unwrap() - want).abs() < 1e-9);
    assert!(out.path().join("manifest.json").exists());
}

#[test]
fn appendix_check_locates_violation_below_one_half() {
    let out = tempfile::tempdir().unwrap();
    let o = hkflow(&["--out", out.path().to_str().unwrap(), "appendix-check", "--p", "0.4"]);
    assert_eq!(o.status.code(), Some(1));
    let v = read_json(&out.path().join("appendix.json"));
    let w = &v["results"][0]["report"]["witness"];
    assert!(w[1].as_f64().unwrap() > 3.0 && w[2].as_f64().unwrap() < 1.0);
    let ok = hkflow(&["--out", out.path().to_str().unwrap(), "appendix-check", "--p", "0.5,1.0"]);
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn malformed_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("out");
    for verb in ["distance", "mm-run", "pde-compare", "convergence-study"] {
        let o = hkflow(&["--config", empty.to_str().unwrap(), "--out", out.to_str().unwrap(), verb]);
        assert_eq!(o.status.code(), Some(2), "{verb}");
    }
    let unknown = dir.path().join("unknown.json");
    let mut v = read_json(&fixture("two_dirac.json"));
    v["colour"] = serde_json::json!("blue");
    std::fs::write(&unknown, v.to_string()).unwrap();
    let o = hkflow(&["--config", unknown.to_str().unwrap(), "--out", out.to_str().unwrap(), "distance"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(hkflow(&["distance"]).status.code(), Some(2));
    assert_eq!(hkflow(&["--tol-scale", "-1", "appendix-check"]).status.code(), Some(2));
}

#[test]
fn exact_solver_rejects_large_support_with_solver_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.json");
    let dom = serde_json::json!({ "lower": [0.0], "upper": [1.0], "nodes": [10] });
    let v = serde_json::json!({
        "mu0": { "domain": dom, "density": vec![1.0; 10] },
        "mu1": { "domain": dom, "density": vec![2.0; 10] },
        "solver": "exact"
    });
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = hkflow(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "distance"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mm_run_then_evi_check_and_manifest_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mm = dir.path().join("mm");
    let cfg = fixture("mm_run_hk.json");
    let o = hkflow(&["--config", cfg.to_str().unwrap(), "--out", mm.to_str().unwrap(), "mm-run"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let steps = std::fs::read_to_string(mm.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().next().unwrap(), "k,d2,energy,min_rho,max_rho,slope_surrogate,converged");
    assert_eq!(steps.lines().count(), 11);

    let evi = dir.path().join("evi");
    let run = mm.join("run.json");
    let o = hkflow(&["--out", evi.to_str().unwrap(), "evi-check", "--trajectory", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(evi.join("residuals.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "s,t,observer_id,residual_lambda_star,residual_lambda");
    // 3 observers × 11·10/2 pairs
    assert_eq!(csv.lines().count(), 1 + 3 * 55);
    assert_eq!(read_json(&evi.join("summary.json"))["budget"]["pass"], true);

    assert_eq!(hkflow(&["--out", mm.to_str().unwrap(), "validate"]).status.code(), Some(0));
    std::fs::write(mm.join("steps.csv"), "tampered\n").unwrap();
    assert_eq!(hkflow(&["--out", mm.to_str().unwrap(), "validate"]).status.code(), Some(1));
}

#[test]
fn geometry_probe_reports_worst_residual() {
    let dir = tempfile::tempdir().unwrap();
    for (space, check) in [("euclid", "lac"), ("cone", "cs"), ("hk2", "kappa")] {
        let out = dir.path().join(format!("{space}-{check}"));
        let o = hkflow(&[
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
            "geometry-probe",
            "--space",
            space,
            "--check",
            check,
            "--samples",
            "50",
        ]);
        assert_eq!(o.status.code(), Some(0), "{space}/{check}");
        let v = read_json(&out.join("report.json"));
        assert!(v["worst_residual"].is_f64());
        assert_eq!(v["samples"], 50);
    }
}

#[test]
fn convergence_study_writes_three_column_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("convergence_hk.json");
    let o = hkflow(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "convergence-study"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "tau,sup_gap,evi_worst_residual");
    assert_eq!(lines.len(), 4);
    // The finest step has nothing finer to compare against.
    assert!(lines[3].split(',').nth(1).unwrap().is_empty());
}
