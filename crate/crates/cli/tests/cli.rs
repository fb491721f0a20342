use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carmm::io;

fn carmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carmm"))
        .args(args)
        .env("CARMM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = carmm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small simulated study plus one fit of it.
fn simulate_and_fit(root: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let cfg = root.join("cfg.json");
    fs::write(&cfg, r#"{"design": {"rows": 4, "cols": 4, "memberships": 20}}"#).unwrap();
    let sim = root.join("sim");
    ok(&["simulate", "--out", s(&sim), "--seed", "3", "--config", s(&cfg)]);
    let fit = root.join(format!("fit-{seed}"));
    ok(&[
        "fit", "--data-dir", s(&sim), "--out", s(&fit), "--seed", seed, "--chains", "2", "--iters", "300",
    ]);
    (sim, fit)
}

#[test]
fn pipeline_closes() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, fit) = simulate_and_fit(dir.path(), "5");
    for f in ["graph.csv", "membership.csv", "areal_data.csv", "mm_data.csv", "truth.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f} missing");
    }

    let summary = io::read_summary(&fit.join("summary.csv")).unwrap();
    assert_eq!(summary.len(), 10 + 2 * 16);
    assert!(summary.iter().all(|q| q.rhat.is_finite()));

    let posterior = io::read_posterior(&fit.join("posterior.csv")).unwrap();
    assert_eq!(posterior.names.len(), summary.len());
    assert_eq!(posterior.draws[0].len(), 2);
    assert_eq!(posterior.draws[0][0].len(), 150);
    let rho1 = io::read_derived(&fit.join("rho1.csv")).unwrap();
    assert_eq!((rho1.len(), rho1[0].len(), rho1[0][0].len()), (2, 150, 16));
    let rho2 = io::read_derived(&fit.join("rho2.csv")).unwrap();
    assert_eq!(rho2[0][0].len(), 20);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("fit_report.json")).unwrap()).unwrap();
    for key in ["d_bar", "d_at_mean", "p_d", "dic", "elpd_loo", "looic", "tap_tail_05", "tap_tail_10"] {
        assert!(report["y1"][key].is_number() && report["y2"][key].is_number(), "{key}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(fit.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 5);
    assert_eq!(manifest["inputs"]["graph"].as_str().unwrap().len(), 64);

    let diag = dir.path().join("diag");
    let text = ok(&["diagnose", "--fit", s(&fit), "--out", s(&diag)]);
    assert!(text.contains("quantities with R-hat > 1.01"));
    assert_eq!(
        fs::read(diag.join("summary.csv")).unwrap(),
        fs::read(fit.join("summary.csv")).unwrap()
    );

    let boundaries = dir.path().join("areas.geojson");
    let features: Vec<String> = (0..16)
        .map(|i| format!(r#"{{"type":"Feature","properties":{{"area":{i}}},"geometry":null}}"#))
        .collect();
    fs::write(&boundaries, format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))).unwrap();
    let clusters = dir.path().join("clusters");
    ok(&[
        "cluster", "--fit", s(&fit), "--data-dir", s(&sim), "--out", s(&clusters), "--tr", "1", "--tp", "0.9",
        "--boundaries", s(&boundaries),
    ]);
    let rows = io::read_clusters(&clusters.join("clusters.csv")).unwrap();
    assert_eq!(rows.len(), 32);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.2) && (0.0..=1.0).contains(&r.3)));
    let bivariate = fs::read_to_string(clusters.join("bivariate.csv")).unwrap();
    assert!(bivariate.starts_with("area,cell,collapsed_label\n"));
    assert_eq!(bivariate.lines().count(), 17);
    let joined: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(clusters.join("clusters.geojson")).unwrap()).unwrap();
    assert!(joined["features"][3]["properties"].as_object().unwrap().len() > 1);
}

#[test]
fn compare_identical_fits_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (_, fit) = simulate_and_fit(dir.path(), "8");
    let out = dir.path().join("cmp");
    let text = ok(&["compare", s(&fit), s(&fit), "--out", s(&out)]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!((cols[3], cols[4]), ("0", "0"), "{line}");
    }
    assert!(out.join("compare.csv").exists());
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (sim, a) = simulate_and_fit(dir.path(), "11");
    let b = dir.path().join("again");
    ok(&["fit", "--data-dir", s(&sim), "--out", s(&b), "--seed", "11", "--chains", "2", "--iters", "300"]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 11);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn malformed_csv_exits_3_with_row() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--out", s(&sim), "--seed", "1"]);
    let areal = sim.join("areal_data.csv");
    let mut lines: Vec<String> = fs::read_to_string(&areal).unwrap().lines().map(String::from).collect();
    lines[4] = "3,not-a-count,12.5".into();
    fs::write(&areal, lines.join("\n") + "\n").unwrap();
    let out = carmm(&["fit", "--data-dir", s(&sim), "--out", s(&dir.path().join("f"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("areal_data.csv") && err.contains("row 5"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = carmm(&["fit", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = carmm(&["simulate", "--out", s(dir.path()), "--model", "car"]);
    assert_eq!(out.status.code(), Some(2));
    let out = carmm(&["nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = carmm(&["fit", "--data-dir", s(&dir.path().join("nowhere")), "--out", s(&dir.path().join("f"))]);
    assert_eq!(out.status.code(), Some(3));
}
