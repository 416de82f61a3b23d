use ips::config::ExperimentConfig;
use ips::report::{emit_report, summary_text};
use ips::scan;
use ips::IpsError;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(text).unwrap()
}

const SMALL_SCAN: &str = r#"{
  "name": "small", "grid": { "n": [10, 10, 10] },
  "obstacle": { "components": [{ "shape": { "kind": "ball", "center": [0.5, 0.5, 0.5], "radius": 0.2 }, "amplitude": 5.0 }] },
  "points": [
    { "kind": "list", "name": "probes", "points": [[0.23, 0.31, 0.47], [0.74, 0.27, 0.52]] },
    { "kind": "line", "name": "approach", "start": [0.5, 0.5, 0.93], "target": [0.5, 0.5, 0.7], "count": 4, "min_distance": 0.1 },
    { "kind": "random", "name": "random", "count": 2, "boundary_margin": 0.15, "obstacle_margin": 0.1 }
  ],
  "seed": 3
}"#;

#[test]
fn scan_report_carries_values_residuals_and_fits() {
    let cfg = config(SMALL_SCAN);
    let rep = scan::run_scan(&cfg).unwrap();
    assert_eq!(rep.kind, "scan");
    assert_eq!(rep.config_hash, cfg.hash());
    assert_eq!(rep.points.len(), 8);
    assert!(rep.points.iter().all(|p| p.error.is_none() && p.result.as_ref().unwrap().all_finite()));
    assert!(rep.wellposedness.as_ref().unwrap().lambda_min > 0.0);
    assert!(rep.fits.iter().any(|f| f.set == "approach" && f.quantity == "I" && f.expect_blowup));
    assert!(rep.solver.solves > 0);
    for c in &rep.checks {
        assert!(!c.name.is_empty() && !c.detail.is_empty());
    }
}

#[test]
fn random_points_are_reproducible_from_the_seed() {
    let a = config(SMALL_SCAN);
    let g = ips::grid::build_grid(a.grid.extents, a.grid.n).unwrap();
    let pa = a.expand_points(&g);
    assert_eq!(pa, a.expand_points(&g));
    let mut b = a.clone();
    b.seed = 4;
    let pb = b.expand_points(&g);
    assert_ne!(pa.iter().filter(|p| p.0 == "random").collect::<Vec<_>>(), pb.iter().filter(|p| p.0 == "random").collect::<Vec<_>>());
}

#[test]
fn emitted_reports_are_complete() {
    let cfg = config(SMALL_SCAN);
    let rep = scan::run_scan(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("nested/out");
    let files = emit_report(&rep, &dir).unwrap();
    for f in ["points.csv", "fits.csv", "report.json", "summary.txt"] {
        assert!(files.iter().any(|p| p.ends_with(f)), "missing {f}");
    }
    let mut rd = csv::Reader::from_path(dir.join("points.csv")).unwrap();
    let header = rd.headers().unwrap().clone();
    for col in ["set", "x", "y", "z", "I", "div_w", "I_star", "res_decomposition"] {
        assert!(header.iter().any(|h| h == col), "missing column {col}");
    }
    assert_eq!(rd.records().count(), 8);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], cfg.hash());
    assert_eq!(json["config"]["grid"]["n"], serde_json::json!([10, 10, 10]));
    assert_eq!(std::fs::read_to_string(dir.join("summary.txt")).unwrap(), summary_text(&rep));
}

#[test]
fn rates_without_a_grid_run() {
    let cfg = config(r#"{ "grid": { "n": [4, 4, 4] } }"#);
    let rep = scan::run_rates(&cfg).unwrap();
    assert!(rep.all_passed(), "{:?}", rep.checks);
    assert!(rep.checks.iter().filter(|c| c.name.starts_with("cone case")).count() == 5);
}

#[test]
fn invalid_configs_are_config_errors() {
    let bad = [
        r#"{ "grid": { "n": [10, 10, 10] }, "points": [{ "kind": "list", "name": "a", "points": [[1.5, 0.5, 0.5]] }] }"#,
        r#"{ "grid": { "n": [10, 10, 10] }, "points": [{ "kind": "list", "name": "a", "points": [] }, { "kind": "list", "name": "a", "points": [] }] }"#,
        r#"{ "grid": { "n": [10, 10, 10] }, "classify": { "points": [[0.5, 0.5, 0.5]], "j": 3 } }"#,
        r#"{ "grid": { "n": [10, 10, 10] }, "solver": { "tol": 0 } }"#,
        r#"{ "grid": { "n": [10, 10, 10] }, "obstacle": { "components": [{ "shape": { "kind": "ball", "center": [0.5, 0.5, 0.5], "radius": 0.6 }, "amplitude": 1 }] } }"#,
    ];
    for text in bad {
        match ExperimentConfig::from_json(text).and_then(|c| c.validate().map(|_| c)) {
            Err(IpsError::Config(_)) => {}
            other => panic!("expected a config error for {text}, got {other:?}"),
        }
    }
    assert!(matches!(scan::run_classify(&config(r#"{ "grid": { "n": [5, 5, 5] } }"#)), Err(IpsError::Config(_))));
}

#[test]
fn forward_run_checks_the_identity() {
    let cfg = config(
        r#"{ "grid": { "n": [8, 8, 8] }, "forward": { "samples": 2, "l1_samples": 2 },
             "obstacle": { "components": [{ "shape": { "kind": "box", "lo": [0.3, 0.3, 0.3], "hi": [0.7, 0.6, 0.6] }, "amplitude": -2 }] } }"#,
    );
    let rep = scan::run_forward(&cfg).unwrap();
    assert!(rep.all_passed(), "{:?}", rep.checks);
    assert_eq!(rep.tables.len(), 2);
    assert_eq!(rep.tables[0].rows.len(), 2);
}

#[test]
fn shipped_configs_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}
