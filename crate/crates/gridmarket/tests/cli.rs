//! End-to-end checks of the command-line surface: flag grammar, exit codes,
//! file outputs, and byte-level determinism.

use std::path::Path;

use gridmarket::cli::{run, EXIT_DIVERGED, EXIT_OK, EXIT_VALIDATION};

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const TWO_BUS: &str = r#"{
    "buses": [
        {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
        {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
    ],
    "lines": [
        {"from": "b2", "to": "b1", "susceptance": 1.0, "flow_min": -0.25, "flow_max": 0.25}
    ]
}"#;

const SINGLE_BUS: &str = r#"{
    "buses": [{"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 1.0, "cost": {"c": 1.0, "c_bar": 0.0}}],
    "lines": []
}"#;

const QTY_SCENARIO: &str = r#"{
    "demand_step": {"b1": 1.0},
    "horizon": 120.0,
    "dt": 0.01,
    "mechanism": {"variant": "quantity"}
}"#;

#[test]
fn simulate_writes_csv_and_roundtrips_kkt() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let sc = dir.path().join("qty.json");
    let out = dir.path().join("traj.csv");
    let sol = dir.path().join("solution.json");
    write(&net, TWO_BUS);
    write(&sc, QTY_SCENARIO);

    // Oracle for the stepped demand, then an anchored simulation.
    let code = run(&args(&[
        "solve-planner",
        "--network",
        net.to_str().unwrap(),
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        sol.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_OK);

    let code = run(&args(&[
        "simulate",
        "--network",
        net.to_str().unwrap(),
        "--scenario",
        sc.to_str().unwrap(),
        "--reference",
        sol.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_OK);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("t,omega_b1,omega_b2,p_b1,p_b2,q_b1,q_b2,alpha_b1,alpha_b2,lambda,eta_0,eta_1,pi_b1,pi_b2,flow_b2_b1,V"));

    // solve-planner output always passes check-kkt at the solver tolerance.
    let code = run(&args(&[
        "check-kkt",
        "--network",
        net.to_str().unwrap(),
        "--scenario",
        sc.to_str().unwrap(),
        "--reference",
        sol.to_str().unwrap(),
        "--tol",
        "1e-8",
    ]));
    assert_eq!(code, EXIT_OK);

    // The converged end of the run passes at a loose tolerance...
    let code = run(&args(&[
        "check-kkt",
        "--network",
        net.to_str().unwrap(),
        "--scenario",
        sc.to_str().unwrap(),
        "--traj",
        out.to_str().unwrap(),
        "--time",
        "120",
        "--tol",
        "1e-3",
    ]));
    assert_eq!(code, EXIT_OK);

    // ...while the mid-transient state does not.
    let code = run(&args(&[
        "check-kkt",
        "--network",
        net.to_str().unwrap(),
        "--scenario",
        sc.to_str().unwrap(),
        "--traj",
        out.to_str().unwrap(),
        "--time",
        "1.0",
        "--tol",
        "1e-3",
    ]));
    assert_eq!(code, EXIT_VALIDATION);
}

#[test]
fn diverging_run_exits_2_with_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let sc = dir.path().join("naive.json");
    let out = dir.path().join("traj.csv");
    write(&net, SINGLE_BUS);
    write(
        &sc,
        r#"{"horizon": 150.0, "dt": 0.01, "mechanism": {"variant": "price_misaligned_naive"}}"#,
    );
    let code = run(&args(&[
        "simulate",
        "--network",
        net.to_str().unwrap(),
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_DIVERGED);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows = text.lines().count();
    assert!(
        rows > 2 && rows < 15002,
        "partial trajectory expected, got {rows} rows"
    );
}

#[test]
fn missing_network_file_exits_1() {
    let code = run(&args(&[
        "simulate",
        "--network",
        "/nonexistent.json",
        "--scenario",
        "/also-nonexistent.json",
        "--out",
        "/tmp/unused.csv",
    ]));
    assert_eq!(code, EXIT_VALIDATION);
}

#[test]
fn deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let sc = dir.path().join("sc.json");
    write(&net, TWO_BUS);
    write(
        &sc,
        r#"{"demand_step": {"b1": 1.0}, "horizon": 5.0, "dt": 0.01, "mechanism": {"variant": "price_aligned"}}"#,
    );
    let mut outputs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let code = run(&args(&[
            "simulate",
            "--network",
            net.to_str().unwrap(),
            "--scenario",
            sc.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "CSV must be byte-identical");

    let mut svgs = Vec::new();
    for name in ["a.svg", "b.svg"] {
        let out = dir.path().join(name);
        let code = run(&args(&[
            "plot",
            "--traj",
            dir.path().join("a.csv").to_str().unwrap(),
            "--columns",
            "flow_*",
            "--network",
            net.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, EXIT_OK);
        svgs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(svgs[0], svgs[1], "SVG must be byte-identical");
    let svg = String::from_utf8(svgs.pop().unwrap()).unwrap();
    assert!(svg.contains("stroke-dasharray"), "flow limits drawn dashed");
}

#[test]
fn plot_empty_selector_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("t.csv");
    write(&traj, "t,omega_b1,V\n0,0.0,\n1,0.1,\n");
    let code = run(&args(&[
        "plot",
        "--traj",
        traj.to_str().unwrap(),
        "--columns",
        "",
        "--out",
        dir.path().join("x.svg").to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_VALIDATION);
}

#[test]
fn analyze_stability_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let report = dir.path().join("report.json");
    write(&net, SINGLE_BUS);

    let code = run(&args(&[
        "analyze-stability",
        "--network",
        net.to_str().unwrap(),
        "--mechanism",
        "price_misaligned_naive",
        "--out",
        report.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_OK);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["verdict"], "unstable");
    assert_eq!(parsed["rho_bound"], 4.0);

    let code = run(&args(&[
        "analyze-stability",
        "--network",
        net.to_str().unwrap(),
        "--mechanism",
        "price_misaligned_regularized",
        "--rho",
        "1.0",
        "--out",
        report.to_str().unwrap(),
    ]));
    assert_eq!(code, EXIT_OK);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["verdict"], "stable");
    assert!(parsed["w_sigma_min_eigenvalue"].as_f64().unwrap() > -1e-8);
}

#[test]
fn parallel_scenarios_write_one_csv_each() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    write(&net, SINGLE_BUS);
    let mut flags = vec![
        "simulate".to_string(),
        "--network".to_string(),
        net.to_str().unwrap().to_string(),
    ];
    for (name, variant) in [("qty", "quantity"), ("pb", "price_aligned")] {
        let sc = dir.path().join(format!("{name}.json"));
        write(
            &sc,
            &format!(r#"{{"horizon": 2.0, "dt": 0.01, "mechanism": {{"variant": "{variant}"}}}}"#),
        );
        flags.push("--scenario".to_string());
        flags.push(sc.to_str().unwrap().to_string());
    }
    let outdir = dir.path().join("runs");
    flags.extend([
        "--out".to_string(),
        outdir.to_str().unwrap().to_string(),
        "--jobs".to_string(),
        "2".to_string(),
    ]);
    assert_eq!(run(&flags), EXIT_OK);
    assert!(outdir.join("qty.csv").exists());
    assert!(outdir.join("pb.csv").exists());
}
