use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ris-emf"))
}

#[test]
fn validate_passes_on_defaults() {
    let out = bin().args(["validate", "--seed", "7"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "stdout: {stdout}");
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"sweep": {"n_draws": 0}}"#).unwrap();
    let out = bin()
        .args(["validate", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_draws"));
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"scene": {"num_bs_elements": 16, "num_scatterers": 4},
            "physical": {"n_circle_samples": 36},
            "heatmap": {"extent_m": 100.0, "resolution_m": 20.0}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--ues",
            "2",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["record.json", "heatmap_reference.csv", "compliance_enhanced.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
}

#[test]
fn sweep_seed_flag_controls_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"scene": {"num_bs_elements": 16, "num_scatterers": 4},
            "physical": {"n_circle_samples": 36},
            "sweep": {"ue_counts": [2], "n_draws": 3}}"#,
    )
    .unwrap();
    let run = |seed: &str, out: &str| {
        let out_dir = dir.path().join(out);
        let st = bin()
            .args([
                "sweep",
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                seed,
                "--workers",
                "1",
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(st.success());
        std::fs::read(out_dir.join("summary.csv")).unwrap()
    };
    let a = run("1", "a");
    let b = run("1", "b");
    let c = run("2", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}
