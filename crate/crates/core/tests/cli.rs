use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ntkstop"))
}

#[test]
fn kernel_eval_prints_one_sixth() {
    let out = bin().args(["kernel-eval", "--dot", "0.5"]).output().unwrap();
    assert!(out.status.success());
    let v: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 1.0 / 6.0).abs() < 1e-15);
}

#[test]
fn selftest_passes() {
    let out = bin().arg("selftest").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0 failed"), "{text}");
}

#[test]
fn missing_seed_is_a_single_line_error() {
    let out = bin().args(["rate", "--n-grid", "32,64"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim().lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "usage");
    assert!(v["message"].as_str().unwrap().contains("seed"));
}

#[test]
fn eta_out_of_range_rejected() {
    let out = bin().args(["rate", "--seed", "1", "--eta", "0.9"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("eta"));
}

#[test]
fn unwritable_output_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let out = bin()
        .args(["stopping", "--seed", "1", "--n-grid", "16", "--sigma", "0.5", "--trials", "1", "--out"])
        .arg(&target)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("\"io\""), "{err}");
    assert!(err.contains(blocker.to_str().unwrap()), "{err}");
}

#[test]
fn experiment_writes_csv_and_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small sweep\nseed = 5\nn_grid = 16, 24\nsigma-grid = 0.5, 1.0\ntrials = 2\n").unwrap();
    let run = |out: &std::path::Path| {
        let o = bin()
            .args(["stopping", "--config"])
            .arg(&cfg)
            .args(["--trials", "3", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("stopping.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# cfg_digest="));
    assert_eq!(text.lines().count(), 2 + 2 * 2 * 3);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/stopping.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cfg"]["seed"], 5);
    assert_eq!(manifest["cfg"]["trials"], 3);
    assert_eq!(manifest["sources"]["file"]["trials"], "2");
    assert_eq!(manifest["sources"]["flags"]["trials"], "3");
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 12);
}

#[test]
fn unknown_subcommand_fails() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
}
