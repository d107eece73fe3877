//! The `cmac` binary end to end: phantom generation, a run, and exit codes.

use std::path::Path;
use std::process::Command;

fn cmac() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cmac"));
    c.env("CMAC_TETGEN", env!("CARGO_BIN_EXE_cmac-tetgen"))
        .env("RUST_LOG", "warn");
    c
}

fn phantom(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let out = cmac()
        .arg("phantom")
        .arg("--out")
        .arg(dir)
        .args(extra)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.join("config.json")
}

#[test]
fn phantom_then_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = phantom(
        &dir.path().join("in"),
        &["--seed", "2", "--kind", "sphere-shell"],
    );
    let out_dir = dir.path().join("out");
    let out = cmac()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["status"], "ok");
    assert!(report["min_scaled_jacobian"].as_f64().unwrap() > 0.0);
    assert!(report["merged_nodes"].as_u64().unwrap() >= 3);
    for f in [
        "report.json",
        "timings.json",
        "combined.tmesh",
        "combined.vtk",
        "calc_surface.tsurf",
        "stitch.json",
        "iterates.json",
    ] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let timings: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("timings.json")).unwrap())
            .unwrap();
    assert!(timings.get("background").is_some());

    // the metrics subcommand reads what the run wrote
    let m = cmac()
        .args(["metrics", "--samples", "500", "--pred"])
        .arg(out_dir.join("calc.tmesh"))
        .arg("--ref")
        .arg(out_dir.join("calc_surface.tsurf"))
        .output()
        .unwrap();
    assert!(m.status.success(), "{}", String::from_utf8_lossy(&m.stderr));
    let d: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    assert!(d["cd"].as_f64().unwrap() < 0.5);
}

#[test]
fn unreadable_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{ not json").unwrap();
    let out = cmac().args(["run", "--config"]).arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = cmac()
        .args(["run", "--config"])
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = phantom(&dir.path().join("in"), &[]);
    std::fs::remove_file(dir.path().join("in/heart.tmesh")).unwrap();
    let out = cmac().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn broken_mesher_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = phantom(&dir.path().join("in"), &[]);
    let out = cmac()
        .env("CMAC_TETGEN", dir.path().join("no-such-mesher"))
        .args(["run", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // the partial report is still written
    let report = std::fs::read_to_string(dir.path().join("in/out/report.json")).unwrap();
    assert!(report.contains("\"failed\""));
}

#[test]
fn bad_phantom_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmac()
        .args(["phantom", "--n", "4", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
