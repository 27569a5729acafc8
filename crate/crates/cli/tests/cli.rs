//! End-to-end runs of the `colddamp` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn colddamp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colddamp"))
        .current_dir(dir)
        .env_remove("COLDDAMP_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn simulated_trace_goes_through_spectrum_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for trace in ["t.bin", "t.csv"] {
        let sim = colddamp(d, &["simulate", "--duration", "30000", "--output", trace, "--seed", "2"]);
        assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
        let spec = colddamp(d, &["spectrum", trace, "--segment-length", "8192", "--output", "s.csv"]);
        assert_eq!(code(&spec), 0, "{}", String::from_utf8_lossy(&spec.stderr));
        assert!(fs::read_to_string(d.join("s.csv")).unwrap().starts_with("frequency_hz,psd_m2_per_hz"));
        let fit = colddamp(d, &["fit", "s.csv", "--averages", "22", "--from-hz", "0.12", "--to-hz", "0.2"]);
        assert_eq!(code(&fit), 0, "{}", String::from_utf8_lossy(&fit.stderr));
        let json: Value = serde_json::from_str(&stdout(&fit)).unwrap();
        let params = &json["fit"]["params"];
        // natural units: resonance at 1/2π Hz, width Γ/2π with Q = 50
        let center = params["center"].as_f64().unwrap();
        let width = params["width"].as_f64().unwrap();
        assert!((center * 2.0 * std::f64::consts::PI - 1.0).abs() < 0.01, "center {center}");
        assert!((width * 2.0 * std::f64::consts::PI * 50.0 - 1.0).abs() < 0.25, "width {width}");
    }
}

#[test]
fn fit_writes_to_a_file_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&colddamp(d, &["simulate", "--duration", "30000", "--output", "t.bin"])), 0);
    assert_eq!(code(&colddamp(d, &["spectrum", "t.bin", "--segment-length", "8192", "--output", "s.csv"])), 0);
    let fit = colddamp(d, &["fit", "s.csv", "--tilted", "--from-hz", "0.12", "--to-hz", "0.2", "--output", "f.json"]);
    assert_eq!(code(&fit), 0);
    let json: Value = serde_json::from_slice(&fs::read(d.join("f.json")).unwrap()).unwrap();
    assert!(json["fit"]["converged"].as_bool().unwrap());
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("bad.json"),
        r#"{"name": "bad", "mode": {"quality_factr": 3}, "kind": {"type": "transient_loop", "gain": 5.2}}"#,
    )
    .unwrap();
    let out = colddamp(d, &["transient", "--config", "bad.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mode.quality_factr"));
}

#[test]
fn tolerance_failures_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // four ensemble members cannot pin the relaxation times to 10%
    fs::write(
        d.join("tiny.json"),
        r#"{"name": "tiny", "mode": {"quality_factor": 200}, "estimator": {"runs": 4},
            "kind": {"type": "transient_loop", "gain": 5.2}}"#,
    )
    .unwrap();
    let out = colddamp(d, &["transient", "--config", "tiny.json", "--out", "o"]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains("FAIL"));
    assert!(d.join("o/tiny/manifest.json").exists());
}

#[test]
fn reproduce_writes_a_verified_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = colddamp(d, &["reproduce", "sec7", "--out", "bundles"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bundle = d.join("bundles/sec7");
    let manifest: Value = serde_json::from_slice(&fs::read(bundle.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["path"] == "duty.csv"));
    for f in files {
        assert!(bundle.join(f["path"].as_str().unwrap()).exists());
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_colddamp"))
        .current_dir(d)
        .env("COLDDAMP_OUT", d.join("from_env"))
        .args(["cyclic", "--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(d.join("from_env/sec7/duty.csv").exists());
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        assert_eq!(code(&colddamp(d, &["cyclic", "--seed", "8", "--out", out])), 0);
    }
    for name in ["duty.csv", "simulated.csv", "summary.json"] {
        assert_eq!(fs::read(d.join("a/sec7").join(name)).unwrap(), fs::read(d.join("b/sec7").join(name)).unwrap());
    }
}

#[test]
fn unknown_figure_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = colddamp(dir.path(), &["reproduce", "fig2"]);
    assert_eq!(code(&out), 2);
}
