use std::path::Path;
use std::process::{Command, Output};

fn tcbe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcbe")).args(args).output().expect("binary runs")
}

fn scenario(out: &Path, extra_bounds: &str) -> String {
    format!(
        r#"
name = "integration"
seed = 99
output_dir = "{}"
experiments = ["verify-thmB", "verify-be", "distance", "bm-check", "sweeps"]

[model]
space = "flat-circle"
resolution = 64

[weight]
kind = "harmonic"
amplitude = 0.1

[bounds]
n = 2
nprime = 4
{extra_bounds}

[verify_thmb]
tolerance = 1e-4

[verify_be]
tolerance = 1e-6

[distance]
tolerance = 1e-12
pairs = 40

[bm_check]
z_max = 4.0
paths = 4000
time = 0.3

[sweeps]
tolerance = 1e-12
samples = 2000
"#,
        out.display()
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ca = write(dir.path(), "a.toml", &scenario(&a, ""));
    let cb = write(dir.path(), "b.toml", &scenario(&b, ""));
    let ra = tcbe(&["run", &ca]);
    assert_eq!(ra.status.code(), Some(0), "{}", String::from_utf8_lossy(&ra.stderr));
    let rb = tcbe(&["run", &cb, "--parallel"]);
    assert_eq!(rb.status.code(), Some(0));
    let ja = std::fs::read(a.join("report.json")).unwrap();
    let jb = std::fs::read(b.join("report.json")).unwrap();
    assert_eq!(ja, jb, "report.json differs between runs");
    for name in ["verify-thmB.csv", "distance.json", "sweeps.json", "metadata.json"] {
        assert!(a.join(name).exists(), "{name}");
    }
    let report: serde_json::Value = serde_json::from_slice(&ja).unwrap();
    assert_eq!(report["seed"], 99);
    assert_eq!(report["pass"], true);
}

#[test]
fn false_kprime_override_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &scenario(&dir.path().join("o"), "kprime = 1.0"));
    let out = tcbe(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL verify-thmB"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = scenario(&dir.path().join("o"), "").replace("nprime = 4", "nprime = 2");
    let cfg = write(dir.path(), "eq.toml", &text);
    let out = tcbe(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bounds.nprime") && err.contains("line"), "{err}");

    let text = scenario(&dir.path().join("o"), "").replace("\"sweeps\"]", "\"sweep\"]");
    let cfg = write(dir.path(), "name.toml", &text);
    let out = tcbe(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gradient-estimate"));

    assert_eq!(tcbe(&["run", "/nonexistent/scenario.toml"]).status.code(), Some(2));
}

#[test]
fn subcommands_require_a_tolerance() {
    let out = tcbe(&["verify-thmB", "--space", "flat-circle"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tol"));
}

#[test]
fn verify_subcommand_on_sphere_band() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("s");
    let out = tcbe(&[
        "verify-thmB",
        "--space",
        "sphere-band",
        "--resolution",
        "128",
        "--weight",
        "harmonic:0.05",
        "--nprime",
        "4",
        "--tol",
        "1e-4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("verify-thmB.csv").exists());
}

#[test]
fn convexify_subcommand_contrast() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("c");
    let out = tcbe(&[
        "convexify",
        "--space",
        "flat-torus",
        "--resolution",
        "128",
        "--radius",
        "1.5",
        "--lprime",
        "-0.74",
        "--r0",
        "1.2",
        "--pairs",
        "300",
        "--seed",
        "5",
        "--tol",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let s = &report["experiments"][0]["summary"];
    assert!(s["control"]["violations"].as_u64().unwrap() > 0);
    assert_eq!(s["treated"]["violations"], 0);
}
