use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vortmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vortmc")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_key_is_a_config_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "[solver]\nseed = 3\nsamplez = 10\n");
    let out = tmp.path().join("out");
    let o = vortmc(&["heat-check", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("samplez"), "{err}");
    assert!(!out.exists());
}

#[test]
fn mismatched_experiment_and_bad_values_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tau.toml", "experiment = \"tau-bound\"\n");
    assert_eq!(vortmc(&["heat-check", "--config", &cfg, "--quiet"]).status.code(), Some(2));
    let cfg = write(tmp.path(), "dt.toml", "[solver]\ndt = -1.0\n");
    assert_eq!(vortmc(&["heat-check", "--config", &cfg, "--quiet"]).status.code(), Some(2));
    let cfg = write(tmp.path(), "syntax.toml", "[solver\n");
    assert_eq!(vortmc(&["heat-check", "--config", &cfg, "--quiet"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.toml");
    assert_eq!(vortmc(&["heat-check", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn heat_check_passes_and_writes_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("heat");
    let o = vortmc(&["heat-check", "--samples", "20000", "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("experiment,quantity,value,std_error,oracle_value,tolerance,pass"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.starts_with("heat-check,") && r.ends_with(",true")));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("result: pass"));
}

#[test]
fn poisson_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("poisson");
    let o = vortmc(&["poisson-check", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.contains("Nf(0,0,0)") && csv.contains(",0.5,"), "{csv}");
}

#[test]
fn failed_check_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "tau.toml", "[check]\nexpected_tau = 0.5\n");
    let out = tmp.path().join("tau");
    let o = vortmc(&["tau-bound", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL tau"));
    assert!(out.join("results.csv").exists());
}

#[test]
fn estimator_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "q.toml", "[solver.quadrature]\ns_min = 0.5\ntolerance = 1e-9\n");
    let o = vortmc(&["poisson-check", "--config", &cfg, "--samples", "10", "--quiet"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncation"));
}

#[test]
fn reruns_are_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = vortmc(&["fk-reversal-check", "--seed", "9", "--samples", "500", "--out", dir.to_str().unwrap(), "--quiet"]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(fs::read(a.join("results.csv")).unwrap(), fs::read(b.join("results.csv")).unwrap());
    let c = tmp.path().join("c");
    vortmc(&["fk-reversal-check", "--seed", "10", "--samples", "500", "--out", c.to_str().unwrap(), "--quiet"]);
    assert_ne!(fs::read(a.join("results.csv")).unwrap(), fs::read(c.join("results.csv")).unwrap());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            vortmc::cli_io::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn readme_schema_parses() {
    let readme = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let block = readme.split("```toml\n").nth(1).and_then(|b| b.split("```").next()).expect("toml block");
    vortmc::cli_io::parse_config(block).unwrap();
}
