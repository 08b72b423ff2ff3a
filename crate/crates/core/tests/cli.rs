use std::path::Path;
use std::process::{Command, Output};

use kernagg::datagen::{sample_observation, DesignDensity, RegressionSample, SignalSpec};
use kernagg::harness::{read_csv_table, read_json_report};
use kernagg::kernels::{default_collection, KernelSpec};
use kernagg::procedures::{aggregated_test, single_kernel_test, TestReport};

fn kernagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernagg")).args(args).output().unwrap()
}

fn ok_stdout(out: Output) -> Vec<u8> {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn write_sample(dir: &Path, s: &RegressionSample, header: bool) -> (String, String) {
    let xy = dir.join("xy.csv");
    let yp = dir.join("yprime.csv");
    let mut a = if header { "x,y\n".to_owned() } else { String::new() };
    for (x, y) in s.x.iter().zip(&s.y) {
        a.push_str(&format!("{x:?},{y:?}\n"));
    }
    let mut b = if header { "y_prime\n".to_owned() } else { String::new() };
    for v in &s.y_prime {
        b.push_str(&format!("{v:?}\n"));
    }
    std::fs::write(&xy, a).unwrap();
    std::fs::write(&yp, b).unwrap();
    (xy.to_str().unwrap().to_owned(), yp.to_str().unwrap().to_owned())
}

fn observation(signal: &SignalSpec, seed: u64) -> RegressionSample {
    sample_observation(100, signal, 1.0, DesignDensity::UniformOn01, seed).unwrap()
}

#[test]
fn run_test_matches_library_single_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let s = observation(&SignalSpec::jump1(0.25, 1.0).unwrap(), 3);
    let (xy, yp) = write_sample(dir.path(), &s, true);
    let out = ok_stdout(kernagg(&[
        "run-test", "--xy", &xy, "--yprime", &yp, "--kernel", "haar:2", "--B", "300", "--seed", "17",
    ]));
    let report: TestReport = serde_json::from_slice(&out).unwrap();
    let expected = single_kernel_test(&s, &KernelSpec::haar(2).unwrap(), 0.05, 300, 17).unwrap();
    assert_eq!(report, expected);
    assert!(report.u_alpha.is_none());
}

#[test]
fn run_test_matches_library_collection_and_uses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let s = observation(&SignalSpec::Zero, 8);
    let (xy, yp) = write_sample(dir.path(), &s, false);
    let cache = dir.path().join("cache");
    let args = [
        "run-test", "--xy", &xy, "--yprime", &yp, "--collection", "PG", "--B", "200", "--seed", "5",
        "--alpha", "0.1", "--cache-dir", cache.to_str().unwrap(),
    ];
    let first = ok_stdout(kernagg(&args));
    let files: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(files.len(), 1);
    let second = ok_stdout(kernagg(&args));
    assert_eq!(first, second);

    let report: TestReport = serde_json::from_slice(&first).unwrap();
    let expected = aggregated_test(&s, &default_collection("PG").unwrap(), 0.1, 200, 5).unwrap();
    assert_eq!(report, expected);
    assert_eq!(report.per_kernel.len(), 14);
    assert_eq!(report.reject, report.per_kernel.iter().any(|k| k.triggered));
}

#[test]
fn run_test_writes_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let s = observation(&SignalSpec::Zero, 9);
    let (xy, yp) = write_sample(dir.path(), &s, true);
    let out_path = dir.path().join("report.json");
    let stdout = ok_stdout(kernagg(&[
        "run-test", "--xy", &xy, "--yprime", &yp, "--collection", "haar:1=1,gauss:1/8=1", "--B", "100", "--seed",
        "1", "--output", out_path.to_str().unwrap(),
    ]));
    assert!(stdout.is_empty());
    let report: TestReport = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(report.per_kernel.len(), 2);
}

#[test]
fn emit_defaults_lists_three_collections() {
    let out = ok_stdout(kernagg(&["emit-defaults"]));
    let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(v["P"]["members"].as_array().unwrap().len(), 8);
    assert_eq!(v["G"]["members"].as_array().unwrap().len(), 6);
    assert_eq!(v["PG"]["members"].as_array().unwrap().len(), 14);
    assert_eq!(v["P"]["members"][0]["kernel"], "haar_projection");
    assert_eq!(v["G"]["members"][0]["weight"], 1.0 / 6.0);
}

#[test]
fn study_commands_emit_csv_and_json() {
    let csv = ok_stdout(kernagg(&[
        "simulate-level", "--seed", "4", "--replicates", "10", "--B", "100", "-p", "P", "-p", "el1",
    ]));
    let rows = read_csv_table(&csv).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].procedure, "P");
    assert_eq!(rows[1].procedure, "EL1(m=5)");
    assert!(rows.iter().all(|r| r.replicates == 10 && r.b == 100 && r.seed == 4));

    let json = ok_stdout(kernagg(&[
        "simulate-power", "--seed", "4", "--replicates", "10", "--B", "100", "-p", "P", "-p", "el1", "--signal",
        "jump1:a=0.25,eps=1", "--format", "json", "--record-decisions",
    ]));
    let report = read_json_report(&json).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.decisions.unwrap().len(), 10);
    assert_eq!(report.config.signal, SignalSpec::jump1(0.25, 1.0).unwrap());
}

#[test]
fn study_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    let table = dir.path().join("table.csv");
    std::fs::write(
        &cfg,
        format!(
            r#"
n = 60
replicates = 8
seed = 0
B = 100

[signal]
kind = "cosine_freq"
rho = 1.0
j = 6

[[procedures]]
type = "single"
spec = {{ kernel = "haar_projection", level = 3 }}

[output]
path = "{}"
format = "csv"
"#,
            table.display()
        ),
    )
    .unwrap();
    let out = ok_stdout(kernagg(&["simulate-power", "--config", cfg.to_str().unwrap(), "--seed", "12"]));
    assert!(out.is_empty());
    let rows = read_csv_table(&std::fs::read(&table).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].procedure, "haar(J=3)");
    assert_eq!(rows[0].seed, 12);
}

fn assert_fails(args: &[&str], needle: &str) {
    let out = kernagg(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(needle), "stderr {err:?} lacks {needle:?}");
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    assert_fails(&["simulate-level", "--replicates", "3"], "--seed");
    assert_fails(&["simulate-level", "--seed", "1", "--n", "21"], "even");
    assert_fails(&["simulate-level", "--seed", "1", "--B", "50"], "B = 50");
    assert_fails(&["simulate-level", "--seed", "1", "--signal", "jump1:a=0.25,eps=1"], "estimate_power");
    assert_fails(&["simulate-level", "--seed", "1", "-p", "tri:3"], "unknown procedure");
    assert_fails(&["simulate-level", "--seed", "1", "--config", "/no/such/file.toml"], "error");

    let dir = tempfile::tempdir().unwrap();
    let s = observation(&SignalSpec::Zero, 1);
    let (xy, yp) = write_sample(dir.path(), &s, true);
    assert_fails(&["run-test", "--xy", &xy, "--yprime", "/no/such.csv", "--kernel", "haar:1", "--seed", "1"], "error");
    assert_fails(&["run-test", "--xy", &xy, "--yprime", &yp, "--kernel", "haar:99", "--seed", "1"], "Haar");
    let odd = dir.path().join("odd.csv");
    std::fs::write(&odd, "0.1\n0.2\n0.3\n").unwrap();
    assert_fails(&["run-test", "--xy", &xy, "--yprime", odd.to_str().unwrap(), "--kernel", "haar:1", "--seed", "1"], "error");
    let outside = dir.path().join("outside.csv");
    std::fs::write(&outside, "1.5,0\n0.2,1\n0.3,1\n0.4,2\n").unwrap();
    let yp4 = dir.path().join("yp4.csv");
    std::fs::write(&yp4, "1\n2\n3\n5\n").unwrap();
    assert_fails(
        &["run-test", "--xy", outside.to_str().unwrap(), "--yprime", yp4.to_str().unwrap(), "--kernel", "haar:1", "--seed", "1"],
        "outside",
    );
}

#[test]
fn shipped_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/cosine_power.toml");
    let c = kernagg::harness::StudyConfig::from_path(&path).unwrap();
    c.validate().unwrap();
    assert_eq!(c.procedures.len(), 5);
    assert_eq!(c.signal, SignalSpec::cosine_freq(1.0, 6).unwrap());
}
