//! End-to-end runs of the `bbgky` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const DIMER: &str = r#"
truncation_order = 2
t_final = 2.0
output_dt = 0.1
compare_to_exact = true

[model]
kind = "dimer"
n_particles = 10
lambda = 0.1

[initial_state]
kind = "fock"
occupations = [10, 0]
"#;

fn bbgky(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbgky")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run_in(dir: &Path, sub: &str, text: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_config(dir, text);
    let out = dir.join("out");
    let mut args = vec![sub, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (bbgky(&args), out)
}

fn metadata(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap()
}

/// Header and rows of a CSV whose first line is a format comment.
fn table(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (comment, rest) = text.split_once('\n').unwrap();
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (comment.to_string(), header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

#[test]
fn run_writes_the_documented_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_in(dir.path(), "run", DIMER, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "representability.json", "metadata.json", "final_state.bin"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let (comment, header, rows) = table(&out.join("trajectory.csv"));
    assert_eq!(comment, "# bbgky-trajectory v1");
    assert_eq!(rows.len(), 21);
    let t = column(&header, &rows, "time");
    assert!((t[20] - 2.0).abs() < 1e-12);
    assert!((column(&header, &rows, "imbalance")[0] - 1.0).abs() < 1e-12);
    assert!(header.iter().any(|h| h == "trace_distance_2"));
    let m = metadata(&out);
    assert_eq!(m["status"], "completed");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config"]["truncation_order"], 2);
    assert!(m["summary"]["energy_drift"].as_f64().unwrap() < 1e-8);
}

#[test]
fn full_order_matches_the_exact_reference() {
    let dir = tempfile::tempdir().unwrap();
    let text = DIMER.replace("n_particles = 10", "n_particles = 3").replace("[10, 0]", "[3, 0]");
    let (o, out) =
        run_in(dir.path(), "run", &text, &["--set", "truncation_order=3", "--set", "integrator.rtol=1e-11", "--set", "integrator.atol=1e-13"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = &metadata(&out)["summary"]["max_trace_distance"];
    for k in ["1", "2", "3"] {
        assert!(d[k].as_f64().unwrap() < 1e-7, "order {k}: {}", d[k]);
    }
}

#[test]
fn overrides_take_effect() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_in(dir.path(), "run", DIMER, &["--set", "t_final=0.5", "--set", "compare_to_exact=false"]);
    assert!(o.status.success());
    let (_, header, rows) = table(&out.join("trajectory.csv"));
    assert_eq!(rows.len(), 6);
    assert!(!header.iter().any(|h| h.starts_with("trace_distance")));
}

#[test]
fn configuration_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str], &str); 4] = [
        (DIMER, &["--set", "truncation_order=0"], "truncation_order"),
        (DIMER, &["--set", "model.lambda=fast"], "model.lambda"),
        (&DIMER.replace("lambda = 0.1", "lambda = 0.1\ncolour = 1"), &[], "colour"),
        ("truncation_order = \n", &[], "line 1"),
    ];
    for (text, extra, needle) in cases {
        let (o, _) = run_in(dir.path(), "run", text, extra);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{err}");
        assert!(err.contains(needle), "`{needle}` not in: {err}");
    }
}

#[test]
fn correction_modes_log_their_activity() {
    for mode in ["eom", "purify"] {
        let dir = tempfile::tempdir().unwrap();
        let set = format!("correction.mode={mode}");
        let (o, out) = run_in(dir.path(), "run", DIMER, &["--set", &set, "--set", "compare_to_exact=false"]);
        assert!(o.status.success(), "{mode}: {}", String::from_utf8_lossy(&o.stderr));
        let (comment, _, _) = table(&out.join("corrections.csv"));
        assert_eq!(comment, format!("# bbgky-corrections v1 {mode}"));
        assert!(metadata(&out)["corrections"].is_object());
    }
}

#[test]
fn integrator_failure_exits_3_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_in(dir.path(), "run", DIMER, &["--set", "integrator.max_steps=3"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let m = metadata(&out);
    assert_eq!(m["status"], "instability");
    assert!(m["failure_time"].as_f64().is_some());
    let (_, _, rows) = table(&out.join("trajectory.csv"));
    assert!(!rows.is_empty());
}

#[test]
fn unsolvable_correction_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_in(
        dir.path(),
        "run",
        DIMER,
        &["--set", "correction.mode=eom", "--set", "integrator.h_min=0.01", "--set", "compare_to_exact=false"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(metadata(&out)["status"], "correction_failure");
}

#[test]
fn sweep_merges_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DIMER);
    let out = dir.path().join("sweep");
    let o = bbgky(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--axis",
        "truncation_order",
        "--values",
        "2",
        "3",
        "99",
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (comment, header, rows) = table(&out.join("sweep.csv"));
    assert_eq!(comment, "# bbgky-sweep v1");
    assert_eq!(header[0], "truncation_order");
    let codes: Vec<(&str, &str)> = rows.iter().map(|r| (r[0].as_str(), r[2].as_str())).collect();
    assert_eq!(codes, [("2", "0"), ("3", "0"), ("99", "2")]);
    assert!(out.join("truncation_order=3").join("trajectory.csv").exists());
}

#[test]
fn empty_sweep_writes_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DIMER);
    let out = dir.path().join("sweep");
    let o = bbgky(&["sweep", cfg.to_str().unwrap(), "--axis", "model.lambda", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let (_, header, rows) = table(&out.join("sweep.csv"));
    assert_eq!(header[0], "model.lambda");
    assert!(rows.is_empty());
}

#[test]
fn check_reads_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_in(dir.path(), "run", DIMER, &["--set", "t_final=0.3"]);
    assert!(o.status.success());
    let c = bbgky(&["check", out.join("final_state.bin").to_str().unwrap()]);
    assert!(c.status.success());
    let r: Value = serde_json::from_slice(&c.stdout).unwrap();
    assert!((r["time"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(r["n_particles"], 10);
    assert_eq!(r["order"], 2);
    assert_eq!(r["d_violated"], false);
}

#[test]
fn exact_noninteracting_imbalance_oscillates() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_in(
        dir.path(),
        "exact",
        DIMER,
        &["--set", "model.lambda=0", "--set", "integrator.rtol=1e-11", "--set", "integrator.atol=1e-13"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, header, rows) = table(&out.join("trajectory.csv"));
    let t = column(&header, &rows, "time");
    let z = column(&header, &rows, "imbalance");
    for (t, z) in t.iter().zip(&z) {
        assert!((z - (2.0 * t).cos()).abs() < 1e-8, "t = {t}");
    }
    assert_eq!(metadata(&out)["command"], "exact");
}

#[test]
fn selftest_passes() {
    let o = bbgky(&["selftest", "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 failed"));
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let set = ["--set", "correction.mode=purify"];
    let (_, oa) = run_in(a.path(), "run", DIMER, &set);
    let (_, ob) = run_in(b.path(), "run", DIMER, &set);
    for f in ["trajectory.csv", "corrections.csv", "final_state.bin"] {
        assert_eq!(std::fs::read(oa.join(f)).unwrap(), std::fs::read(ob.join(f)).unwrap(), "{f}");
    }
}
