use std::path::Path;
use std::process::{Command, Output};

fn epsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT: &str = r#"{
  "solver": "lumped",
  "protocol": {"field": 60e3, "count": 2},
  "output": {"dir": "out", "extra_csv": true}
}"#;

#[test]
fn run_writes_trace_manifest_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "run.json", SHORT);
    let o = epsim(&["run", "run.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in [
        "run_trace.csv",
        "run_states.csv",
        "run_temperature.csv",
        "run_aux.csv",
        "run_current.svg",
        "run_states.svg",
        "run_sigma.svg",
        "run_temperature.svg",
        "run_manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let header = std::fs::read_to_string(out.join("run_trace.csv")).unwrap();
    assert!(header.starts_with("t,U,I,p0,p1,p2,sigma_app,T"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["protocol"]["count"], 2);
}

#[test]
fn runs_are_bitwise_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        write(d.path(), "run.json", SHORT);
        assert!(epsim(&["run", "run.json"], d.path()).status.success());
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("out/run_trace.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn empty_protocol_succeeds_with_a_single_sample() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "run.json", r#"{"protocol": {"field": 1e5, "count": 0}, "output": {"plots": false}}"#);
    let o = epsim(&["run", "run.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("out/run_trace.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn config_errors_exit_2_with_a_location() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "bad.json", "{\n  \"solver\": \"lumped\",\n  \"protocol\": {\"count\": -1}\n}\n");
    let o = epsim(&["run", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    write(tmp.path(), "geom.json", r#"{"geometry": {"sample_height": -1.0}}"#);
    assert_eq!(epsim(&["run", "geom.json"], tmp.path()).status.code(), Some(2));
    assert_eq!(epsim(&["run", "missing.json"], tmp.path()).status.code(), Some(2));
}

#[test]
fn cross_check_reports_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "run.json",
        r#"{"protocol": {"field": 80e3, "count": 1}, "output": {"plots": false}}"#,
    );
    let o = epsim(&["run", "run.json", "--cross-check"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let c: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/run_crosscheck.json")).unwrap()).unwrap();
    assert_eq!(c["passed"], true);
    assert!(c["discrepancy"]["max_rel"].as_f64().unwrap() < 0.02);
}

#[test]
fn sweep_writes_levels_and_reference_column() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "sweep.json", r#"{"solver": "lumped", "output": {"plots": false}}"#);
    let o = epsim(&["sweep", "sweep.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    for f in ["10", "20", "30", "40", "50", "60", "80", "100"] {
        assert!(out.join(format!("run_{f}kVm_trace.csv")).is_file());
    }
    let summary = std::fs::read_to_string(out.join("run_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].contains("delta_t_reference"));
    let last: Vec<&str> = rows[8].split(',').collect();
    assert_eq!(last[2], "0.8862");
    let dt: f64 = last[1].parse().unwrap();
    assert!((dt - 0.8862).abs() < 0.15 * 0.8862);
}

#[test]
fn frozen_fit_and_fit_failures() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "fit.json",
        r#"{"frozen": true, "synthetic": {"fields": [60e3]}, "validate_fem": false}"#,
    );
    let o = epsim(&["fit", "fit.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("out");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit_report.json")).unwrap()).unwrap();
    assert_eq!(report["fit"]["evaluations"], 3);
    assert!(out.join("fit_params.json").is_file() && out.join("fit_log.csv").is_file());

    write(tmp.path(), "empty.json", r#"{"traces": []}"#);
    let o = epsim(&["fit", "empty.json"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn fit_reads_measured_traces() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "run.json", r#"{"solver": "lumped", "protocol": {"field": 60e3}, "output": {"plots": false}}"#);
    assert!(epsim(&["run", "run.json"], tmp.path()).status.success());
    let trace = std::fs::read_to_string(tmp.path().join("out/run_trace.csv")).unwrap();
    let mut meas = String::from("t,U,I\n");
    for line in trace.lines().skip(1).step_by(5) {
        let c: Vec<&str> = line.split(',').collect();
        meas.push_str(&format!("{},{},{}\n", c[0], c[1], c[2]));
    }
    write(tmp.path(), "meas.csv", &meas);
    write(
        tmp.path(),
        "fit.json",
        r#"{
  "traces": [{"path": "meas.csv", "protocol": {"field": 60e3}}],
  "free": [{"field": "sigP0", "lower": 0.2, "upper": 0.6}],
  "options": {"seeds": ["midpoint"]},
  "output": {"dir": "fit", "plots": true}
}"#,
    );
    let o = epsim(&["fit", "fit.json"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let params: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fit/fit_params.json")).unwrap()).unwrap();
    let sig = params["sigP0"].as_f64().unwrap();
    assert!((sig - 0.375).abs() < 0.375 * 0.01, "{sig}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("fit/fit_report.json")).unwrap()).unwrap();
    let v = &report["fem_validation"][0];
    assert!(v["lumped_discrepancy"]["max_rel"].as_f64().unwrap() < 0.02);
    assert!(tmp.path().join("fit/fit_trace0.svg").is_file());
}

#[test]
fn compare_identical_and_disjoint_traces() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "run.json", r#"{"solver": "lumped", "protocol": {"field": 40e3, "count": 2}, "output": {"plots": false}}"#);
    assert!(epsim(&["run", "run.json"], tmp.path()).status.success());
    let trace = std::fs::read_to_string(tmp.path().join("out/run_trace.csv")).unwrap();
    let mut same = String::from("t,U,I\n");
    let mut late = String::from("t,U,I\n");
    for line in trace.lines().skip(1) {
        let c: Vec<&str> = line.split(',').collect();
        same.push_str(&format!("{},{},{}\n", c[0], c[1], c[2]));
        let t: f64 = c[0].parse().unwrap();
        late.push_str(&format!("{},{},{}\n", t + 1.0, c[1], c[2]));
    }
    write(tmp.path(), "same.csv", &same);
    write(tmp.path(), "late.csv", &late);
    let o = epsim(
        &["compare", "out/run_trace.csv", "same.csv", "--field", "40e3", "--out", "cmp"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("cmp/compare_report.json")).unwrap()).unwrap();
    assert_eq!(r["rel_l2"], 0.0);
    assert_eq!(r["plateaus"].as_array().unwrap().len(), 2);
    let o = epsim(&["compare", "out/run_trace.csv", "late.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mesh_dump_and_dispersion_check() {
    let tmp = tempfile::tempdir().unwrap();
    let o = epsim(&["mesh-dump", "--out", "m", "--refinement", "2"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mesh: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("m/mesh.json")).unwrap()).unwrap();
    assert!(mesh["elements"].as_array().unwrap().len() > 2000);
    assert!(tmp.path().join("m/mesh.svg").is_file());

    let o = epsim(
        &["dispersion-check", "--points", "3", "--f-min", "1e3", "--f-max", "1e6", "--out", "d"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("d/dispersion_check.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
