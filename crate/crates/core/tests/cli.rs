use std::path::Path;
use std::process::{Command, Output};

use u1qa::observables::TimeSeries;
use u1qa::runner::{run, Observable, RunManifest};

const MANIFEST: &str = r#"
name = "det"

[experiment]
model = "cswap4"
l = 16
p_u = 0.5
p = 0.3
sector = "fixed:1/2"
t_max = 12
realizations = 6
pairs_per_realization = 100
record_stride = 3
seed = 77

[sweep]
p = [0.0, 0.3]
"#;

fn u1qa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_u1qa")).args(args).output().unwrap()
}

fn write_manifest(dir: &Path, text: &str) -> String {
    let p = dir.join("m.toml");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn csv_bodies(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn output_does_not_depend_on_worker_count() {
    let m = RunManifest::from_toml(MANIFEST).unwrap();
    for obs in [Observable::Entropy, Observable::Density, Observable::Qdecay, Observable::Correlation] {
        let mut runs = Vec::new();
        for workers in [1, 3, 8] {
            let dir = tempfile::tempdir().unwrap();
            let report = run(&m, obs, dir.path(), workers).unwrap();
            assert_eq!(report.exit_code(), 0, "{obs}: {:?}", report.points);
            runs.push(csv_bodies(dir.path()));
        }
        assert!(!runs[0].is_empty());
        assert_eq!(runs[0], runs[1], "{obs}");
        assert_eq!(runs[0], runs[2], "{obs}");
    }
}

#[test]
fn reruns_are_byte_identical_and_named_by_pattern() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(dir.path(), MANIFEST);
    let mut bodies = Vec::new();
    for (i, workers) in ["1", "2"].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = u1qa(&["entropy", "--manifest", &manifest, "--workers", workers, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("2 sweep point(s)"));
        bodies.push(csv_bodies(&out));
        assert!(out.join("det__entropy__manifest.json").exists());
    }
    assert_eq!(bodies[0], bodies[1]);
    let names: Vec<&str> = bodies[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["det__entropy__L16_pu0p5_p0_nu1-2.csv", "det__entropy__L16_pu0p5_p0p3_nu1-2.csv"]);

    let o = u1qa(&["entropy", "--manifest", &manifest, "--seed", "78", "--out", dir.path().join("run2").to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(csv_bodies(&dir.path().join("run2")), bodies[0]);
}

#[test]
fn every_artifact_embeds_its_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let m = RunManifest::from_toml(MANIFEST).unwrap();
    run(&m, Observable::Pfrac, dir.path(), 1).unwrap();
    for (name, _) in csv_bodies(dir.path()) {
        let s = TimeSeries::read_csv(&dir.path().join(&name)).unwrap();
        let cfg = s.meta.config.expect("config embedded");
        assert_eq!(cfg.pointer("/spec/part/l").and_then(|v| v.as_u64()), Some(16));
        assert_eq!(cfg.pointer("/sector").and_then(|v| v.as_str()), Some("fixed:1/2"));
    }
}

#[test]
fn config_errors_exit_with_code_two_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = MANIFEST.replace("realizations = 6", "realizations = 0");
    let o = u1qa(&["pfrac", "--manifest", &write_manifest(dir.path(), &bad), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("realizations"));
    assert!(csv_bodies(dir.path()).is_empty(), "nothing runs when any point is invalid");

    let o = u1qa(&["entropy", "--manifest", "/nonexistent/m.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_points_are_isolated() {
    // A displacement run needs a dead-region or shared-bulk initial state;
    // asking for a standard pair fails every point at run time, not at
    // planning, and the report still lists each point.
    let dir = tempfile::tempdir().unwrap();
    let text = MANIFEST.replace("seed = 77", "seed = 77\ninitial = \"standard_pair\"");
    let m = RunManifest::from_toml(&text).unwrap();
    let report = run(&m, Observable::Displacement, dir.path(), 1).unwrap();
    assert_eq!(report.points.len(), 2);
    assert!(report.points.iter().all(|p| p.error.is_some()));
    assert_eq!(report.exit_code(), 2);
}

#[test]
fn oracle_check_and_psapprox() {
    let o = u1qa(&["oracle-check", "--realizations", "1", "--t-max", "4", "--mixed-l", "6", "--fixed-l", "8"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().last().unwrap().starts_with("max deviation:"));

    let o = u1qa(&["psapprox", "--l", "1000", "--dl", "20", "--nu", "0.05"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["approx"], 8.0);
    assert!((v["exact"].as_f64().unwrap() - 4.18786).abs() < 1e-4);

    let o = u1qa(&["psapprox", "--l", "10", "--dl", "1", "--nu", "0.15"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_reads_emitted_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let times: Vec<usize> = (0..=200).collect();
    let row: Vec<f64> = times.iter().map(|&t| 0.7 * ((t as f64) * (t as f64 + 1.0).ln()).sqrt()).collect();
    let s = TimeSeries::from_samples(&times, vec![row.clone(), row], "entropy_phase_sum");
    let path = dir.path().join("s.csv");
    s.write_csv(&path).unwrap();
    let o = u1qa(&["fit", "--form", "compare", "--t-min", "10", "--t-max", "200", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let fits = v[path.to_str().unwrap()].as_array().unwrap();
    assert_eq!(fits.len(), 4);

    let o = u1qa(&["fit", "--form", "collapse", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "the series records no L");
    let o = u1qa(&["fit", "--form", "collapse", "--labels", "8", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "collapse needs three curves");
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 3"));
}
