use std::path::PathBuf;
use std::process::Command;

use gradedgeo::cli::config_schema;
use gradedgeo::curve::CurvePath;
use serde_json::Value;

fn gradedgeo(args: &[&str]) -> (i32, Value, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gradedgeo")).args(args).output().expect("run binary");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let summary = serde_json::from_str::<Value>(&stdout).map(|d| d["summary"].clone()).unwrap_or(Value::Null);
    (out.status.code().unwrap(), summary, String::from_utf8(out.stderr).unwrap())
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("run.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn geodesic_example() {
    let (code, s, _) = gradedgeo(&["geodesic", "--problem", "flat", "--x0", "0,0", "--v0", "1,0", "--t", "1"]);
    assert_eq!(code, 0);
    let end: Vec<f64> = serde_json::from_value(s["result"]["endpoint"].clone()).unwrap();
    assert!((end[0] - 1.0).abs() < 1e-12 && end[1].abs() < 1e-12);
}

#[test]
fn distance_example() {
    let (code, s, _) = gradedgeo(&["distance", "--problem", "sphere_stereographic", "--x", "0,0", "--y", "0.5,0"]);
    assert_eq!(code, 0);
    let rho1 = s["result"]["levels"][0]["value"].as_f64().unwrap();
    assert!((rho1 - 0.9272952).abs() < 1e-7);
}

#[test]
fn ricci_demo_example() {
    let (code, s, _) = gradedgeo(&["ricci-demo", "--kind", "ebin", "--lambda", "1", "--T", "0.25"]);
    assert_eq!(code, 0);
    assert_eq!(s["result"]["verdict"], "not geodesic");
}

#[test]
fn minimal_config_gets_defaults_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"problem": "flat", "v0": [1, 2]}"#);
    let (code, s, _) = gradedgeo(&["geodesic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(s["config"]["rtol"], 1e-9);
    assert_eq!(s["config"]["seed"], 42);
    assert_eq!(s["config"]["t"], 1.0);
}

#[test]
fn config_grading_error_names_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"problem": "flat", "params": {"grams": [[[2, 0], [0, 2]], [[1, 0], [0, 1]]]}}"#);
    let (code, s, err) = gradedgeo(&["geodesic", "--config", cfg.to_str().unwrap(), "--v0", "1,0"]);
    assert_eq!(code, 2);
    assert_eq!(s["error"]["reason"], "grading");
    assert!(err.contains('1') && err.contains('2'), "{err}");
}

#[test]
fn config_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"problem": "flat", "gamma": 0.5}"#);
    let (code, _, err) = gradedgeo(&["geodesic", "--config", cfg.to_str().unwrap(), "--v0", "1,0"]);
    assert_eq!(code, 2);
    assert!(err.contains("gamma"), "{err}");
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, r#"{"problem": "flat", "v0": [1, 0], "seed": 5}"#);
    let (code, s, _) = gradedgeo(&["geodesic", "--config", cfg.to_str().unwrap(), "--seed", "9", "--v0", "0,2"]);
    assert_eq!(code, 0);
    assert_eq!(s["config"]["seed"], 9);
    assert_eq!(s["config"]["v0"], serde_json::json!([0.0, 2.0]));
}

#[test]
fn csv_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("geo.csv");
    let (code, _, _) = gradedgeo(&[
        "geodesic",
        "--problem",
        "conformal",
        "--v0",
        "0.4,-0.3",
        "--segments",
        "50",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let c = CurvePath::read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(c.len(), 51);
    let again = dir.path().join("again.csv");
    c.write_csv(std::fs::File::create(&again).unwrap()).unwrap();
    let d = CurvePath::read_csv(std::fs::File::open(&again).unwrap()).unwrap();
    for (a, b) in c.nodes().iter().zip(d.nodes()) {
        assert!((a - b).amax() <= 1e-12);
    }
    let (code, s, _) = gradedgeo(&["el-residual", "--problem", "conformal", "--curve", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{s}");
}

#[test]
fn transport_and_flow_commands() {
    let (code, s, _) = gradedgeo(&["transport", "--problem", "sphere_stereographic", "--v0", "0.5,0", "--w0", "0,1"]);
    assert_eq!(code, 0);
    assert!(s["result"]["levels"][0]["norm_drift"].as_f64().unwrap() < 1e-6);
    let (code, s, _) = gradedgeo(&["flow", "--field", "square", "--x0", "2", "--t", "0.25"]);
    assert_eq!(code, 0);
    assert!((s["result"]["flow_domain"]["t_plus"].as_f64().unwrap() - 0.5).abs() < 1e-6);
    assert_eq!(s["result"]["flow_domain"]["exit_plus"], "blow_up");
}

#[test]
fn selftest_subset() {
    let (code, s, _) = gradedgeo(&["selftest", "--only", "1,12"]);
    assert_eq!(code, 0);
    assert_eq!(s["result"]["criteria"].as_array().unwrap().len(), 2);
}

#[test]
fn schema_file_is_current() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.schema.json");
    let schema = serde_json::to_string_pretty(&config_schema()).unwrap() + "\n";
    if std::env::var_os("GRADEDGEO_BLESS").is_some() {
        std::fs::write(path, &schema).unwrap();
    }
    let on_disk = std::fs::read_to_string(path).expect("docs/config.schema.json (regenerate with GRADEDGEO_BLESS=1)");
    assert_eq!(on_disk, schema);
}
