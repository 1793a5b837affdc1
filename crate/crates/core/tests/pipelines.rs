use std::fs;
use std::path::Path;

use serde_json::Value;
use vidkern_core::harness::{run, stable_part, ExperimentConfig};
use vidkern_core::Error;

fn config(body: &str) -> ExperimentConfig {
    let cfg = ExperimentConfig::from_json(body, Path::new("inline.json")).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn small(task: &str, seed: u64) -> ExperimentConfig {
    config(&format!(
        r#"{{"task": "{task}", "seed": {seed},
            "streams": [{{"name": "rgb", "quantizer": "TCP"}}, {{"name": "flow", "quantizer": "AP"}}],
            "dataset": {{"videos": 10, "frames": 24}}}}"#
    ))
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn recognize_report_has_every_stream_and_a_fused_score() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&small("recognize", 5), dir.path()).unwrap();
    assert!(out.checks_passed);
    let m = &out.report["metrics"];
    let fused = m["fused"]["top1"].as_f64().unwrap();
    for s in ["rgb", "flow"] {
        let single = m["streams"][s]["top1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&single));
        assert!(fused >= single, "fused {fused} below {s} {single}");
    }
    assert_eq!(read_report(dir.path()), out.report);
}

#[test]
fn existing_data_is_reused_and_reruns_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("localize", 9);
    let first = run(&cfg, dir.path()).unwrap();
    let stamp = fs::metadata(dir.path().join("data/localize/proposals.json")).unwrap().modified().unwrap();
    let second = run(&cfg, dir.path()).unwrap();
    let again = fs::metadata(dir.path().join("data/localize/proposals.json")).unwrap().modified().unwrap();
    assert_eq!(stamp, again);
    assert_eq!(stable_part(&first.report), stable_part(&second.report));
    let map = first.report["metrics"]["frame_map"]["two_stream"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
}

#[test]
fn different_seeds_give_different_data() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run(&small("caption", 1), a.path()).unwrap();
    let rb = run(&small("caption", 2), b.path()).unwrap();
    assert_ne!(ra.report["metrics"], rb.report["metrics"]);
    for r in [&ra, &rb] {
        for v in r.report["metrics"]["captions"].as_array().unwrap() {
            assert_eq!(v["events"].as_array().unwrap().len(), 5);
        }
    }
}

#[test]
fn corrupt_tensor_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("recognize", 3);
    run(&cfg, dir.path()).unwrap();
    let victim = dir.path().join("data/recognize/val/flow/0000.vtf");
    let mut bytes = fs::read(&victim).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&victim, bytes).unwrap();
    let err = run(&cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::TensorFile(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn malformed_configs_are_config_errors() {
    let bad = [
        r#"{"task": "recognize"}"#,
        r#"{"task": "recognize", "seed": 1, "colour": "red"}"#,
        r#"{"task": "dance", "seed": 1}"#,
        r#"{"task": "recognize", "seed": 1, "streams": []}"#,
        r#"{"task": "recognize", "seed": 1, "streams": [{"name": "a", "quantizer": "AP"}, {"name": "a", "quantizer": "AP"}]}"#,
        r#"{"task": "caption", "seed": 1, "dataset": {"frames": 4}}"#,
    ];
    for body in bad {
        let err = ExperimentConfig::from_json(body, Path::new("inline.json")).and_then(|c| c.validate()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{body}: {err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn gradcheck_task_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&config(r#"{"task": "gradcheck", "seed": 0}"#), dir.path()).unwrap();
    assert!(out.checks_passed);
    let checks = out.report["metrics"]["checks"].as_array().unwrap();
    assert!(checks.len() > 30);
}
