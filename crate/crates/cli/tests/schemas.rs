//! Every JSON document the CLI writes validates against the published
//! schema and survives a typed round trip unchanged.

use std::path::{Path, PathBuf};
use std::process::Command;

use attnforge_core::analysis::{Calibration, GoldenComparison, GoldenFile, StatReport};
use attnforge_core::params::Manifest;
use attnforge_core::{GradCheckReport, NetworkSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

fn schema(stem: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../schemas/{stem}.schema.json"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap()
}

fn run(args: &[&str]) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_attnforge")).args(args).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn check<T: Serialize + DeserializeOwned>(stem: &str, text: &str) {
    let doc: Value = serde_json::from_str(text).unwrap();
    let v = schema(stem);
    let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).take(3).collect();
    assert!(errors.is_empty(), "{stem}: {errors:?}");
    let typed: T = serde_json::from_value(doc.clone()).unwrap();
    assert_eq!(serde_json::to_value(&typed).unwrap(), doc, "{stem} round trip");
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn cli_documents_match_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = |f: &str| dir.path().join(f);

    check::<StatReport>("stat_report", &run(&["stats", "--att", "gam", "--format", "json"]));
    check::<StatReport>("stat_report", &run(&["stats", "--arch", "mobilenet_v2", "--att", "cbam", "--format", "json"]));
    check::<Vec<GradCheckReport>>(
        "gradcheck_reports",
        &run(&["gradcheck", "--module", "cbam", "--shape", "1x8x4x4", "--format", "json"]),
    );
    check::<Vec<GoldenComparison>>("golden_comparisons", &run(&["golden", "--format", "json"]));

    let spec = d("spec.json");
    let weights = d("weights");
    run(&[
        "build",
        "--att",
        "gam",
        "--g",
        "4",
        "--out",
        spec.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
    ]);
    check::<NetworkSpec>("network_spec", &read(&spec));
    check::<Manifest>("weight_manifest", &read(&weights.join("manifest.json")));

    let cal = d("cal.json");
    run(&["calibrate", "--r", "4,8", "--g", "1", "--json", cal.to_str().unwrap()]);
    check::<Calibration>("calibration", &read(&cal));

    check::<GoldenFile>("golden_file", &serde_json::to_string(&GoldenFile::shipped().unwrap()).unwrap());
}

#[test]
fn schemas_reject_malformed_documents() {
    let v = schema("stat_report");
    assert!(!v.is_valid(&serde_json::json!({ "network": "x" })));
    let mut doc: Value = serde_json::from_str(&run(&["stats", "--format", "json"])).unwrap();
    doc["total_params"] = Value::from(-1);
    assert!(!v.is_valid(&doc));
}
