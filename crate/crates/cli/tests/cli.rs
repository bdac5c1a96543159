mod common;

use std::fs;

use clap::Parser;
use databias_cli::report::REPORT_SCHEMA;
use databias_cli::{run, Cli, CliError};
use serde_json::Value;

use common::{databias, write_config, SMALL_CONFIG, STAGES};

fn error_of(config: &std::path::Path, args: &[&str]) -> CliError {
    let mut argv = vec!["databias"];
    argv.extend_from_slice(args);
    let config = config.display().to_string();
    argv.extend_from_slice(&["--config", &config]);
    run(&Cli::try_parse_from(argv).unwrap()).expect_err("command should fail")
}

#[test]
fn synth_then_audit_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_eq!(databias(&config, &["synth"]), 0);
    assert_eq!(databias(&config, &["audit", "--plots"]), 0);
    let out = dir.path().join("out/alpha");
    let ineq: Value = serde_json::from_str(&fs::read_to_string(out.join("audit/inequality.json")).unwrap()).unwrap();
    assert!(ineq["gini"].as_f64().unwrap() > 0.0);
    assert_eq!(ineq["income_gini"], 0.48);
    assert!(out.join("audit/lorenz.svg").exists());
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("ingest/run_metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 1729);
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn audit_without_ping_path_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_CONFIG.replace("pings = \"fixture/pings.csv\"\n", "");
    let config = write_config(dir.path(), &text);
    match error_of(&config, &["audit"]) {
        CliError::Config(msg) => assert!(msg.contains("input.pings"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
    assert_eq!(databias(&config, &["audit"]), 2);
}

#[test]
fn invalid_overrides_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    match error_of(&config, &["ingest", "--set", "thresholds.stay_dwell_s=0"]) {
        CliError::Config(msg) => assert!(msg.contains("thresholds.stay_dwell_s"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
    match error_of(&config, &["ingest", "--set", "cities.alpha.tz_offset_hours=\"east\""]) {
        CliError::Config(msg) => assert!(msg.contains("cities.alpha.tz_offset_hours"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
    // the fixture has not been written yet
    match error_of(&config, &["ingest"]) {
        CliError::Config(msg) => assert!(msg.contains("input.pings"), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn missing_upstream_artifacts_are_dependency_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    assert_eq!(databias(&config, &["synth"]), 0);
    for stage in ["networks", "model", "shap", "report"] {
        assert_eq!(databias(&config, &[stage]), 4, "{stage}");
    }
    assert_eq!(databias(&config, &["ingest"]), 0);
    assert_eq!(databias(&config, &["shap"]), 4);
    match error_of(&config, &["shap"]) {
        CliError::Dependency(msg) => assert!(msg.contains("databias model"), "{msg}"),
        other => panic!("expected a dependency error, got {other:?}"),
    }
}

#[test]
fn report_validates_against_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    for stage in STAGES {
        assert_eq!(databias(&config, &[stage, "--plots"]), 0, "{stage}");
    }
    let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let schema = jsonschema::JSONSchema::compile(&schema).unwrap();
    for city in ["alpha", "beta"] {
        let path = dir.path().join(format!("out/{city}/report/report.json"));
        let report: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        if let Err(errors) = schema.validate(&report) {
            let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
            panic!("{city}: {msgs:?}");
        }
        assert_eq!(report["generalization"]["city_matrix"]["cities"], serde_json::json!(["alpha", "beta"]));
        assert_eq!(report["networks"]["correlations"].as_array().unwrap().len(), 20);

        // the schema is not vacuous
        let mut broken = report.clone();
        broken["inequality"]["gini"] = Value::from(1.5);
        assert!(!schema.is_valid(&broken));
        broken = report.clone();
        broken.as_object_mut().unwrap().remove("shap");
        assert!(!schema.is_valid(&broken));
    }
}

#[test]
fn report_numbers_come_from_stage_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    for stage in STAGES {
        assert_eq!(databias(&config, &[stage]), 0, "{stage}");
    }
    let out = dir.path().join("out");
    let read = |rel: &str| -> Value { serde_json::from_str(&fs::read_to_string(out.join(rel)).unwrap()).unwrap() };
    let report = read("alpha/report/report.json");
    let sources = report["sources"].as_object().unwrap();
    assert_eq!(report["inequality"]["gini"], read(sources["inequality"].as_str().unwrap())["gini"]);
    let cv = read(sources["model"].as_str().unwrap());
    assert_eq!(report["model"]["mean_r2"], cv["report"]["mean_r2"]);
    let nets = read(sources["networks"].as_str().unwrap());
    assert_eq!(report["networks"]["correlations"], nets["correlations"]);
    let shap = read(sources["shap"].as_str().unwrap());
    assert_eq!(report["shap"]["top_features"][0], shap["importance"][0]);
    assert!(!out.join("alpha/audit/lorenz.svg").exists(), "plots only with --plots");
}
