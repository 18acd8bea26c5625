mod common;

use tailqa::cli::{run_all, run_named};
use tailqa::error::CliError;
use tailqa::manifest::{StageManifest, StageStatus};
use tailqa::stages::STAGES;

use common::{digests, Workspace};

#[test]
fn rerun_is_a_byte_level_no_op() {
    let ws = Workspace::new(400);
    let cfg = ws.config(&[]);
    run_all(&cfg, false).unwrap();
    let first = digests(&ws.out());
    let manifests = digests(&ws.out().join("manifests"));
    for stage in STAGES {
        assert_eq!(run_named(&cfg, stage, false).unwrap(), StageStatus::UpToDate, "{stage}");
    }
    assert_eq!(digests(&ws.out()), first);
    assert_eq!(digests(&ws.out().join("manifests")), manifests);
}

#[test]
fn every_manifest_records_config_digest_and_outputs() {
    let ws = Workspace::new(300);
    let cfg = ws.config(&[]);
    run_all(&cfg, false).unwrap();
    let digest = tailqa::manifest::config_digest(&cfg);
    for stage in STAGES {
        let m = StageManifest::load(&ws.out(), stage).unwrap().unwrap();
        assert_eq!(m.config_digest, digest);
        assert!(!m.outputs.is_empty(), "{stage}");
        m.verify_outputs(&ws.out()).unwrap();
    }
    assert!(!ws.out().join(".staging").join("generate").exists());
}

#[test]
fn tampered_upstream_output_is_refused() {
    let ws = Workspace::new(300);
    let cfg = ws.config(&[]);
    for stage in ["build-index", "sample", "filter", "match-difficulty"] {
        run_named(&cfg, stage, false).unwrap();
    }
    let matched = ws.out().join("matched.jsonl");
    let mut text = std::fs::read_to_string(&matched).unwrap();
    text.push('\n');
    std::fs::write(&matched, text).unwrap();
    match run_named(&cfg, "generate", false) {
        Err(CliError::Data(msg)) => {
            assert!(msg.contains("digest mismatch"), "{msg}");
            assert!(msg.contains("match-difficulty"), "{msg}");
        }
        other => panic!("expected a data error, got {other:?}"),
    }
    assert!(!ws.out().join("dataset.jsonl").exists());
}

#[test]
fn deleted_upstream_output_is_refused() {
    let ws = Workspace::new(300);
    let cfg = ws.config(&[]);
    for stage in ["build-index", "sample", "filter"] {
        run_named(&cfg, stage, false).unwrap();
    }
    std::fs::remove_file(ws.out().join("filtered.jsonl")).unwrap();
    let err = run_named(&cfg, "match-difficulty", false).unwrap_err();
    assert!(err.to_string().contains("missing"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn missing_upstream_stage_is_refused() {
    let ws = Workspace::new(200);
    let cfg = ws.config(&[]);
    let err = run_named(&cfg, "sample", false).unwrap_err();
    assert!(err.to_string().contains("build-index"), "{err}");
}

#[test]
fn failed_stage_leaves_previous_outputs_and_no_staging() {
    let ws = Workspace::new(300);
    let cfg = ws.config(&[]);
    run_all(&cfg, false).unwrap();
    let before = digests(&ws.out());
    let broken = ws.config(&[r#"paths.corpus="missing-corpus.jsonl""#]);
    let err = run_named(&broken, "retrieve", true).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(digests(&ws.out()), before);
    assert!(!ws.out().join(".staging").join("retrieve").exists());
}

#[test]
fn config_change_reruns_stage() {
    let ws = Workspace::new(300);
    run_all(&ws.config(&[]), false).unwrap();
    let deeper = ws.config(&["rerank.max_depth=1"]);
    for stage in ["build-index", "sample", "filter", "match-difficulty", "generate", "retrieve"] {
        // Upstream stages still see their own (older) config digest but rerun
        // because the whole-config digest changed.
        run_named(&deeper, stage, false).unwrap();
    }
    assert_eq!(run_named(&deeper, "rerank", false).unwrap(), StageStatus::Ran);
    assert_eq!(run_named(&deeper, "rerank", false).unwrap(), StageStatus::UpToDate);
}

#[test]
fn report_lists_dataset_summary_fields() {
    let ws = Workspace::new(400);
    let cfg = ws.config(&[]);
    run_all(&cfg, false).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.out().join("report.json")).unwrap()).unwrap();
    let datasets = report["datasets"].as_array().unwrap();
    assert_eq!(datasets.len(), 2);
    let dataset: Vec<serde_json::Value> = std::fs::read_to_string(ws.out().join("dataset.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for d in datasets {
        let bucket = d["bucket"].as_str().unwrap();
        let rows: Vec<&serde_json::Value> = dataset.iter().filter(|r| r["bucket"] == bucket).collect();
        let props: std::collections::BTreeSet<&str> = rows.iter().map(|r| r["property"].as_str().unwrap()).collect();
        assert_eq!(d["triplets"], rows.len());
        assert_eq!(d["unique_properties"], props.len());
        assert!(d["min_degree"].is_u64() && d["max_degree"].is_u64());
    }
    assert_eq!(report["stages"].as_array().unwrap().len(), STAGES.len() - 1);
    let md = std::fs::read_to_string(ws.out().join("report.md")).unwrap();
    assert!(md.contains("| fine | [1, 2] |"));
}
