mod common;

use std::fs;

use common::{lexcheck, path_str, read_json, read_labels, stderr, stdout, workspace};
use tempfile::tempdir;

const CATALOG: &str = "fixtures/gdpr_dpa_rules.catalog";
const SHORT: &str = "fixtures/samples/short_dpa.txt";
const ABLATION: &str = "fixtures/ablation/context_dpa.txt";

fn check_short(fixture: &str, out: &str) -> std::process::Output {
    lexcheck(&[
        "check",
        SHORT,
        "--catalog",
        CATALOG,
        "--provider",
        "mock",
        "--mock-fixture",
        fixture,
        "--rates",
        "fixtures/rates/openai_2024-01.toml",
        "-o",
        out,
        "--fixed-clock",
    ])
}

#[test]
fn chunk_prints_counts_per_document() {
    let o = lexcheck(&[
        "chunk",
        "fixtures/corpus/dpa_01.txt",
        "fixtures/corpus/dpa_12.txt",
        SHORT,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "dpa_01\tparagraphs=15\tsentences=49\ndpa_12\tparagraphs=13\tsentences=31\nshort_dpa\tparagraphs=1\tsentences=3\n"
    );
}

#[test]
fn chunk_writes_passage_files() {
    let dir = tempdir().unwrap();
    let o = lexcheck(&[
        "chunk",
        "fixtures/corpus/dpa_03.txt",
        "-o",
        path_str(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> =
        fs::read_to_string(dir.path().join("dpa_03.passages.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
    assert_eq!(lines.len(), 16 + 42);
    assert!(lines.iter().all(|p| p["raw_span"].is_object()));
}

#[test]
fn empty_document_chunks_to_nothing() {
    let o = lexcheck(&["chunk", "fixtures/samples/empty.txt"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "empty\tparagraphs=0\tsentences=0\n");
}

#[test]
fn missing_input_is_an_error() {
    let o = lexcheck(&["chunk", "fixtures/no_such_file.txt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_file.txt"));
}

#[test]
fn check_reproduces_the_golden_report() {
    let dir = tempdir().unwrap();
    let o = check_short("fixtures/mock/short_dpa.jsonl", path_str(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "short_dpa.sentence: 3 of 3 passages checked, 2 of 46 rules satisfied\n"
    );
    for ext in ["json", "txt"] {
        let name = format!("short_dpa.sentence.report.{ext}");
        let got = fs::read_to_string(dir.path().join(&name)).unwrap();
        let want = fs::read_to_string(workspace().join("fixtures/golden").join(&name)).unwrap();
        assert_eq!(got, want, "{name}");
    }
    let report = read_json(&dir.path().join("short_dpa.sentence.report.json"));
    assert_eq!(report["entries"].as_array().unwrap().len(), 3);
    assert_eq!(report["incomplete"], false);
}

#[test]
fn check_is_byte_identical_across_runs() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    for d in [&a, &b] {
        assert!(
            check_short("fixtures/mock/short_dpa.jsonl", path_str(d.path()))
                .status
                .success()
        );
    }
    for name in [
        "short_dpa.sentence.report.json",
        "short_dpa.sentence.report.txt",
        "usage.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn interrupted_run_is_flagged_and_exits_three() {
    let dir = tempdir().unwrap();
    let o = check_short(
        "fixtures/mock/short_dpa_interrupted.jsonl",
        path_str(dir.path()),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report = read_json(&dir.path().join("short_dpa.sentence.report.json"));
    assert_eq!(report["incomplete"], true);
    let status: Vec<&str> = report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["status"].as_str().unwrap())
        .collect();
    assert_eq!(status, ["checked", "provider_error", "checked"]);
    assert_eq!(report["summary"]["provider_failures"], 1);
    // Only completed requests are billed.
    let ledger = fs::read_to_string(dir.path().join("usage.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 1 + 2);
}

#[test]
fn run_with_no_answers_at_all_fails() {
    let dir = tempdir().unwrap();
    let o = check_short("fixtures/mock/ablation_model_a.jsonl", path_str(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"));
}

#[test]
fn missing_credentials_fail_without_network() {
    let dir = tempdir().unwrap();
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_lexcheck"))
        .args([
            "check",
            SHORT,
            "--catalog",
            CATALOG,
            "-o",
            path_str(dir.path()),
            "--fixed-clock",
        ])
        .current_dir(workspace())
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("OPENAI_API_KEY"), "{}", stderr(&o));
}

#[test]
fn both_granularities_write_a_side_by_side_comparison() {
    let dir = tempdir().unwrap();
    let o = lexcheck(&[
        "check",
        ABLATION,
        "--catalog",
        CATALOG,
        "--granularity",
        "both",
        "--provider-config",
        "fixtures/providers/mock_model_a.toml",
        "-o",
        path_str(dir.path()),
        "--fixed-clock",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in [
        "context_dpa.sentence.report.json",
        "context_dpa.paragraph.report.json",
        "context_dpa.ablation.txt",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let paragraph = read_json(&dir.path().join("context_dpa.paragraph.report.json"));
    assert_eq!(paragraph["run"]["target_granularity"], "sentence");
    assert_eq!(paragraph["run"]["context_granularity"], "paragraph");
    let cmp = fs::read_to_string(dir.path().join("context_dpa.ablation.txt")).unwrap();
    let block = cmp
        .split("\n\n")
        .find(|b| b.contains("It shall impose"))
        .expect("pronoun sentence listed");
    assert!(block.contains("Run 1: none applicable (99)"), "{block}");
    assert!(block.contains("Run 2: 26 |"), "{block}");
}

#[test]
fn check_with_gold_writes_metrics() {
    let dir = tempdir().unwrap();
    let o = lexcheck(&[
        "check",
        ABLATION,
        "--catalog",
        CATALOG,
        "--provider-config",
        "fixtures/providers/mock_model_b.toml",
        "--gold",
        "fixtures/ablation/gold.txt",
        "-o",
        path_str(dir.path()),
        "--fixed-clock",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("metrics"))
        .collect();
    assert!(!names.is_empty());
}

#[test]
fn evaluate_prints_the_accuracy_table() {
    let dir = tempdir().unwrap();
    let o = lexcheck(&[
        "evaluate",
        ABLATION,
        "--catalog",
        CATALOG,
        "--gold",
        "fixtures/ablation/gold.txt",
        "--granularity",
        "both",
        "--provider-config",
        "fixtures/providers/mock_model_a.toml",
        "--provider-config",
        "fixtures/providers/mock_model_b.toml",
        "-o",
        path_str(dir.path()),
        "--fixed-clock",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("Sentence accuracy (%)") && out.contains("Paragraph accuracy (%)"),
        "{out}"
    );
    assert!(
        out.contains("mock-large |                   95.2 |                    98.8"),
        "{out}"
    );
    assert!(
        out.contains("mock-small |                   91.7 |                    96.4"),
        "{out}"
    );
    let ablation = read_json(&dir.path().join("mock-small.ablation.json"));
    assert_eq!(ablation["mean_accuracy"]["improved"], true);
}

#[test]
fn external_predictions_score_like_native_ones() {
    let dir = tempdir().unwrap();
    let run = lexcheck(&[
        "evaluate",
        ABLATION,
        "--catalog",
        CATALOG,
        "--gold",
        "fixtures/ablation/gold.txt",
        "--provider-config",
        "fixtures/providers/mock_model_b.toml",
        "-o",
        path_str(dir.path()),
        "--fixed-clock",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let native = read_json(&dir.path().join("mock-small.sentence.metrics.json"));

    let ext = tempdir().unwrap();
    let predictions = dir.path().join("mock-small.sentence.predictions.txt");
    let o = lexcheck(&[
        "evaluate",
        "--catalog",
        CATALOG,
        "--gold",
        "fixtures/ablation/gold.txt",
        "--predictions",
        path_str(&predictions),
        "-o",
        path_str(ext.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&ext.path().join("external.metrics.json")), native);

    let gold = read_labels(&workspace().join("fixtures/ablation/gold.txt"));
    assert_eq!(
        common::oracle_mean_accuracy(&gold, &read_labels(&predictions)),
        (11, 12)
    );
}

#[test]
fn evaluate_rejects_predictions_for_unknown_passages() {
    let dir = tempdir().unwrap();
    let o = lexcheck(&[
        "evaluate",
        "--catalog",
        CATALOG,
        "--gold",
        "fixtures/ablation/gold.txt",
        "--predictions",
        "fixtures/baseline/predictions.txt",
        "-o",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("baseline_dpa:s:"), "{}", stderr(&o));
}

#[test]
fn cost_reports_both_rate_pairs() {
    let o = lexcheck(&[
        "cost",
        "--ledger",
        "fixtures/ledgers/dpa_example.csv",
        "--rates",
        "fixtures/rates/openai_2024-01.toml",
        "--price-as",
        "openai/gpt-3.5-turbo-0125",
        "--price-as",
        "openai/gpt-4-0125-preview",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.contains("gpt-3.5-turbo-0125 rates: 0.0260 USD"),
        "{out}"
    );
    assert!(
        out.contains("gpt-4-0125-preview rates: 0.2679 USD"),
        "{out}"
    );
    assert!(out.contains("5142 passages per hour"), "{out}");
}

#[test]
fn cost_rejects_an_unpriced_model() {
    let o = lexcheck(&[
        "cost",
        "--ledger",
        "fixtures/ledgers/dpa_example.csv",
        "--rates",
        "fixtures/rates/openai_2024-01.toml",
        "--price-as",
        "openai/gpt-5",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
