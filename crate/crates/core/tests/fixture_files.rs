//! Shipped fixture files load and render as expected.
//!
//! Golden prompt transcripts are rewritten with `LEXCHECK_BLESS=1`.

use std::fs;
use std::path::{Path, PathBuf};

use lexcheck::accounting::{estimate_cost, format_cost, throughput_report, RateTable, UsageLedger};
use lexcheck::prompt::default_templates;
use lexcheck::rules::{load_catalog, render_rules};
use lexcheck::{
    build_prompt, chunk_document, ChunkConfig, Rational64, RegulatoryArtifact, RuleCatalog,
    SENTINEL_ID,
};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn dpa_catalog() -> RuleCatalog {
    load_catalog(fixtures().join("gdpr_dpa_rules.catalog")).unwrap()
}

fn assert_golden(name: &str, actual: &str) {
    let path = fixtures().join("golden").join(name);
    if std::env::var_os("LEXCHECK_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from its golden file");
}

#[test]
fn dpa_catalog_has_ids_one_to_forty_six() {
    let cat = dpa_catalog();
    assert_eq!(cat.catalog_id(), "gdpr-art28-dpa-v1");
    assert_eq!(cat.ids().collect::<Vec<_>>(), (1..=46).collect::<Vec<_>>());
    assert!(!cat.contains(SENTINEL_ID));
}

#[test]
fn dpa_catalog_renders_one_line_per_rule_plus_sentinel() {
    let rendered = render_rules(&dpa_catalog());
    let lines: Vec<&str> = rendered.lines().collect();
    assert_eq!(lines.len(), 47);
    assert!(lines[0].starts_with("R1: "));
    assert!(lines[45].starts_with("R46: "));
    assert!(lines[46].contains("99"));
}

#[test]
fn dpa_catalog_survives_a_save_and_reload() {
    let cat = dpa_catalog();
    let again = RuleCatalog::parse(&cat.to_file_string(), "unused").unwrap();
    assert_eq!(again, cat);
}

#[test]
fn prompts_for_the_access_profiles_snippet_match_golden_files() {
    let cat = dpa_catalog();
    let doc =
        RegulatoryArtifact::from_file(fixtures().join("samples/access_profiles.txt")).unwrap();
    let c = chunk_document(&doc, &ChunkConfig::default()).unwrap();
    let (sentence_t, paragraph_t) = default_templates();
    let target = &c.sentences[1];

    let sentence = build_prompt(&sentence_t, &cat, target, None).unwrap();
    assert_eq!(sentence.user(), target.text);
    assert_golden("prompt_sentence_level.txt", &sentence.render_transcript());

    let paragraph = build_prompt(&paragraph_t, &cat, target, Some(&c.paragraphs[0])).unwrap();
    assert!(paragraph.user().contains(&c.sentences[0].text));
    assert!(paragraph
        .user()
        .contains(&format!("[TARGET]\n{}\n[/TARGET]", target.text)));
    assert_golden("prompt_paragraph_level.txt", &paragraph.render_transcript());
}

#[test]
fn shipped_rates_reproduce_the_example_dpa_costs() {
    let rates = RateTable::from_file(fixtures().join("rates/openai_2024-01.toml")).unwrap();
    let ledger = UsageLedger::from_file(fixtures().join("ledgers/dpa_example.csv")).unwrap();
    let t = ledger.totals();
    assert_eq!((t.prompt_tokens, t.completion_tokens), (24479, 769));

    let cheap: Rational64 = estimate_cost(&ledger, &rates, "openai", "gpt-3.5-turbo-0125").unwrap();
    let dear: Rational64 = estimate_cost(&ledger, &rates, "openai", "gpt-4-0125-preview").unwrap();
    // 24.479 * 0.001 + 0.769 * 0.002 and 24.479 * 0.01 + 0.769 * 0.03.
    assert_eq!(cheap, Rational64::new(26_017, 1_000_000));
    assert_eq!(dear, Rational64::new(267_860, 1_000_000));
    assert_eq!(format_cost(&cheap), "0.0260");
    assert_eq!(format_cost(&dear), "0.2679");
}

#[test]
fn example_ledger_projects_over_five_thousand_passages_an_hour() {
    let ledger = UsageLedger::from_file(fixtures().join("ledgers/dpa_example.csv")).unwrap();
    let t: lexcheck::ExactThroughput = throughput_report(&ledger).unwrap();
    assert_eq!(t.mean_latency_secs, Rational64::new(7, 10));
    assert_eq!(t.whole_passages_per_hour(), Some(5142));
}
