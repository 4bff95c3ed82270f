//! Acceptance suite. Prints one line per criterion and fails if any is red.
//!
//! Run alone with `cargo test -p lexcheck-cli --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::fs;

use common::{
    lexcheck, oracle_macro_f, oracle_mean_accuracy, path_str, read_json, read_labels, stderr,
    workspace,
};
use lexcheck::accounting::{estimate_cost, format_cost, RateTable, UsageLedger};
use lexcheck::evaluation::{import_external_predictions, load_gold, score, GoldAnnotation};
use lexcheck::rules::{load_catalog, render_rules};
use lexcheck::{
    chunk_document, parse_response, ChunkConfig, ComplianceRule, Granularity, ParseStatus,
    Rational64, RegulatoryArtifact, RuleCatalog, RuleId, Verdict, SENTINEL_ID,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(rel: &str) -> std::path::PathBuf {
    workspace().join("fixtures").join(rel)
}

fn dpa_catalog() -> RuleCatalog {
    load_catalog(fixture("gdpr_dpa_rules.catalog")).unwrap()
}

fn frac_f64((n, d): (u64, u64)) -> f64 {
    n as f64 / d as f64
}

fn criterion_1() -> Outcome {
    let rates =
        RateTable::from_file(fixture("rates/openai_2024-01.toml")).map_err(|e| e.to_string())?;
    let ledger =
        UsageLedger::from_file(fixture("ledgers/dpa_example.csv")).map_err(|e| e.to_string())?;
    let t = ledger.totals();
    ensure(
        (t.prompt_tokens, t.completion_tokens) == (24479, 769),
        || format!("ledger totals {t:?}"),
    )?;
    let mut shown = Vec::new();
    for (model, paper) in [("gpt-3.5-turbo-0125", 0.026), ("gpt-4-0125-preview", 0.27)] {
        let cost: Rational64 =
            estimate_cost(&ledger, &rates, "openai", model).map_err(|e| e.to_string())?;
        let value = *cost.numer() as f64 / *cost.denom() as f64;
        ensure((value - paper).abs() <= 0.005, || {
            format!("{model}: {value} vs {paper}")
        })?;
        shown.push(format!("{model} {} (paper {paper})", format_cost(&cost)));
    }
    Ok(shown.join(", "))
}

fn criterion_2() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = path_str(dir.path());
    let run = lexcheck(&[
        "check",
        "fixtures/samples/short_dpa.txt",
        "--catalog",
        "fixtures/gdpr_dpa_rules.catalog",
        "--provider",
        "mock",
        "--mock-fixture",
        "fixtures/mock/short_dpa.jsonl",
        "-o",
        out,
        "--fixed-clock",
    ]);
    ensure(run.status.success(), || stderr(&run))?;
    let ledger = dir.path().join("usage.csv");
    let cost = lexcheck(&[
        "cost",
        "--ledger",
        path_str(&ledger),
        "--rates",
        "fixtures/rates/openai_2024-01.toml",
        "--json",
    ]);
    ensure(cost.status.success(), || stderr(&cost))?;
    let v: serde_json::Value = serde_json::from_slice(&cost.stdout).map_err(|e| e.to_string())?;
    let mean = v["mean_latency_secs"].as_f64().unwrap_or(f64::NAN);
    let per_hour = v["projected_passages_per_hour"].as_u64().unwrap_or(0);
    ensure((mean - 0.7).abs() < 1e-12, || {
        format!("mean latency {mean}")
    })?;
    ensure(per_hour >= 5000, || format!("{per_hour} passages/hour"))?;
    Ok(format!(
        "mean {mean:.3} s/passage -> {per_hour} passages/hour (>= 5000)"
    ))
}

fn criterion_3() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = lexcheck(&[
        "evaluate",
        "fixtures/ablation/context_dpa.txt",
        "--catalog",
        "fixtures/gdpr_dpa_rules.catalog",
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
    ensure(run.status.success(), || stderr(&run))?;
    let table = read_json(&dir.path().join("accuracy_table.json"));
    let rows = table.as_array().ok_or("accuracy table is not a list")?;
    ensure(rows.len() == 2, || format!("{} rows", rows.len()))?;

    let gold_path = fixture("ablation/gold.txt");
    let gold = read_labels(&gold_path);
    let cat = dpa_catalog();
    let gold_ann = load_gold(&gold_path, &cat).map_err(|e| e.to_string())?;
    // Hand-derived from the fixture design; the oracle below must agree.
    let frozen = [
        ("mock-large", (20, 21), (83, 84)),
        ("mock-small", (11, 12), (27, 28)),
    ];
    let mut shown = Vec::new();
    for (row, (model, want_s, want_p)) in rows.iter().zip(frozen) {
        ensure(row["model"] == model, || format!("row {row}"))?;
        let mut exact = Vec::new();
        for (run, want) in [("sentence", want_s), ("paragraph", want_p)] {
            let pred_path = dir.path().join(format!("{model}.{run}.predictions.txt"));
            let oracle = oracle_mean_accuracy(&gold, &read_labels(&pred_path));
            ensure(oracle == want, || {
                format!("{model} {run}: oracle {oracle:?}, designed {want:?}")
            })?;
            let preds = import_external_predictions(&pred_path, &cat).map_err(|e| e.to_string())?;
            let lib = score::<Rational64>(&preds, &gold_ann, &cat).map_err(|e| e.to_string())?;
            let lib_acc = lib.mean_accuracy.ok_or("no mean accuracy")?;
            ensure(
                (*lib_acc.numer() as u64, *lib_acc.denom() as u64) == oracle,
                || format!("{model} {run}: scorer {lib_acc} vs oracle {oracle:?}"),
            )?;
            let cli = row[run].as_f64().unwrap_or(f64::NAN);
            ensure((cli - frac_f64(oracle)).abs() < 1e-12, || {
                format!("{model} {run}: table {cli}")
            })?;
            exact.push(oracle);
        }
        ensure(frac_f64(exact[1]) > frac_f64(exact[0]), || {
            format!("{model}: paragraph not above sentence")
        })?;
        shown.push(format!(
            "{model} {}/{} -> {}/{}",
            exact[0].0, exact[0].1, exact[1].0, exact[1].1
        ));
    }
    Ok(format!(
        "sentence -> paragraph mean accuracy: {}",
        shown.join(", ")
    ))
}

// Independent per-rule scorer for criterion 4, in exact fractions.
fn brute_force(gold: &[Vec<bool>], pred: &[Vec<bool>]) -> Vec<[Option<(i64, i64)>; 4]> {
    let k = gold.first().map_or(0, Vec::len);
    (0..k)
        .map(|r| {
            let mut c = [0i64; 4]; // tp fp fn tn
            for (g, p) in gold.iter().zip(pred) {
                c[match (g[r], p[r]) {
                    (true, true) => 0,
                    (false, true) => 1,
                    (true, false) => 2,
                    (false, false) => 3,
                }] += 1;
            }
            let [tp, fp, fnn, tn] = c;
            let frac = |n: i64, d: i64| (d > 0).then(|| reduce_i(n, d));
            [
                frac(tp, tp + fp),
                frac(tp, tp + fnn),
                frac(2 * tp, 2 * tp + fp + fnn),
                frac(tp + tn, tp + fp + fnn + tn),
            ]
        })
        .collect()
}

fn reduce_i(n: i64, d: i64) -> (i64, i64) {
    let (a, b) = common::reduce(n as u64, d as u64);
    (a as i64, b as i64)
}

fn labels(row: &[bool]) -> BTreeSet<RuleId> {
    let ids: BTreeSet<RuleId> = row
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(r, _)| r as RuleId + 1)
        .collect();
    if ids.is_empty() {
        BTreeSet::from([SENTINEL_ID])
    } else {
        ids
    }
}

fn grids_agree(gold: &[Vec<bool>], pred: &[Vec<bool>], cat: &RuleCatalog) -> bool {
    let gold_ann: Vec<GoldAnnotation> = gold
        .iter()
        .enumerate()
        .map(|(i, row)| GoldAnnotation::new(format!("g:s:{i}"), labels(row), cat).unwrap())
        .collect();
    let verdicts: Vec<Verdict> = pred
        .iter()
        .enumerate()
        .map(|(i, row)| Verdict::new(format!("g:s:{i}"), labels(row), "", ParseStatus::Clean))
        .collect();
    let m = score::<Rational64>(&verdicts, &gold_ann, cat).unwrap();
    let conv = |v: &Option<Rational64>| v.map(|r| (*r.numer(), *r.denom()));
    let lib: Vec<[Option<(i64, i64)>; 4]> = m
        .per_rule
        .iter()
        .map(|r| {
            [
                conv(&r.precision),
                conv(&r.recall),
                conv(&r.f_score),
                conv(&r.accuracy),
            ]
        })
        .collect();
    let brute = brute_force(gold, pred);
    // A rule counts towards the macro means when gold or prediction uses it.
    let active: Vec<bool> = (0..brute.len())
        .map(|r| gold.iter().chain(pred).any(|row| row[r]))
        .collect();
    let macro_of = |metric: usize| {
        let vals: Vec<(i64, i64)> = brute
            .iter()
            .zip(&active)
            .filter(|(_, &a)| a)
            .filter_map(|(m, _)| m[metric])
            .collect();
        (!vals.is_empty()).then(|| {
            let (n, d) = vals.iter().fold((0i64, 1i64), |(n, d), &(a, b)| {
                reduce_i(n * b + a * d, d * b)
            });
            reduce_i(n, d * vals.len() as i64)
        })
    };
    let lib_macro = [
        conv(&m.macro_precision),
        conv(&m.macro_recall),
        conv(&m.macro_f),
        conv(&m.mean_accuracy),
    ];
    lib == brute && lib_macro == [macro_of(0), macro_of(1), macro_of(2), macro_of(3)]
}

fn grid(bits: u32, n: usize, k: usize) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| (0..k).map(|r| bits >> (i * k + r) & 1 == 1).collect())
        .collect()
}

fn criterion_4() -> Outcome {
    let mut checked = 0u64;
    for k in 1..=3usize {
        let cat = RuleCatalog::new(
            "grid",
            (1..=k as RuleId)
                .map(|i| ComplianceRule::new(i, format!("r{i}")))
                .collect(),
        )
        .unwrap();
        for n in 1..=5usize {
            let cells = n * k;
            if cells <= 8 {
                for g in 0..1u32 << cells {
                    for p in 0..1u32 << cells {
                        let (gg, pp) = (grid(g, n, k), grid(p, n, k));
                        ensure(grids_agree(&gg, &pp, &cat), || {
                            format!("gold {gg:?} pred {pp:?}")
                        })?;
                        checked += 1;
                    }
                }
            } else {
                // Every gold grid, each against a few prediction grids.
                let all = (1u32 << cells) - 1;
                for g in 0..1u32 << cells {
                    for p in [0, all, g, !g & all, g.rotate_left(5) & all] {
                        let (gg, pp) = (grid(g, n, k), grid(p, n, k));
                        ensure(grids_agree(&gg, &pp, &cat), || {
                            format!("gold {gg:?} pred {pp:?}")
                        })?;
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{checked} label-grid pairs up to 5 passages x 3 rules agree exactly"
    ))
}

fn criterion_5() -> Outcome {
    let cfg = ChunkConfig::default();
    let dir = fixture("corpus");
    let mut paths: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    ensure(paths.len() >= 20, || {
        format!("only {} documents", paths.len())
    })?;
    let non_ws = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
    for path in &paths {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let doc = RegulatoryArtifact::from_file(path).map_err(|e| e.to_string())?;
        ensure(doc.raw_text().as_bytes() == fs::read(path).unwrap(), || {
            format!("{name}: raw text altered")
        })?;
        let c = chunk_document(&doc, &cfg).map_err(|e| e.to_string())?;
        ensure(c == chunk_document(&doc, &cfg).unwrap(), || {
            format!("{name}: not deterministic")
        })?;
        for g in [Granularity::Paragraph, Granularity::Sentence] {
            let stream = c.passages(g);
            for (i, p) in stream.iter().enumerate() {
                let raw = doc.raw_span(p.span);
                ensure(
                    doc.raw_text()[raw.start..raw.end].replace("\r\n", "\n") == p.text,
                    || format!("{name}: {} does not round-trip", p.passage_id),
                )?;
                ensure(p.ordinal == i, || format!("{name}: ordinal"))?;
            }
            ensure(
                stream.windows(2).all(|w| w[0].span.end <= w[1].span.start),
                || format!("{name}: overlap"),
            )?;
        }
        let covered: String = c.paragraphs.iter().map(|p| non_ws(&p.text)).collect();
        ensure(covered == non_ws(doc.text()), || {
            format!("{name}: paragraphs do not partition the text")
        })?;
        for s in &c.sentences {
            let parents: Vec<_> = c
                .paragraphs
                .iter()
                .filter(|p| p.span.contains(&s.span))
                .collect();
            ensure(
                parents.len() == 1
                    && s.parent_paragraph_id.as_deref() == Some(parents[0].passage_id.as_str()),
                || format!("{name}: {} is not nested", s.passage_id),
            )?;
        }
    }
    let snippet = RegulatoryArtifact::from_file(fixture("samples/access_profiles.txt"))
        .map_err(|e| e.to_string())?;
    let sentences = chunk_document(&snippet, &cfg)
        .map_err(|e| e.to_string())?
        .sentences
        .len();
    ensure(sentences == 2, || {
        format!("access-profiles snippet gave {sentences} sentences")
    })?;
    Ok(format!(
        "{} documents hold all invariants; snippet -> 2 sentences",
        paths.len()
    ))
}

fn criterion_6() -> Outcome {
    let cat = dpa_catalog();
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let exclusive = |v: &Verdict| {
        !v.satisfied_rule_ids.contains(&SENTINEL_ID) || v.satisfied_rule_ids.len() == 1
    };
    runner
        .run(&any::<String>(), |raw| {
            let v = parse_response(&raw, &cat, "p");
            prop_assert!(exclusive(&v));
            prop_assert!(v
                .satisfied_rule_ids
                .iter()
                .all(|&id| id == SENTINEL_ID || cat.contains(id)));
            Ok(())
        })
        .map_err(|e| format!("random text: {e}"))?;
    let ids = prop_oneof![
        Just(BTreeSet::from([SENTINEL_ID])),
        prop::collection::btree_set(1..=46 as RuleId, 1..6),
    ];
    let clean = (ids, "[A-Za-z0-9 ,.;()'-]{0,80}");
    runner
        .run(&clean, |(ids, just)| {
            let just = just.trim().to_string();
            let text =
                Verdict::new("p", ids.clone(), just.clone(), ParseStatus::Clean).to_response_text();
            let v = parse_response(&text, &cat, "p");
            prop_assert_eq!(v.parse_status, ParseStatus::Clean);
            prop_assert_eq!(&v.satisfied_rule_ids, &ids);
            prop_assert_eq!(&v.justification, &just);
            prop_assert!(exclusive(&v));
            Ok(())
        })
        .map_err(|e| format!("clean grammar: {e}"))?;
    Ok("10000 random strings parsed, 10000 clean answers round-tripped".into())
}

fn criterion_7() -> Outcome {
    let cat = dpa_catalog();
    let ids: Vec<RuleId> = cat.ids().collect();
    ensure(ids == (1..=46).collect::<Vec<_>>(), || {
        format!("catalog ids {ids:?}")
    })?;
    let lines = render_rules(&cat).lines().count();
    ensure(lines == 47, || format!("{lines} prompt lines"))?;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let run = lexcheck(&[
            "check",
            "fixtures/samples/short_dpa.txt",
            "--catalog",
            "fixtures/gdpr_dpa_rules.catalog",
            "--provider",
            "mock",
            "--mock-fixture",
            "fixtures/mock/short_dpa.jsonl",
            "-o",
            path_str(d.path()),
            "--fixed-clock",
        ]);
        ensure(run.status.success(), || stderr(&run))?;
    }
    let name = "short_dpa.sentence.report.json";
    let (x, y) = (
        fs::read(a.path().join(name)).unwrap(),
        fs::read(b.path().join(name)).unwrap(),
    );
    ensure(x == y, || "machine reports differ between runs".into())?;
    Ok(format!(
        "two runs produced identical {}-byte reports; catalog ids 1..46, {lines} prompt lines",
        x.len()
    ))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = lexcheck(&[
        "evaluate",
        "--catalog",
        "fixtures/gdpr_dpa_rules.catalog",
        "--gold",
        "fixtures/baseline/gold.txt",
        "--predictions",
        "fixtures/baseline/predictions.txt",
        "-o",
        path_str(dir.path()),
    ]);
    ensure(run.status.success(), || stderr(&run))?;
    let m = read_json(&dir.path().join("external.metrics.json"));
    let active = m["active_rule_count"].as_u64().unwrap_or(0);
    ensure(active == 2, || format!("{active} active rules"))?;
    let macro_f = m["macro_f"].as_f64().unwrap_or(f64::NAN);
    let oracle = oracle_macro_f(
        &read_labels(&fixture("baseline/gold.txt")),
        &read_labels(&fixture("baseline/predictions.txt")),
    );
    ensure(oracle == (67, 100), || format!("oracle F {oracle:?}"))?;
    ensure((macro_f - 0.67).abs() <= 0.005, || {
        format!("macro F {macro_f}")
    })?;
    Ok(format!(
        "average F over 2 rules = {macro_f:.4} (oracle 67/100, baseline 0.67)"
    ))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        let start = std::time::Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({secs:.2}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({secs:.2}s) {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
