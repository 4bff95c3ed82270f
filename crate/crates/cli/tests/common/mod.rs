#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

/// Runs the binary from the workspace root so fixture paths stay relative
/// (and therefore identical in every report).
pub fn lexcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lexcheck"))
        .args(args)
        .current_dir(workspace())
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display())))
        .unwrap()
}

/// `passage_id,id;id` lines; `99` and the empty set are the same thing.
pub fn read_labels(p: &Path) -> BTreeMap<String, BTreeSet<u32>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (pid, ids) = l.split_once(',').unwrap();
            let set = ids
                .split(';')
                .map(|i| i.trim().parse::<u32>().unwrap())
                .filter(|&i| i != 99)
                .collect();
            (pid.to_string(), set)
        })
        .collect()
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced fraction `(numerator, denominator)`.
pub fn reduce(n: u64, d: u64) -> (u64, u64) {
    let g = gcd(n, d).max(1);
    (n / g, d / g)
}

/// Mean per-rule accuracy over rules that appear in gold or predictions,
/// by counting cells directly. Exact.
pub fn oracle_mean_accuracy(
    gold: &BTreeMap<String, BTreeSet<u32>>,
    pred: &BTreeMap<String, BTreeSet<u32>>,
) -> (u64, u64) {
    let rules: BTreeSet<u32> = gold
        .values()
        .chain(pred.values())
        .flatten()
        .copied()
        .collect();
    let n = gold.len() as u64;
    let empty = BTreeSet::new();
    let correct_total: u64 = rules
        .iter()
        .map(|r| {
            gold.iter()
                .filter(|(pid, g)| g.contains(r) == pred.get(*pid).unwrap_or(&empty).contains(r))
                .count() as u64
        })
        .sum();
    reduce(correct_total, n * rules.len() as u64)
}

/// Mean per-rule F over the same rules, F = 2tp / (2tp + fp + fn).
pub fn oracle_macro_f(
    gold: &BTreeMap<String, BTreeSet<u32>>,
    pred: &BTreeMap<String, BTreeSet<u32>>,
) -> (u64, u64) {
    let rules: BTreeSet<u32> = gold
        .values()
        .chain(pred.values())
        .flatten()
        .copied()
        .collect();
    let empty = BTreeSet::new();
    let (mut num, mut den) = (0u64, 1u64);
    for r in &rules {
        let (mut tp, mut wrong) = (0u64, 0u64);
        for (pid, g) in gold {
            match (g.contains(r), pred.get(pid).unwrap_or(&empty).contains(r)) {
                (true, true) => tp += 1,
                (false, false) => {}
                _ => wrong += 1,
            }
        }
        let (fnum, fden) = (2 * tp, 2 * tp + wrong);
        (num, den) = reduce(num * fden + fnum * den, den * fden);
    }
    reduce(num, den * rules.len() as u64)
}
