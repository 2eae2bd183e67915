//! Browser demo backend. Every export takes and returns plain strings or
//! numbers so the same functions run under `cargo test` and in the page.

use linker_core::fgparser::FgParser;
use linker_core::labels::smooth;
use linker_core::metrics::{pr_curve, prevalence, roc_curve};
use linker_core::molgraph::BondOrder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn error(msg: impl std::fmt::Display) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

#[derive(Serialize)]
struct AtomView {
    index: usize,
    symbol: &'static str,
    aromatic: bool,
    hydrogens: u8,
    charge: i8,
}

#[derive(Serialize)]
struct GroupView {
    group_id: usize,
    pattern: &'static str,
    members: Vec<usize>,
    assigned: Vec<usize>,
}

/// Decomposes a SMILES string. Returns `{atoms, bonds, groups, matrix}` with
/// `matrix[atom][group]` in {0, 1}, or `{error}`.
pub fn parse_fg_json(smiles: &str) -> String {
    let parser = FgParser::default();
    let lig = match parser.parse(smiles.trim()) {
        Ok(l) => l,
        Err(e) => return error(e),
    };
    let atoms: Vec<AtomView> = lig
        .graph
        .atoms()
        .iter()
        .enumerate()
        .map(|(index, a)| AtomView {
            index,
            symbol: a.element.symbol(),
            aromatic: a.is_aromatic,
            hydrogens: a.hydrogens,
            charge: a.formal_charge,
        })
        .collect();
    let bonds: Vec<Value> = lig
        .graph
        .bonds()
        .iter()
        .map(|b| {
            let order = match b.order {
                BondOrder::Single => 1.0,
                BondOrder::Double => 2.0,
                BondOrder::Triple => 3.0,
                BondOrder::Aromatic => 1.5,
            };
            json!([b.a, b.b, order])
        })
        .collect();
    let groups: Vec<GroupView> = lig
        .groups
        .iter()
        .map(|g| GroupView {
            group_id: g.group_id,
            pattern: parser.pattern_name(g.pattern_id),
            members: g.member_atoms.clone(),
            assigned: g.assigned_atoms.clone(),
        })
        .collect();
    let m = &lig.matrix;
    let matrix: Vec<Vec<u8>> = (0..m.n_atoms())
        .map(|a| (0..m.n_groups()).map(|g| m.get(a, g) as u8).collect())
        .collect();
    json!({ "atoms": atoms, "bonds": bonds, "groups": groups, "matrix": matrix }).to_string()
}

/// Smoothed labels for a chain of `length` residues with interacting
/// residues at `anchors` (comma or whitespace separated, 0-based).
pub fn smooth_profile_json(anchors: &str, length: usize, sigma: f64) -> String {
    let mut hard = vec![0u8; length];
    for tok in anchors
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
    {
        match tok.parse::<usize>() {
            Ok(i) if i < length => hard[i] = 1,
            Ok(i) => return error(format!("anchor {i} outside 0..{length}")),
            Err(_) => return error(format!("bad anchor '{tok}'")),
        }
    }
    match smooth(&hard, sigma) {
        Ok(soft) => json!({ "hard": hard, "smooth": soft }).to_string(),
        Err(e) => error(e),
    }
}

/// PR and ROC curves for parallel `scores` / `labels` JSON arrays
/// (labels as 0/1 or booleans).
pub fn curves_json(scores: &str, labels: &str) -> String {
    let scores: Vec<f64> = match serde_json::from_str(scores) {
        Ok(s) => s,
        Err(e) => return error(format!("scores: {e}")),
    };
    let labels: Vec<bool> = match serde_json::from_str::<Vec<Value>>(labels) {
        Ok(v) => match v.iter().map(as_label).collect::<Option<Vec<bool>>>() {
            Some(l) => l,
            None => return error("labels must be 0/1 or booleans"),
        },
        Err(e) => return error(format!("labels: {e}")),
    };
    let (pr, roc, prev) = match (
        pr_curve(&scores, &labels),
        roc_curve(&scores, &labels),
        prevalence(&labels),
    ) {
        (Ok(p), Ok(r), Ok(v)) => (p, r, v),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return error(e),
    };
    json!({
        "n": scores.len(),
        "positives": labels.iter().filter(|&&l| l).count(),
        "prevalence": prev,
        "ap": pr.ap,
        "auc": roc.auc,
        "pr": pr.points,
        "roc": roc.points,
    })
    .to_string()
}

fn as_label(v: &Value) -> Option<bool> {
    match v {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_u64() {
            Some(0) => Some(false),
            Some(1) => Some(true),
            _ => None,
        },
        _ => None,
    }
}

/// Labelled scores for the curve panel: positives drawn with probability
/// `prevalence`, scores logistic noise shifted by `separation` for positives.
pub fn synthetic_json(n: usize, prevalence: f64, separation: f64, seed: u64) -> String {
    if n == 0 || !(0.0..=1.0).contains(&prevalence) || !separation.is_finite() {
        return error("need n > 0, prevalence in [0, 1] and a finite separation");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let pos = rng.gen_bool(prevalence);
        let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
        let logit = (u / (1.0 - u)).ln() + if pos { separation } else { 0.0 };
        scores.push(1.0 / (1.0 + (-logit).exp()));
        labels.push(pos as u8);
    }
    json!({ "scores": scores, "labels": labels }).to_string()
}

#[wasm_bindgen]
pub fn parse_fg(smiles: &str) -> String {
    parse_fg_json(smiles)
}

#[wasm_bindgen]
pub fn smooth_profile(anchors: &str, length: usize, sigma: f64) -> String {
    smooth_profile_json(anchors, length, sigma)
}

#[wasm_bindgen]
pub fn curves(scores: &str, labels: &str) -> String {
    curves_json(scores, labels)
}

#[wasm_bindgen]
pub fn synthetic(n: usize, prevalence: f64, separation: f64, seed: u32) -> String {
    synthetic_json(n, prevalence, separation, seed as u64)
}
