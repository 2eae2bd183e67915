//! Pooling predictions against labels for residue- and pair-level metrics.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::labels::{residue_hard, residue_scores, smooth, LabelSet};
use crate::pairwise_unet::{InteractionTensor, N_TYPES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// One sample per residue, micro-averaged over complexes.
    Residue,
    /// One sample per (residue, group) cell, scored by its strongest type.
    Pair,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Residue => "residue",
            Level::Pair => "pair",
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residue" => Ok(Level::Residue),
            "pair" => Ok(Level::Pair),
            _ => Err(format!("unknown level '{s}' (expected residue or pair)")),
        }
    }
}

/// Scores, hard labels and (residue level only) smoothed labels, pooled in
/// the order the complexes were given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pooled {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub soft: Option<Vec<f64>>,
    pub complexes: usize,
}

/// `max_k P[r,f,k]` for every cell, row-major.
pub fn pair_scores(p: &InteractionTensor) -> Vec<f64> {
    p.probs
        .chunks(N_TYPES)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Whether any type is set for each cell, row-major.
pub fn pair_hard(y: &LabelSet) -> Vec<bool> {
    y.dense().chunks(N_TYPES).map(|c| c.iter().any(|&v| v != 0)).collect()
}

/// Pools `(id, prediction, labels)` triples. Residue-level pooling also
/// smooths the hard labels with `sigma` for weighted precision.
pub fn pool(items: &[(String, &InteractionTensor, &LabelSet)], level: Level, sigma: f64) -> Result<Pooled, String> {
    let mut out = Pooled {
        soft: (level == Level::Residue).then(Vec::new),
        ..Pooled::default()
    };
    for (id, p, y) in items {
        if (p.r, p.f) != (y.r, y.f) {
            return Err(format!(
                "{id}: prediction is {}x{} but labels are {}x{}",
                p.r, p.f, y.r, y.f
            ));
        }
        match level {
            Level::Residue => {
                let hard = residue_hard(y);
                out.scores.extend(residue_scores(p));
                out.labels.extend(hard.iter().map(|&v| v == 1));
                let s = smooth(&hard, sigma).map_err(|e| e.to_string())?;
                out.soft.as_mut().expect("residue level keeps soft labels").extend(s);
            }
            Level::Pair => {
                out.scores.extend(pair_scores(p));
                out.labels.extend(pair_hard(y));
            }
        }
        out.complexes += 1;
    }
    Ok(out)
}

/// Pair up predictions and labels on `(protein_id, ligand_id)`. Returns the
/// matched triples and the keys of predictions without labels.
pub fn match_labels<'a>(
    preds: &'a [(String, String, InteractionTensor)],
    labels: &'a [LabelSet],
) -> (Vec<(String, &'a InteractionTensor, &'a LabelSet)>, Vec<String>) {
    let index: BTreeMap<(&str, &str), &LabelSet> = labels
        .iter()
        .map(|l| ((l.protein_id.as_str(), l.ligand_id.as_str()), l))
        .collect();
    let mut matched = Vec::new();
    let mut missing = Vec::new();
    for (prot, lig, p) in preds {
        let key = format!("{prot}/{lig}");
        match index.get(&(prot.as_str(), lig.as_str())) {
            Some(y) => matched.push((key, p, *y)),
            None => missing.push(key),
        }
    }
    (matched, missing)
}
