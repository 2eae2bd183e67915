//! Ground-truth interaction labels, residue-level reductions, and Gaussian
//! smoothing around labelled residues.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairwise_unet::{InteractionTensor, N_TYPES};

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{id}: triple [{r}, {f}, {k}] out of range for R={big_r}, F={big_f}, K=7")]
    IndexOutOfRange {
        id: String,
        r: usize,
        f: usize,
        k: usize,
        big_r: usize,
        big_f: usize,
    },
    #[error("{id}: catalogue hash {found} does not match parser build {expected}")]
    CatalogueMismatch {
        id: String,
        expected: String,
        found: String,
    },
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("io: {0}")]
    Io(String),
}

/// One line of a labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub protein_id: String,
    pub ligand_id: String,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "F")]
    pub f: usize,
    pub catalogue_hash: String,
    pub triples: Vec<[usize; 3]>,
}

/// Dense binary `R × F × 7` labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    pub protein_id: String,
    pub ligand_id: String,
    pub r: usize,
    pub f: usize,
    pub catalogue_hash: String,
    y: Vec<u8>,
}

impl LabelSet {
    /// Validate a record; `expected_hash` is the catalogue hash of the parser
    /// that will produce the F axis.
    pub fn from_record(rec: &LabelRecord, expected_hash: Option<&str>) -> Result<Self, LabelError> {
        let id = format!("{}/{}", rec.protein_id, rec.ligand_id);
        if let Some(expected) = expected_hash {
            if expected != rec.catalogue_hash {
                return Err(LabelError::CatalogueMismatch {
                    id,
                    expected: expected.to_string(),
                    found: rec.catalogue_hash.clone(),
                });
            }
        }
        let mut y = vec![0u8; rec.r * rec.f * N_TYPES];
        for &[r, f, k] in &rec.triples {
            if r >= rec.r || f >= rec.f || k >= N_TYPES {
                return Err(LabelError::IndexOutOfRange {
                    id,
                    r,
                    f,
                    k,
                    big_r: rec.r,
                    big_f: rec.f,
                });
            }
            y[(r * rec.f + f) * N_TYPES + k] = 1;
        }
        Ok(LabelSet {
            protein_id: rec.protein_id.clone(),
            ligand_id: rec.ligand_id.clone(),
            r: rec.r,
            f: rec.f,
            catalogue_hash: rec.catalogue_hash.clone(),
            y,
        })
    }

    pub fn from_dense(protein_id: &str, ligand_id: &str, r: usize, f: usize, catalogue_hash: &str, y: Vec<u8>) -> Self {
        assert_eq!(y.len(), r * f * N_TYPES);
        LabelSet {
            protein_id: protein_id.to_string(),
            ligand_id: ligand_id.to_string(),
            r,
            f,
            catalogue_hash: catalogue_hash.to_string(),
            y: y.into_iter().map(|v| (v != 0) as u8).collect(),
        }
    }

    pub fn get(&self, r: usize, f: usize, k: usize) -> bool {
        self.y[(r * self.f + f) * N_TYPES + k] != 0
    }

    pub fn dense(&self) -> &[u8] {
        &self.y
    }

    pub fn positives(&self) -> usize {
        self.y.iter().map(|&v| v as usize).sum()
    }

    /// Back to the sparse form, triples in row-major order.
    pub fn to_record(&self) -> LabelRecord {
        let triples = self
            .y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| [i / (self.f * N_TYPES), (i / N_TYPES) % self.f, i % N_TYPES])
            .collect();
        LabelRecord {
            protein_id: self.protein_id.clone(),
            ligand_id: self.ligand_id.clone(),
            r: self.r,
            f: self.f,
            catalogue_hash: self.catalogue_hash.clone(),
            triples,
        }
    }
}

pub fn parse_labels(text: &str, expected_hash: Option<&str>) -> Result<Vec<LabelSet>, LabelError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| LabelError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert((rec.protein_id.clone(), rec.ligand_id.clone())) {
            return Err(LabelError::Parse {
                line: i + 1,
                msg: format!("duplicate record for {}/{}", rec.protein_id, rec.ligand_id),
            });
        }
        out.push(LabelSet::from_record(&rec, expected_hash)?);
    }
    Ok(out)
}

pub fn load_labels(path: &Path, expected_hash: Option<&str>) -> Result<Vec<LabelSet>, LabelError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabelError::Io(format!("{}: {e}", path.display())))?;
    parse_labels(&text, expected_hash)
}

/// 1 where any group/type entry of the residue row is set.
pub fn residue_hard(y: &LabelSet) -> Vec<u8> {
    (0..y.r)
        .map(|r| y.y[r * y.f * N_TYPES..(r + 1) * y.f * N_TYPES].iter().any(|&v| v != 0) as u8)
        .collect()
}

/// `y[i] = max_c exp(-(i-c)² / 2σ²)` over anchors `c`; zero without anchors.
pub fn smooth(y_hard: &[u8], sigma: f64) -> Result<Vec<f64>, LabelError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(LabelError::InvalidSigma(sigma));
    }
    let anchors: Vec<usize> = y_hard
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect();
    let two_s2 = 2.0 * sigma * sigma;
    Ok((0..y_hard.len())
        .map(|i| {
            anchors
                .iter()
                .map(|&c| {
                    let d = i as f64 - c as f64;
                    (-(d * d) / two_s2).exp()
                })
                .fold(0.0, f64::max)
        })
        .collect())
}

/// `y[r] = max_{f,k} P[r,f,k]`.
pub fn residue_scores(p: &InteractionTensor) -> Vec<f64> {
    (0..p.r)
        .map(|r| {
            p.probs[r * p.f * N_TYPES..(r + 1) * p.f * N_TYPES]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `U[r,k] = max_f P[r,f,k]`.
pub fn residue_type_scores(p: &InteractionTensor) -> Vec<[f64; N_TYPES]> {
    (0..p.r)
        .map(|r| {
            let mut u = [f64::NEG_INFINITY; N_TYPES];
            for f in 0..p.f {
                for (k, slot) in u.iter_mut().enumerate() {
                    *slot = slot.max(p.get(r, f, k));
                }
            }
            u
        })
        .collect()
}
