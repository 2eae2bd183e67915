//! On-disk exchange formats: per-complex prediction records and the
//! JSON-lines manifest that lists complexes for training and prediction.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fgparser::FgParser;
use crate::labels::{load_labels, LabelSet};
use crate::model::ProteinMode;
use crate::pairwise_unet::{InteractionTensor, N_TYPES, TYPE_ORDER};
use crate::protein::{load_embeddings, read_fasta, ProteinSequence};
use crate::training::Complex;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{id}: {msg}")]
    Complex { id: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> FormatError {
    FormatError::Io(format!("{}: {e}", path.display()))
}

/// One complex's interaction map, probabilities stored as base64 of
/// little-endian f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub protein_id: String,
    pub ligand_id: String,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "F")]
    pub f: usize,
    pub type_order: Vec<String>,
    pub probs: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affinity: Option<f64>,
}

impl PredictionRecord {
    pub fn new(protein_id: &str, ligand_id: &str, p: &InteractionTensor, affinity: Option<f64>) -> Self {
        let bytes: Vec<u8> = p.probs.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        PredictionRecord {
            protein_id: protein_id.to_string(),
            ligand_id: ligand_id.to_string(),
            r: p.r,
            f: p.f,
            type_order: TYPE_ORDER.iter().map(|s| s.to_string()).collect(),
            probs: STANDARD.encode(bytes),
            affinity,
        }
    }

    pub fn tensor(&self) -> Result<InteractionTensor, FormatError> {
        if self.type_order != TYPE_ORDER {
            return Err(FormatError::Invalid(format!(
                "{}/{}: unexpected type order {:?}",
                self.protein_id, self.ligand_id, self.type_order
            )));
        }
        let bytes = STANDARD
            .decode(&self.probs)
            .map_err(|e| FormatError::Invalid(format!("{}/{}: {e}", self.protein_id, self.ligand_id)))?;
        let n = self.r * self.f * N_TYPES;
        if bytes.len() != 4 * n {
            return Err(FormatError::Invalid(format!(
                "{}/{}: {} bytes for {}x{}x7",
                self.protein_id,
                self.ligand_id,
                bytes.len(),
                self.r,
                self.f
            )));
        }
        let probs = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        InteractionTensor::new(self.r, self.f, probs).map_err(|e| FormatError::Invalid(e.to_string()))
    }

    /// File name used inside a predictions directory.
    pub fn file_name(&self) -> String {
        format!("{}__{}.json", sanitize(&self.protein_id), sanitize(&self.ligand_id))
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn write_prediction(dir: &Path, rec: &PredictionRecord) -> Result<PathBuf, FormatError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(rec.file_name());
    let text = serde_json::to_string(rec).map_err(|e| FormatError::Invalid(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Every `*.json` prediction in `dir`, sorted by file name.
pub fn read_predictions(dir: &Path) -> Result<Vec<PredictionRecord>, FormatError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| FormatError::Parse {
                path: p.display().to_string(),
                line: 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    /// Complex id; defaults to `protein_id`.
    #[serde(default)]
    pub id: Option<String>,
    pub protein_id: String,
    /// Defaults to the complex id.
    #[serde(default)]
    pub ligand_id: Option<String>,
    #[serde(default)]
    pub fasta: Option<PathBuf>,
    /// Inline residues, as an alternative to `fasta`.
    #[serde(default)]
    pub sequence: Option<String>,
    #[serde(default)]
    pub embedding: Option<PathBuf>,
    pub smiles: String,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Binding affinity in pK units.
    #[serde(default)]
    pub affinity: Option<f64>,
}

impl ManifestRecord {
    pub fn complex_id(&self) -> &str {
        self.id.as_deref().unwrap_or(&self.protein_id)
    }

    pub fn ligand_id(&self) -> &str {
        self.ligand_id.as_deref().unwrap_or(self.complex_id())
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub base: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path, source: &str) -> Result<Self, FormatError> {
        let mut records = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let perr = |msg: String| FormatError::Parse {
                path: source.to_string(),
                line: i + 1,
                msg,
            };
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
            if !ids.insert(rec.complex_id().to_string()) {
                return Err(perr(format!("duplicate complex id '{}'", rec.complex_id())));
            }
            if rec.fasta.is_none() && rec.sequence.is_none() {
                return Err(perr(format!("'{}' needs either fasta or sequence", rec.complex_id())));
            }
            records.push(rec);
        }
        Ok(Manifest {
            base: base.to_path_buf(),
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &base, &path.display().to_string())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Check that every referenced file exists.
    pub fn check_files(&self) -> Result<(), FormatError> {
        for rec in &self.records {
            for p in [&rec.fasta, &rec.embedding, &rec.labels].into_iter().flatten() {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(FormatError::Complex {
                        id: rec.complex_id().to_string(),
                        msg: format!("missing file {}", full.display()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Build complexes in manifest order. Labels are matched on
    /// `(protein_id, ligand_id)` and checked against the parser's catalogue.
    pub fn complexes(&self, parser: &FgParser, mode: ProteinMode) -> Result<Vec<Complex>, FormatError> {
        self.check_files()?;
        let mut label_files: BTreeMap<PathBuf, BTreeMap<(String, String), LabelSet>> = BTreeMap::new();
        for rec in &self.records {
            if let Some(p) = &rec.labels {
                let full = self.resolve(p);
                if !label_files.contains_key(&full) {
                    let sets = load_labels(&full, Some(parser.catalogue_hash())).map_err(|e| FormatError::Complex {
                        id: rec.complex_id().to_string(),
                        msg: e.to_string(),
                    })?;
                    let map = sets
                        .into_iter()
                        .map(|s| ((s.protein_id.clone(), s.ligand_id.clone()), s))
                        .collect();
                    label_files.insert(full, map);
                }
            }
        }
        self.records
            .par_iter()
            .map(|rec| self.complex(rec, parser, mode, &label_files))
            .collect()
    }

    fn complex(
        &self,
        rec: &ManifestRecord,
        parser: &FgParser,
        mode: ProteinMode,
        label_files: &BTreeMap<PathBuf, BTreeMap<(String, String), LabelSet>>,
    ) -> Result<Complex, FormatError> {
        let id = rec.complex_id().to_string();
        let err = |msg: String| FormatError::Complex { id: id.clone(), msg };
        let protein = match (&rec.sequence, &rec.fasta) {
            (Some(s), _) => ProteinSequence::new(&rec.protein_id, s).map_err(|e| err(e.to_string()))?,
            (None, Some(p)) => {
                let recs = read_fasta(&self.resolve(p)).map_err(|e| err(e.to_string()))?;
                match recs.iter().position(|r| r.id == rec.protein_id) {
                    Some(i) => recs[i].clone(),
                    None if recs.len() == 1 => recs[0].clone(),
                    None => return Err(err(format!("no FASTA record named '{}'", rec.protein_id))),
                }
            }
            (None, None) => return Err(err("no sequence source".into())),
        };
        let embeddings = match mode {
            ProteinMode::Fallback => None,
            ProteinMode::File => {
                let p = rec
                    .embedding
                    .as_ref()
                    .ok_or_else(|| err("file mode needs an embedding path".into()))?;
                let e = load_embeddings(&self.resolve(p), &protein).map_err(|e| err(e.to_string()))?;
                Some(e.matrix)
            }
        };
        let ligand = parser.parse(&rec.smiles).map_err(|e| err(e.to_string()))?;
        let ligand_id = rec.ligand_id().to_string();
        let labels = match &rec.labels {
            Some(p) => {
                let set = label_files[&self.resolve(p)]
                    .get(&(rec.protein_id.clone(), ligand_id.clone()))
                    .ok_or_else(|| err(format!("no labels for {}/{}", rec.protein_id, ligand_id)))?;
                if set.r != protein.len() || set.f != ligand.groups.len() {
                    return Err(err(format!(
                        "labels are {}x{} but the complex is {}x{}",
                        set.r,
                        set.f,
                        protein.len(),
                        ligand.groups.len()
                    )));
                }
                Some(set.clone())
            }
            None => None,
        };
        Ok(Complex {
            id,
            protein,
            embeddings,
            ligand_id,
            ligand,
            labels,
            affinity: rec.affinity,
        })
    }
}
