//! Residue embeddings: the LNKE file format for precomputed language-model
//! outputs, FASTA input, and a small trainable fallback encoder.

use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{ParamStore, Tape, Tensor, TensorError, Var};

/// The 20 standard residues; index 20 is 'X'.
pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";
pub const ALPHABET_SIZE: usize = 21;
/// Residue inserted between chains of a multi-chain record.
pub const CHAIN_SEPARATOR: char = 'X';
/// Width of the language-model embeddings the file format is built around.
pub const DEFAULT_FILE_DIM: usize = 960;
pub const DEFAULT_FALLBACK_DIM: usize = 64;
/// Mixer kernel width of the fallback encoder.
pub const MIXER_WIDTH: usize = 5;

const LNKE_MAGIC: &[u8; 4] = b"LNKE";
const LNKE_VERSION: u32 = 1;
const LNKE_HEADER: usize = 4 + 4 + 32 + 4 + 4;

#[derive(Debug, Error)]
pub enum ProteinError {
    #[error("invalid residue '{ch}' at position {pos} of '{id}'")]
    Alphabet { id: String, pos: usize, ch: char },
    #[error("empty sequence '{0}'")]
    Empty(String),
    #[error("embedding file format error: {0}")]
    Format(String),
    #[error("embedding sequence hash {found} does not match expected {expected}")]
    SequenceMismatch { expected: String, found: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProteinSequence {
    pub id: String,
    residues: String,
}

impl ProteinSequence {
    /// Validate and upper-case a residue string.
    pub fn new(id: impl Into<String>, residues: &str) -> Result<Self, ProteinError> {
        let id = id.into();
        let residues = residues.trim().to_ascii_uppercase();
        if residues.is_empty() {
            return Err(ProteinError::Empty(id));
        }
        if let Some((pos, ch)) = residues
            .chars()
            .enumerate()
            .find(|&(_, c)| c != CHAIN_SEPARATOR && !AMINO_ACIDS.contains(c))
        {
            return Err(ProteinError::Alphabet { id, pos, ch });
        }
        Ok(ProteinSequence { id, residues })
    }

    pub fn residues(&self) -> &str {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Row indices into the 21-row embedding table.
    pub fn tokens(&self) -> Vec<usize> {
        self.residues
            .chars()
            .map(|c| AMINO_ACIDS.find(c).unwrap_or(ALPHABET_SIZE - 1))
            .collect()
    }

    pub fn hash(&self) -> [u8; 32] {
        sequence_hash(&self.residues)
    }
}

/// SHA-256 of the upper-case residue string.
pub fn sequence_hash(residues: &str) -> [u8; 32] {
    Sha256::digest(residues.trim().to_ascii_uppercase().as_bytes()).into()
}

/// Parse FASTA text. Within a record, chains written as `A:B` or `A/B` are
/// joined with [`CHAIN_SEPARATOR`].
pub fn parse_fasta(text: &str) -> Result<Vec<ProteinSequence>, ProteinError> {
    let mut out = Vec::new();
    let mut current: Option<(String, String)> = None;
    let flush = |cur: Option<(String, String)>, out: &mut Vec<ProteinSequence>| -> Result<(), ProteinError> {
        if let Some((id, seq)) = cur {
            let joined: String = seq
                .chars()
                .map(|c| if c == ':' || c == '/' { CHAIN_SEPARATOR } else { c })
                .collect();
            out.push(ProteinSequence::new(id, &joined)?);
        }
        Ok(())
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            flush(current.take(), &mut out)?;
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            current = Some((id, String::new()));
        } else {
            match &mut current {
                Some((_, seq)) => seq.push_str(line),
                None => return Err(ProteinError::Format("sequence data before the first '>' header".into())),
            }
        }
    }
    flush(current, &mut out)?;
    Ok(out)
}

pub fn read_fasta(path: &Path) -> Result<Vec<ProteinSequence>, ProteinError> {
    parse_fasta(&std::fs::read_to_string(path)?)
}

/// Decoded contents of an LNKE file.
#[derive(Debug, Clone, PartialEq)]
pub struct LnkeFile {
    pub sequence_hash: [u8; 32],
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl LnkeFile {
    pub fn new(residues: &str, rows: usize, dim: usize, values: Vec<f32>) -> Result<Self, ProteinError> {
        if values.len() != rows * dim {
            return Err(ProteinError::Format(format!(
                "{} values for a {rows}x{dim} matrix",
                values.len()
            )));
        }
        Ok(LnkeFile {
            sequence_hash: sequence_hash(residues),
            rows,
            dim,
            values,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(LNKE_HEADER + 4 * self.values.len());
        buf.extend_from_slice(LNKE_MAGIC);
        buf.extend_from_slice(&LNKE_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.sequence_hash);
        buf.extend_from_slice(&(self.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProteinError> {
        let fmt = |m: &str| ProteinError::Format(m.to_string());
        if bytes.len() < LNKE_HEADER {
            return Err(fmt("truncated header"));
        }
        if &bytes[..4] != LNKE_MAGIC {
            return Err(fmt("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != LNKE_VERSION {
            return Err(ProteinError::Format(format!("unsupported version {version}")));
        }
        let sequence_hash: [u8; 32] = bytes[8..40].try_into().unwrap();
        let rows = u32_at(40) as usize;
        let dim = u32_at(44) as usize;
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fmt("dimensions overflow"))?;
        let body = &bytes[LNKE_HEADER..];
        if body.len() != expected {
            return Err(ProteinError::Format(format!(
                "expected {expected} payload bytes for {rows}x{dim}, found {}",
                body.len()
            )));
        }
        let values: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fmt("non-finite embedding value"));
        }
        Ok(LnkeFile {
            sequence_hash,
            rows,
            dim,
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    File,
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidueEmbeddings {
    pub matrix: Tensor,
    pub source: EmbeddingSource,
}

impl ResidueEmbeddings {
    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }
}

/// Decode LNKE bytes and check them against the sequence they should embed.
pub fn embeddings_from_bytes(bytes: &[u8], expected: &ProteinSequence) -> Result<ResidueEmbeddings, ProteinError> {
    let file = LnkeFile::from_bytes(bytes)?;
    let want = expected.hash();
    if file.sequence_hash != want {
        return Err(ProteinError::SequenceMismatch {
            expected: crate::fgparser::hex(&want),
            found: crate::fgparser::hex(&file.sequence_hash),
        });
    }
    if file.rows != expected.len() {
        return Err(ProteinError::Format(format!(
            "file has {} rows but the sequence has {} residues",
            file.rows,
            expected.len()
        )));
    }
    let data = file.values.iter().map(|&v| v as f64).collect();
    Ok(ResidueEmbeddings {
        matrix: Tensor::new(&[file.rows, file.dim], data)?,
        source: EmbeddingSource::File,
    })
}

pub fn load_embeddings(path: &Path, expected: &ProteinSequence) -> Result<ResidueEmbeddings, ProteinError> {
    embeddings_from_bytes(&std::fs::read(path)?, expected)
}

pub fn write_embeddings(path: &Path, seq: &ProteinSequence, matrix: &Tensor) -> Result<(), ProteinError> {
    let (rows, dim) = match matrix.shape() {
        &[r, d] => (r, d),
        s => return Err(ProteinError::Format(format!("expected a rank-2 matrix, got {s:?}"))),
    };
    let values = matrix.data().iter().map(|&v| v as f32).collect();
    std::fs::write(path, LnkeFile::new(seq.residues(), rows, dim, values)?.to_bytes())?;
    Ok(())
}

/// Trainable stand-in for the language model: table lookup followed by a
/// residual width-5 mixer, `H = X + relu(Σ_o X[i+o] W_o + b)`. Offsets past
/// either end reuse the edge residue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackEmbedder {
    pub dim: usize,
}

impl FallbackEmbedder {
    pub const TABLE: &'static str = "protein.table";
    pub const MIX_W: &'static str = "protein.mix.w";
    pub const MIX_B: &'static str = "protein.mix.b";

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.init_uniform(Self::TABLE, &[ALPHABET_SIZE, self.dim], rng);
        store.init_uniform(Self::MIX_W, &[MIXER_WIDTH * self.dim, self.dim], rng);
        store.init_const(Self::MIX_B, &[self.dim], 0.0);
    }

    pub fn forward(&self, tape: &mut Tape, seq: &ProteinSequence) -> Result<Var, TensorError> {
        let tokens = seq.tokens();
        let r = tokens.len() as isize;
        let table = tape.param(Self::TABLE)?;
        let half = (MIXER_WIDTH / 2) as isize;
        let mut shifted = Vec::with_capacity(MIXER_WIDTH);
        for o in -half..=half {
            let idx: Vec<usize> = (0..r).map(|i| tokens[(i + o).clamp(0, r - 1) as usize]).collect();
            shifted.push(tape.gather_rows(table, &idx)?);
        }
        let centre = shifted[half as usize];
        let window = tape.concat(&shifted, 1)?;
        let w = tape.param(Self::MIX_W)?;
        let b = tape.param(Self::MIX_B)?;
        let mixed = tape.linear(window, w, Some(b))?;
        let mixed = tape.relu(mixed)?;
        tape.add(centre, mixed)
    }
}
