//! The full interaction network (protein embedder, FINGER-ID, SCAT,
//! pairwise U-Net) plus the affinity head, with one shared parameter store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{AffinityConfig, AffinityHead};
use crate::fgparser::{FgParser, LigandGroups};
use crate::finger_id::{FingerId, FingerIdConfig};
use crate::pairwise_unet::{build_pairwise, InteractionTensor, PairwiseUnet, UnetConfig};
use crate::protein::{FallbackEmbedder, ProteinSequence, DEFAULT_FALLBACK_DIM};
use crate::scat::{Scat, ScatConfig};
use crate::tensor::{invalid, ParamStore, Tape, Tensor, TensorError, Var};

/// Parameter-name prefixes of the interaction backbone. Everything else in
/// the store belongs to the affinity head.
pub const BACKBONE_PREFIXES: [&str; 4] = ["protein.", "finger.", "scat.", "unet."];
pub const HEAD_PREFIX: &str = "affinity.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProteinMode {
    /// Trainable table plus local mixer.
    Fallback,
    /// Precomputed embeddings read from LNKE files; width must equal `d_model`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub protein: ProteinMode,
    /// Shared embedding width `D` of residues and groups.
    pub d_model: usize,
    pub finger: FingerIdConfig,
    pub scat: ScatConfig,
    pub unet: UnetConfig,
    pub affinity: AffinityConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            protein: ProteinMode::Fallback,
            d_model: DEFAULT_FALLBACK_DIM,
            finger: FingerIdConfig::default(),
            scat: ScatConfig::default(),
            unet: UnetConfig::default(),
            affinity: AffinityConfig::default(),
        }
    }
}

pub enum ProteinInput<'a> {
    Sequence(&'a ProteinSequence),
    /// `R × D` embeddings, already validated against their sequence.
    Embeddings(&'a Tensor),
}

pub struct ModelOutput {
    /// `R × F × 7` probabilities.
    pub p: Var,
    /// Residue and group embeddings before SCAT.
    pub hp: Var,
    pub hl: Var,
    /// After SCAT.
    pub hp_mixed: Var,
    pub hl_mixed: Var,
}

#[derive(Debug, Clone)]
pub struct InteractionModel {
    pub cfg: ModelConfig,
    pub finger: FingerId,
    pub scat: Scat,
    pub unet: PairwiseUnet,
    pub head: AffinityHead,
}

impl InteractionModel {
    pub fn new(cfg: ModelConfig, n_patterns: usize) -> Result<Self, TensorError> {
        if cfg.d_model == 0 {
            return Err(invalid("model", "d_model must be positive"));
        }
        let finger = FingerId {
            cfg: cfg.finger,
            d_model: cfg.d_model,
            n_patterns,
        };
        let scat = Scat::new(cfg.d_model, cfg.scat)?;
        let unet = PairwiseUnet {
            cfg: cfg.unet,
            in_channels: 2 * cfg.d_model,
        };
        let head = AffinityHead {
            d: cfg.d_model,
            cfg: cfg.affinity.clone(),
        };
        Ok(InteractionModel {
            cfg,
            finger,
            scat,
            unet,
            head,
        })
    }

    /// Model sized for the built-in pattern catalogue.
    pub fn with_default_catalogue(cfg: ModelConfig) -> Result<Self, TensorError> {
        Self::new(cfg, FgParser::default().n_patterns())
    }

    fn embedder(&self) -> FallbackEmbedder {
        FallbackEmbedder { dim: self.cfg.d_model }
    }

    pub fn init_backbone(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        if self.cfg.protein == ProteinMode::Fallback {
            self.embedder().init_params(store, rng);
        }
        self.finger.init_params(store, rng);
        self.scat.init_params(store, rng);
        self.unet.init_params(store, rng);
    }

    pub fn init_head(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.head.init_params(store, rng);
    }

    /// Fresh backbone and head parameters from one seed.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        self.init_backbone(&mut store, &mut rng);
        self.init_head(&mut store, &mut rng);
        store
    }

    pub fn embed_protein(&self, tape: &mut Tape, protein: ProteinInput) -> Result<Var, TensorError> {
        match (self.cfg.protein, protein) {
            (ProteinMode::Fallback, ProteinInput::Sequence(seq)) => self.embedder().forward(tape, seq),
            (ProteinMode::File, ProteinInput::Embeddings(t)) => {
                let s = t.shape();
                if s.len() != 2 || s[1] != self.cfg.d_model {
                    return Err(invalid(
                        "model",
                        format!("embedding shape {s:?} does not match d_model {}", self.cfg.d_model),
                    ));
                }
                Ok(tape.constant(t.clone()))
            }
            (ProteinMode::Fallback, _) => Err(invalid("model", "fallback mode needs a sequence")),
            (ProteinMode::File, _) => Err(invalid("model", "file mode needs precomputed embeddings")),
        }
    }

    /// Full interaction forward. `dropout` is `(rate, seed)` and only used
    /// during training; it masks the SCAT outputs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        protein: ProteinInput,
        ligand: &LigandGroups,
        dropout: Option<(f64, u64)>,
    ) -> Result<ModelOutput, TensorError> {
        let hp = self.embed_protein(tape, protein)?;
        let hl = self.finger.forward(tape, ligand)?.h_l;
        let mixed = self.scat.forward(tape, hp, hl, None, None)?;
        let (mut hp_mixed, mut hl_mixed) = (mixed.hp, mixed.hl);
        if let Some((rate, seed)) = dropout.filter(|&(rate, _)| rate > 0.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            hp_mixed = dropout_mask(tape, hp_mixed, rate, &mut rng)?;
            hl_mixed = dropout_mask(tape, hl_mixed, rate, &mut rng)?;
        }
        let z = build_pairwise(tape, hp_mixed, hl_mixed)?;
        let p = self.unet.forward(tape, z)?;
        Ok(ModelOutput {
            p,
            hp,
            hl,
            hp_mixed,
            hl_mixed,
        })
    }

    /// Inference-only prediction.
    pub fn predict(
        &self,
        params: &ParamStore,
        protein: ProteinInput,
        ligand: &LigandGroups,
    ) -> Result<InteractionTensor, TensorError> {
        let mut tape = Tape::inference(params);
        let out = self.forward(&mut tape, protein, ligand, None)?;
        let s = tape.shape(out.p).to_vec();
        InteractionTensor::new(s[0], s[1], tape.data(out.p).to_vec())
    }
}

/// Inverted dropout: zero each entry with probability `rate`, rescale the rest.
pub fn dropout_mask(tape: &mut Tape, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var, TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    let shape = tape.shape(x).to_vec();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..tape.value(x).numel())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(&shape, mask)?);
    tape.mul(x, mask)
}

pub fn is_backbone(name: &str) -> bool {
    BACKBONE_PREFIXES.iter().any(|p| name.starts_with(p))
}

/// Hash over every backbone parameter.
pub fn backbone_hash(store: &ParamStore) -> String {
    BACKBONE_PREFIXES
        .iter()
        .map(|p| store.content_hash(p))
        .collect::<Vec<_>>()
        .join(":")
}
