//! Self-attention within each modality followed by cross-attention in both
//! directions between residues and functional groups.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{invalid, ParamStore, Tape, Tensor, TensorError, Var};

const LN_EPS: f64 = 1e-5;
const MASKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScatConfig {
    pub heads: usize,
    pub ffn_mult: usize,
}

impl Default for ScatConfig {
    fn default() -> Self {
        ScatConfig { heads: 4, ffn_mult: 4 }
    }
}

/// One pre-norm transformer layer whose parameters live under `prefix`.
/// Layer norms carry no affine parameters.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub prefix: String,
    pub d: usize,
    pub heads: usize,
    pub ffn_mult: usize,
}

pub struct BlockOutput {
    pub out: Var,
    /// Per-head `Lq × Lkv` attention weights.
    pub weights: Vec<Var>,
}

impl AttentionBlock {
    pub fn new(prefix: impl Into<String>, d: usize, cfg: ScatConfig) -> Result<Self, TensorError> {
        if cfg.heads == 0 || d % cfg.heads != 0 {
            return Err(invalid(
                "attention",
                format!("width {d} is not divisible by {} heads", cfg.heads),
            ));
        }
        Ok(AttentionBlock {
            prefix: prefix.into(),
            d,
            heads: cfg.heads,
            ffn_mult: cfg.ffn_mult,
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.d;
        for p in ["q", "k", "v", "o"] {
            store.init_uniform(&self.name(&format!("{p}.w")), &[d, d], rng);
            store.init_const(&self.name(&format!("{p}.b")), &[d], 0.0);
        }
        let hidden = d * self.ffn_mult;
        store.init_uniform(&self.name("ffn1.w"), &[d, hidden], rng);
        store.init_const(&self.name("ffn1.b"), &[hidden], 0.0);
        store.init_uniform(&self.name("ffn2.w"), &[hidden, d], rng);
        store.init_const(&self.name("ffn2.b"), &[d], 0.0);
    }

    fn dense(&self, tape: &mut Tape, x: Var, part: &str) -> Result<Var, TensorError> {
        let w = tape.param(&self.name(&format!("{part}.w")))?;
        let b = tape.param(&self.name(&format!("{part}.b")))?;
        tape.linear(x, w, Some(b))
    }

    /// Multi-head attention of `q` over `kv` (both already normalized).
    /// `key_mask[j] = false` hides key `j`.
    fn attend(&self, tape: &mut Tape, q: Var, kv: Var, key_mask: Option<&[bool]>) -> Result<BlockOutput, TensorError> {
        let lkv = tape.shape(kv)[0];
        let qp = self.dense(tape, q, "q")?;
        let kp = self.dense(tape, kv, "k")?;
        let vp = self.dense(tape, kv, "v")?;
        let bias = match key_mask {
            Some(mask) => {
                if mask.len() != lkv {
                    return Err(invalid(
                        "attention",
                        format!("mask of length {} for {lkv} keys", mask.len()),
                    ));
                }
                if !mask.iter().any(|&m| m) {
                    return Err(invalid("attention", "every key is masked"));
                }
                let data = mask.iter().map(|&m| if m { 0.0 } else { MASKED_LOGIT }).collect();
                Some(tape.constant(Tensor::new(&[1, lkv], data)?))
            }
            None => None,
        };
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(qp, 1, h * dh, dh)?;
            let kh = tape.narrow(kp, 1, h * dh, dh)?;
            let vh = tape.narrow(vp, 1, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let logits = tape.matmul(qh, kt)?;
            let mut logits = tape.scale(logits, scale)?;
            if let Some(b) = bias {
                logits = tape.add(logits, b)?;
            }
            let a = tape.softmax(logits, 1)?;
            heads.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = tape.concat(&heads, 1)?;
        let out = self.dense(tape, cat, "o")?;
        Ok(BlockOutput { out, weights })
    }

    /// `x + Attn(LN(x), LN(kv))`, then `+ FFN(LN(·))`. With `kv = None` this
    /// is self-attention.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        kv: Option<Var>,
        key_mask: Option<&[bool]>,
    ) -> Result<BlockOutput, TensorError> {
        if tape.shape(x).len() != 2 || tape.shape(x)[1] != self.d {
            return Err(crate::tensor::mismatch("attention", tape.shape(x), &[0, self.d]));
        }
        let xn = tape.layer_norm(x, LN_EPS)?;
        let kvn = match kv {
            Some(kv) => {
                if tape.shape(kv).len() != 2 || tape.shape(kv)[1] != self.d {
                    return Err(crate::tensor::mismatch(
                        "cross_attention",
                        tape.shape(x),
                        tape.shape(kv),
                    ));
                }
                tape.layer_norm(kv, LN_EPS)?
            }
            None => xn,
        };
        let BlockOutput { out: att, weights } = self.attend(tape, xn, kvn, key_mask)?;
        let x1 = tape.add(x, att)?;
        let x1n = tape.layer_norm(x1, LN_EPS)?;
        let hidden = self.dense(tape, x1n, "ffn1")?;
        let hidden = tape.relu(hidden)?;
        let ff = self.dense(tape, hidden, "ffn2")?;
        let out = tape.add(x1, ff)?;
        Ok(BlockOutput { out, weights })
    }
}

/// The four attention layers: self-attention per modality, then each
/// modality attends to the other's self-attended output.
#[derive(Debug, Clone)]
pub struct Scat {
    pub self_p: AttentionBlock,
    pub self_l: AttentionBlock,
    pub cross_p: AttentionBlock,
    pub cross_l: AttentionBlock,
}

pub struct ScatOutput {
    pub hp: Var,
    pub hl: Var,
    /// Residue → group attention weights per head (`R × F`).
    pub cross_p_weights: Vec<Var>,
    /// Group → residue attention weights per head (`F × R`).
    pub cross_l_weights: Vec<Var>,
}

impl Scat {
    pub fn new(d: usize, cfg: ScatConfig) -> Result<Self, TensorError> {
        Ok(Scat {
            self_p: AttentionBlock::new("scat.self_p", d, cfg)?,
            self_l: AttentionBlock::new("scat.self_l", d, cfg)?,
            cross_p: AttentionBlock::new("scat.cross_p", d, cfg)?,
            cross_l: AttentionBlock::new("scat.cross_l", d, cfg)?,
        })
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for b in [&self.self_p, &self.self_l, &self.cross_p, &self.cross_l] {
            b.init_params(store, rng);
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        hp: Var,
        hl: Var,
        mask_p: Option<&[bool]>,
        mask_l: Option<&[bool]>,
    ) -> Result<ScatOutput, TensorError> {
        let hp1 = self.self_p.forward(tape, hp, None, mask_p)?.out;
        let hl1 = self.self_l.forward(tape, hl, None, mask_l)?.out;
        let p = self.cross_p.forward(tape, hp1, Some(hl1), mask_l)?;
        let l = self.cross_l.forward(tape, hl1, Some(hp1), mask_p)?;
        Ok(ScatOutput {
            hp: p.out,
            hl: l.out,
            cross_p_weights: p.weights,
            cross_l_weights: l.weights,
        })
    }
}
