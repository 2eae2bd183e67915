//! Training objectives: focal loss on interaction maps; squared error plus
//! a contrastive alignment term and a uniformity regularizer for affinity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const FOCAL_EPS: f64 = 1e-7;
/// Rows of a uniformity input must have unit norm within this tolerance.
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("contrastive loss needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("row {row} has norm {norm}, expected 1")]
    NotNormalized { row: usize, norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            alpha: 0.85,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            beta: 2.0,
            lambda: 0.1,
            tau: 0.1,
        }
    }
}

/// Mean of `-α_t (1-p_t)^γ ln p_t` over every entry, with `p` clamped to
/// `[ε, 1-ε]`. `α` weights positives and `1-α` negatives.
pub fn focal_loss(tape: &mut Tape, p: Var, y: &[u8], cfg: FocalConfig) -> Result<Var, LossError> {
    let shape = tape.shape(p).to_vec();
    if y.len() != tape.value(p).numel() {
        return Err(LossError::LengthMismatch(tape.value(p).numel(), y.len()));
    }
    let yf: Vec<f64> = y.iter().map(|&v| (v != 0) as u8 as f64).collect();
    let sign: Vec<f64> = yf.iter().map(|&v| 2.0 * v - 1.0).collect();
    let offset: Vec<f64> = yf.iter().map(|&v| 1.0 - v).collect();
    let alpha: Vec<f64> = yf
        .iter()
        .map(|&v| if v > 0.0 { cfg.alpha } else { 1.0 - cfg.alpha })
        .collect();
    let pc = tape.clamp(p, FOCAL_EPS, 1.0 - FOCAL_EPS)?;
    // p_t = y·p + (1-y)·(1-p) = (2y-1)·p + (1-y)
    let sign = tape.constant(Tensor::new(&shape, sign)?);
    let offset = tape.constant(Tensor::new(&shape, offset)?);
    let pt = tape.mul(pc, sign)?;
    let pt = tape.add(pt, offset)?;
    let log_pt = tape.log(pt)?;
    let one_minus = tape.neg(pt)?;
    let one_minus = tape.add_scalar(one_minus, 1.0)?;
    let modulating = if cfg.gamma == 0.0 {
        None
    } else {
        Some(tape.powf(one_minus, cfg.gamma)?)
    };
    let alpha = tape.constant(Tensor::new(&shape, alpha)?);
    let mut term = tape.mul(alpha, log_pt)?;
    if let Some(m) = modulating {
        term = tape.mul(term, m)?;
    }
    let mean = tape.mean_all(term)?;
    Ok(tape.neg(mean)?)
}

/// Plain-value focal loss, for evaluation without a tape.
pub fn focal_value(p: &[f64], y: &[u8], cfg: FocalConfig) -> Result<f64, LossError> {
    if p.len() != y.len() {
        return Err(LossError::LengthMismatch(p.len(), y.len()));
    }
    let mut tape = Tape::new();
    let pv = tape.constant(Tensor::new(&[p.len()], p.to_vec())?);
    let l = focal_loss(&mut tape, pv, y, cfg)?;
    Ok(tape.data(l)[0])
}

pub fn mse(tape: &mut Tape, pred: Var, truth: &[f64]) -> Result<Var, LossError> {
    let n = tape.value(pred).numel();
    if n != truth.len() || n == 0 {
        return Err(LossError::LengthMismatch(n, truth.len()));
    }
    let t = tape.constant(Tensor::new(tape.shape(pred), truth.to_vec())?);
    let d = tape.sub(pred, t)?;
    let sq = tape.square(d)?;
    Ok(tape.mean_all(sq)?)
}

/// For each sample, the other sample with the closest target (lowest index
/// on ties).
pub fn positive_pairs(y: &[f64]) -> Vec<usize> {
    (0..y.len())
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (j, &yj) in y.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = (y[i] - yj).abs();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Contrastive loss over a `B × W` batch. Rows are projected onto the unit
/// sphere; each row's positive is its nearest neighbor in target value, and
/// the softmax denominator runs over every row including itself.
pub fn info_nce(tape: &mut Tape, h: Var, y: &[f64], tau: f64) -> Result<Var, LossError> {
    let b = tape.shape(h)[0];
    if b < 2 {
        return Err(LossError::BatchTooSmall(b));
    }
    if y.len() != b {
        return Err(LossError::LengthMismatch(b, y.len()));
    }
    let z = tape.l2_normalize(h, 1, 1e-12)?;
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let logits = tape.scale(sim, 1.0 / tau)?;
    let logp = tape.log_softmax(logits, 1)?;
    let mut pick = vec![0.0; b * b];
    for (i, p) in positive_pairs(y).into_iter().enumerate() {
        pick[i * b + p] = 1.0;
    }
    let pick = tape.constant(Tensor::new(&[b, b], pick)?);
    let picked = tape.mul(logp, pick)?;
    let total = tape.sum_all(picked)?;
    Ok(tape.scale(total, -1.0 / b as f64)?)
}

/// `log mean_{i,j} exp(-2‖z_i - z_j‖²)` over all ordered pairs, `i = j`
/// included. Rows must already be unit-norm.
pub fn uniformity(tape: &mut Tape, z: Var) -> Result<Var, LossError> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 {
        return Err(TensorError::Invalid {
            op: "uniformity",
            msg: format!("expected B x W, got {shape:?}"),
        }
        .into());
    }
    let (b, w) = (shape[0], shape[1]);
    for r in 0..b {
        let norm = tape.value(z).row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(LossError::NotNormalized { row: r, norm });
        }
    }
    let zi = tape.reshape(z, &[b, 1, w])?;
    let zj = tape.reshape(z, &[1, b, w])?;
    let diff = tape.sub(zi, zj)?;
    let sq = tape.square(diff)?;
    let d2 = tape.sum(sq, 2)?;
    let e = tape.scale(d2, -2.0)?;
    let e = tape.exp(e)?;
    let m = tape.mean_all(e)?;
    Ok(tape.log(m)?)
}

/// `mse + β (nce + λ unif)`.
pub fn total_affinity_loss(
    tape: &mut Tape,
    mse: Var,
    nce: Var,
    unif: Var,
    cfg: LatentConfig,
) -> Result<Var, LossError> {
    let u = tape.scale(unif, cfg.lambda)?;
    let latent = tape.add(nce, u)?;
    let latent = tape.scale(latent, cfg.beta)?;
    Ok(tape.add(mse, latent)?)
}
