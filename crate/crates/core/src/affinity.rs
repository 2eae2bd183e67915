//! Binding-affinity regressor on top of a frozen interaction model:
//! type-weighted edge strengths, bidirectional contact attention,
//! strength-weighted pooling and an MLP.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pairwise_unet::N_TYPES;
use crate::tensor::{invalid, mismatch, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityConfig {
    pub hidden: Vec<usize>,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig { hidden: vec![256, 64] }
    }
}

/// How the per-node strengths became pooling weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMode {
    /// `s / Σ s`, all strengths non-negative.
    Ratio,
    /// Softmax over strengths; used when any strength is negative.
    Softmax,
    /// Total strength is zero; uniform weights.
    Degenerate,
}

pub struct AffinityOutput {
    pub y_hat: Var,
    /// `1 × (2D + 7)` fused features `[pool_p ‖ s ‖ pool_l]`.
    pub h: Var,
    pub strength: Var,
    pub alpha_pl: Var,
    pub alpha_lp: Var,
    pub hp_enriched: Var,
    pub hl_enriched: Var,
    pub beta_p: Var,
    pub beta_l: Var,
    pub mode_p: PoolingMode,
    pub mode_l: PoolingMode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityHead {
    pub d: usize,
    pub cfg: AffinityConfig,
}

impl AffinityHead {
    pub const TYPE_WEIGHTS: &'static str = "affinity.w";

    pub fn feature_width(&self) -> usize {
        2 * self.d + N_TYPES
    }

    fn mlp_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_width()];
        w.extend(&self.cfg.hidden);
        w.push(1);
        w
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.init_const(Self::TYPE_WEIGHTS, &[N_TYPES], 1.0);
        for side in ["p", "l"] {
            store.init_uniform(&format!("affinity.proj_{side}.w"), &[self.d, self.d], rng);
            store.init_const(&format!("affinity.proj_{side}.b"), &[self.d], 0.0);
        }
        let widths = self.mlp_widths();
        for (i, pair) in widths.windows(2).enumerate() {
            store.init_uniform(&format!("affinity.mlp.{i}.w"), &[pair[0], pair[1]], rng);
            store.init_const(&format!("affinity.mlp.{i}.b"), &[pair[1]], 0.0);
        }
    }

    fn dense(tape: &mut Tape, x: Var, name: &str) -> Result<Var, TensorError> {
        let w = tape.param(&format!("{name}.w"))?;
        let b = tape.param(&format!("{name}.b"))?;
        tape.linear(x, w, Some(b))
    }

    /// `S[r,f] = Σ_k P[r,f,k] w_k`.
    pub fn edge_strength(tape: &mut Tape, p: Var, w: Var) -> Result<Var, TensorError> {
        let s = tape.shape(p);
        if s.len() != 3 || s[2] != N_TYPES || tape.shape(w) != [N_TYPES] {
            return Err(mismatch("edge_strength", s, tape.shape(w)));
        }
        let pw = tape.mul(p, w)?;
        tape.sum(pw, 2)
    }

    /// Pooling weights over one side's node strengths (`[n]`).
    pub fn pooling_weights(tape: &mut Tape, s: Var) -> Result<(Var, PoolingMode), TensorError> {
        let vals = tape.data(s).to_vec();
        let n = vals.len();
        if vals.iter().any(|&v| v < 0.0) {
            return Ok((tape.softmax(s, 0)?, PoolingMode::Softmax));
        }
        let total: f64 = vals.iter().sum();
        if total == 0.0 {
            let u = tape.constant(Tensor::full(&[n], 1.0 / n as f64));
            return Ok((u, PoolingMode::Degenerate));
        }
        let t = tape.sum_all(s)?;
        Ok((tape.div(s, t)?, PoolingMode::Ratio))
    }

    /// `p: [R, F, 7]`, `hp: [R, D]`, `hl: [F, D]`.
    pub fn forward(&self, tape: &mut Tape, p: Var, hp: Var, hl: Var) -> Result<AffinityOutput, TensorError> {
        let (sp, sl, spp) = (tape.shape(hp).to_vec(), tape.shape(hl).to_vec(), tape.shape(p).to_vec());
        if sp.len() != 2 || sl.len() != 2 || sp[1] != self.d || sl[1] != self.d {
            return Err(mismatch("affinity", &sp, &sl));
        }
        if spp != [sp[0], sl[0], N_TYPES] {
            return Err(mismatch("affinity", &spp, &[sp[0], sl[0], N_TYPES]));
        }
        let (r, f) = (sp[0], sl[0]);
        if r == 0 || f == 0 {
            return Err(invalid("affinity", "empty interaction map"));
        }
        let w = tape.param(Self::TYPE_WEIGHTS)?;
        let strength = Self::edge_strength(tape, p, w)?;

        let alpha_pl = tape.softmax(strength, 1)?;
        let alpha_lp = tape.softmax(strength, 0)?;

        let ctx_p = tape.matmul(alpha_pl, hl)?;
        let proj_p = Self::dense(tape, ctx_p, "affinity.proj_p")?;
        let hp_enriched = tape.add(hp, proj_p)?;
        let alpha_lp_t = tape.transpose(alpha_lp)?;
        let ctx_l = tape.matmul(alpha_lp_t, hp)?;
        let proj_l = Self::dense(tape, ctx_l, "affinity.proj_l")?;
        let hl_enriched = tape.add(hl, proj_l)?;

        let s_p = tape.sum(strength, 1)?;
        let s_l = tape.sum(strength, 0)?;
        let (beta_p, mode_p) = Self::pooling_weights(tape, s_p)?;
        let (beta_l, mode_l) = Self::pooling_weights(tape, s_l)?;
        let bp = tape.reshape(beta_p, &[1, r])?;
        let pool_p = tape.matmul(bp, hp_enriched)?;
        let bl = tape.reshape(beta_l, &[1, f])?;
        let pool_l = tape.matmul(bl, hl_enriched)?;

        let totals = tape.sum(p, 0)?;
        let totals = tape.sum(totals, 0)?;
        let s_types = tape.mul(totals, w)?;
        let s_types = tape.reshape(s_types, &[1, N_TYPES])?;

        let h = tape.concat(&[pool_p, s_types, pool_l], 1)?;
        let n_layers = self.mlp_widths().len() - 1;
        let mut x = h;
        for i in 0..n_layers {
            x = Self::dense(tape, x, &format!("affinity.mlp.{i}"))?;
            if i + 1 < n_layers {
                x = tape.relu(x)?;
            }
        }
        let y_hat = tape.reshape(x, &[1])?;
        Ok(AffinityOutput {
            y_hat,
            h,
            strength,
            alpha_pl,
            alpha_lp,
            hp_enriched,
            hl_enriched,
            beta_p,
            beta_l,
            mode_p,
            mode_l,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(d: usize) -> (AffinityHead, ParamStore) {
        let h = AffinityHead {
            d,
            cfg: AffinityConfig { hidden: vec![6, 4] },
        };
        let mut store = ParamStore::default();
        h.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
        (h, store)
    }

    fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn strength_is_weighted_type_sum() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::full(&[2, 3, 7], 0.1));
        let w = tape.constant(Tensor::full(&[7], 1.0));
        let s = AffinityHead::edge_strength(&mut tape, p, w).unwrap();
        for v in tape.data(s) {
            assert!((v - 0.7).abs() < 1e-12);
        }
        let pr = tape.constant(random(&[2, 3, 7], 1, 0.0, 1.0));
        let mut one_hot = vec![0.0; 7];
        one_hot[4] = 1.0;
        let w4 = tape.constant(Tensor::new(&[7], one_hot).unwrap());
        let s4 = AffinityHead::edge_strength(&mut tape, pr, w4).unwrap();
        for r in 0..2 {
            for f in 0..3 {
                assert_eq!(tape.value(s4).at(&[r, f]), tape.value(pr).at(&[r, f, 4]));
            }
        }
    }

    #[test]
    fn zero_map_uses_uniform_pooling() {
        let (h, store) = head(4);
        let mut tape = Tape::with_params(&store);
        let p = tape.constant(Tensor::zeros(&[3, 4, 7]));
        let hp = tape.constant(random(&[3, 4], 2, -1.0, 1.0));
        let hl = tape.constant(random(&[4, 4], 3, -1.0, 1.0));
        let out = h.forward(&mut tape, p, hp, hl).unwrap();
        assert_eq!(out.mode_p, PoolingMode::Degenerate);
        assert_eq!(out.mode_l, PoolingMode::Degenerate);
        for r in 0..3 {
            for v in tape.value(out.alpha_pl).row(r) {
                assert_eq!(*v, 0.25);
            }
        }
        let hv = tape.data(out.h);
        assert!(hv[4..11].iter().all(|&v| v == 0.0));
        assert!(tape.data(out.y_hat)[0].is_finite());
    }

    #[test]
    fn single_pair_pools_enriched_rows() {
        let (h, store) = head(3);
        let mut tape = Tape::with_params(&store);
        let p = tape.constant(random(&[1, 1, 7], 4, 0.0, 1.0));
        let hp = tape.constant(random(&[1, 3], 5, -1.0, 1.0));
        let hl = tape.constant(random(&[1, 3], 6, -1.0, 1.0));
        let out = h.forward(&mut tape, p, hp, hl).unwrap();
        assert_eq!(tape.data(out.beta_p), &[1.0]);
        assert_eq!(tape.data(out.beta_l), &[1.0]);
        let hv = tape.data(out.h);
        assert_eq!(&hv[..3], tape.data(out.hp_enriched));
        assert_eq!(&hv[10..], tape.data(out.hl_enriched));
    }

    #[test]
    fn zero_projection_is_identity_and_zero_mlp_is_zero() {
        let (h, mut store) = head(3);
        for side in ["p", "l"] {
            store.insert(format!("affinity.proj_{side}.w"), Tensor::zeros(&[3, 3]));
        }
        for (name, t) in store.clone().iter() {
            if name.starts_with("affinity.mlp") {
                store.insert(name.clone(), Tensor::zeros(t.shape()));
            }
        }
        let mut tape = Tape::with_params(&store);
        let p = tape.constant(random(&[2, 2, 7], 7, 0.0, 1.0));
        let hp = tape.constant(random(&[2, 3], 8, -1.0, 1.0));
        let hl = tape.constant(random(&[2, 3], 9, -1.0, 1.0));
        let out = h.forward(&mut tape, p, hp, hl).unwrap();
        assert_eq!(tape.data(out.hp_enriched), tape.data(hp));
        assert_eq!(tape.data(out.hl_enriched), tape.data(hl));
        assert_eq!(tape.data(out.y_hat), &[0.0]);
    }

    #[test]
    fn negative_strengths_switch_to_softmax() {
        let (h, mut store) = head(2);
        store.insert(AffinityHead::TYPE_WEIGHTS, Tensor::full(&[7], -1.0));
        let mut tape = Tape::with_params(&store);
        let p = tape.constant(random(&[3, 2, 7], 10, 0.0, 1.0));
        let hp = tape.constant(random(&[3, 2], 11, -1.0, 1.0));
        let hl = tape.constant(random(&[2, 2], 12, -1.0, 1.0));
        let out = h.forward(&mut tape, p, hp, hl).unwrap();
        assert_eq!(out.mode_p, PoolingMode::Softmax);
        let s: f64 = tape.data(out.beta_p).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(tape.data(out.beta_p).iter().all(|&b| b >= 0.0));
    }
}
