//! Residue × group pairwise features, a small 2-D U-Net over the (R, F)
//! grid, and the per-type sigmoid head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{invalid, ParamStore, Tape, TensorError, Var};

pub const N_TYPES: usize = 7;
pub const TYPE_ORDER: [&str; N_TYPES] = [
    "hydrogen_bond",
    "hydrophobic",
    "pi_stacking",
    "pi_cation",
    "salt_bridge",
    "water_bridge",
    "halogen_bond",
];

pub fn type_index(name: &str) -> Option<usize> {
    TYPE_ORDER.iter().position(|&t| t == name)
}

/// Dense `R × F × 7` probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTensor {
    pub r: usize,
    pub f: usize,
    pub probs: Vec<f64>,
}

impl InteractionTensor {
    pub fn new(r: usize, f: usize, probs: Vec<f64>) -> Result<Self, TensorError> {
        if probs.len() != r * f * N_TYPES {
            return Err(invalid(
                "InteractionTensor",
                format!("{} values for {r}x{f}x7", probs.len()),
            ));
        }
        Ok(InteractionTensor { r, f, probs })
    }

    pub fn get(&self, r: usize, f: usize, k: usize) -> f64 {
        self.probs[(r * self.f + f) * N_TYPES + k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub d_unet: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        UnetConfig {
            depth: 2,
            base_channels: 16,
            d_unet: 16,
        }
    }
}

/// `[R, F, 2D]` with residue features first and group features second.
pub fn build_pairwise(tape: &mut Tape, hp: Var, hl: Var) -> Result<Var, TensorError> {
    let (sp, sl) = (tape.shape(hp).to_vec(), tape.shape(hl).to_vec());
    if sp.len() != 2 || sl.len() != 2 || sp[1] != sl[1] {
        return Err(crate::tensor::mismatch("build_pairwise", &sp, &sl));
    }
    let (r, f, d) = (sp[0], sl[0], sp[1]);
    let p = tape.reshape(hp, &[r, 1, d])?;
    let p = tape.broadcast_to(p, &[r, f, d])?;
    let l = tape.reshape(hl, &[1, f, d])?;
    let l = tape.broadcast_to(l, &[r, f, d])?;
    tape.concat(&[p, l], 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairwiseUnet {
    pub cfg: UnetConfig,
    pub in_channels: usize,
}

impl PairwiseUnet {
    fn channels(&self, level: usize) -> usize {
        self.cfg.base_channels << level
    }

    /// Spatial sizes are padded up to a multiple of this.
    pub fn multiple(&self) -> usize {
        1 << self.cfg.depth
    }

    /// `(name, in, out, kernel)` for every convolution, in forward order.
    fn convs(&self) -> Vec<(String, usize, usize, usize)> {
        let mut v = Vec::new();
        let mut c_in = self.in_channels;
        for l in 0..self.cfg.depth {
            let c = self.channels(l);
            v.push((format!("unet.enc.{l}.0"), c_in, c, 3));
            v.push((format!("unet.enc.{l}.1"), c, c, 3));
            c_in = c;
        }
        let cb = self.channels(self.cfg.depth);
        v.push(("unet.mid.0".into(), c_in, cb, 3));
        v.push(("unet.mid.1".into(), cb, cb, 3));
        let mut c_up = cb;
        for l in (0..self.cfg.depth).rev() {
            let c = self.channels(l);
            let out = if l == 0 { self.cfg.d_unet } else { c };
            v.push((format!("unet.dec.{l}.0"), c_up + c, c, 3));
            v.push((format!("unet.dec.{l}.1"), c, out, 3));
            c_up = c;
        }
        v.push(("unet.head.0".into(), self.cfg.d_unet, self.cfg.d_unet, 1));
        v.push(("unet.head.1".into(), self.cfg.d_unet, N_TYPES, 1));
        v
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for (name, c_in, c_out, k) in self.convs() {
            store.init_uniform(&format!("{name}.w"), &[c_out, c_in, k, k], rng);
            store.init_const(&format!("{name}.b"), &[c_out], 0.0);
        }
    }

    fn conv(&self, tape: &mut Tape, x: Var, name: &str, relu: bool) -> Result<Var, TensorError> {
        let w = tape.param(&format!("{name}.w"))?;
        let b = tape.param(&format!("{name}.b"))?;
        let k = tape.shape(w)[2];
        let y = tape.conv2d(x, w, Some(b), 1, (k / 2, k / 2))?;
        if relu {
            tape.relu(y)
        } else {
            Ok(y)
        }
    }

    /// Encoder/decoder over a `[C, H, W]` grid whose sides divide by
    /// [`Self::multiple`]. Returns `[d_unet, H, W]`.
    pub fn unet(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        let m = self.multiple();
        let s = tape.shape(x).to_vec();
        if s.len() != 3 || s[1] % m != 0 || s[2] % m != 0 {
            return Err(invalid("unet", format!("input {s:?} does not tile by {m}")));
        }
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut h = x;
        for l in 0..self.cfg.depth {
            h = self.conv(tape, h, &format!("unet.enc.{l}.0"), true)?;
            h = self.conv(tape, h, &format!("unet.enc.{l}.1"), true)?;
            skips.push(h);
            h = tape.max_pool2d(h, 2)?;
        }
        h = self.conv(tape, h, "unet.mid.0", true)?;
        h = self.conv(tape, h, "unet.mid.1", true)?;
        for l in (0..self.cfg.depth).rev() {
            let up = tape.up_sample2d(h, 2)?;
            h = tape.concat(&[up, skips[l]], 0)?;
            h = self.conv(tape, h, &format!("unet.dec.{l}.0"), true)?;
            h = self.conv(tape, h, &format!("unet.dec.{l}.1"), true)?;
        }
        Ok(h)
    }

    /// Logits `[7, H, W]` from U-Net features.
    pub fn head_logits(&self, tape: &mut Tape, u: Var) -> Result<Var, TensorError> {
        let h = self.conv(tape, u, "unet.head.0", true)?;
        self.conv(tape, h, "unet.head.1", false)
    }

    /// Pairwise tensor `[R, F, 2D]` → probabilities `[R, F, 7]`, zero-padding
    /// the grid bottom/right by `extra` cells beyond the next multiple.
    pub fn forward_padded(&self, tape: &mut Tape, z: Var, extra: (usize, usize)) -> Result<Var, TensorError> {
        let s = tape.shape(z).to_vec();
        if s.len() != 3 || s[2] != self.in_channels {
            return Err(crate::tensor::mismatch("pairwise_unet", &s, &[0, 0, self.in_channels]));
        }
        let (r, f) = (s[0], s[1]);
        let m = self.multiple();
        let (rp, fp) = (r.div_ceil(m) * m + extra.0, f.div_ceil(m) * m + extra.1);
        if rp % m != 0 || fp % m != 0 {
            return Err(invalid(
                "pairwise_unet",
                format!("extra padding {extra:?} must divide by {m}"),
            ));
        }
        let x = tape.permute(z, &[2, 0, 1])?;
        let x = tape.pad2d(x, [0, rp - r, 0, fp - f])?;
        let u = self.unet(tape, x)?;
        let u = tape.narrow(u, 1, 0, r)?;
        let u = tape.narrow(u, 2, 0, f)?;
        let logits = self.head_logits(tape, u)?;
        let p = tape.sigmoid(logits)?;
        tape.permute(p, &[1, 2, 0])
    }

    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<Var, TensorError> {
        self.forward_padded(tape, z, (0, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(in_channels: usize) -> (PairwiseUnet, ParamStore) {
        let u = PairwiseUnet {
            cfg: UnetConfig {
                depth: 2,
                base_channels: 2,
                d_unet: 3,
            },
            in_channels,
        };
        let mut store = ParamStore::default();
        u.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1));
        (u, store)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn pairwise_layout() {
        let mut tape = Tape::new();
        let hp = tape.constant(random(&[3, 2], 1));
        let hl = tape.constant(random(&[2, 2], 2));
        let z = build_pairwise(&mut tape, hp, hl).unwrap();
        assert_eq!(tape.shape(z), &[3, 2, 4]);
        let zt = tape.value(z);
        for r in 0..3 {
            for f in 0..2 {
                for c in 0..2 {
                    assert_eq!(zt.at(&[r, f, c]), tape.value(hp).at(&[r, c]));
                    assert_eq!(zt.at(&[r, f, 2 + c]), tape.value(hl).at(&[f, c]));
                }
            }
        }
    }

    #[test]
    fn zero_input_and_biases_give_zero_features() {
        let (u, store) = small(4);
        let mut tape = Tape::with_params(&store);
        let x = tape.constant(Tensor::zeros(&[4, 8, 4]));
        let y = u.unet(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[3, 8, 4]);
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_logits_give_one_half() {
        let (u, mut store) = small(4);
        store.insert("unet.head.1.w", Tensor::zeros(&[N_TYPES, 3, 1, 1]));
        let mut tape = Tape::with_params(&store);
        let z = tape.constant(random(&[5, 3, 4], 3));
        let p = u.forward(&mut tape, z).unwrap();
        assert_eq!(tape.shape(p), &[5, 3, N_TYPES]);
        assert!(tape.data(p).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ragged_sizes_keep_shape_and_range() {
        let (u, store) = small(4);
        for (r, f) in [(1, 1), (4, 1), (7, 3), (9, 6)] {
            let mut tape = Tape::with_params(&store);
            let z = tape.constant(random(&[r, f, 4], (r * 31 + f) as u64));
            let p = u.forward(&mut tape, z).unwrap();
            assert_eq!(tape.shape(p), &[r, f, N_TYPES]);
            assert!(tape.data(p).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
