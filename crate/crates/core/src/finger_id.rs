//! Functional-group embeddings from four scales: atom features through a
//! GCN, mean-pooled per group, a learned group-type table, a sinusoidal
//! position code over the group index, and a whole-molecule readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fgparser::{AtomGroupMatrix, LigandGroups};
use crate::molgraph::{atom_features, MolecularGraph, ATOM_FEATURES};
use crate::tensor::{ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FingerIdConfig {
    pub gcn_layers: usize,
    pub d_graph: usize,
    pub d_fg: usize,
    pub d_pos: usize,
}

impl Default for FingerIdConfig {
    fn default() -> Self {
        FingerIdConfig {
            gcn_layers: 2,
            d_graph: 64,
            d_fg: 16,
            d_pos: 16,
        }
    }
}

impl FingerIdConfig {
    pub fn d_concat(&self) -> usize {
        2 * self.d_graph + self.d_fg + self.d_pos
    }
}

/// Symmetric-normalized adjacency with self-loops, `D^-1/2 (A+I) D^-1/2`.
pub fn normalized_adjacency(g: &MolecularGraph) -> Tensor {
    let n = g.n_atoms();
    let deg: Vec<f64> = (0..n).map(|i| (g.neighbors(i).len() + 1) as f64).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0 / deg[i];
        for &(j, _) in g.neighbors(i) {
            a[i * n + j] = 1.0 / (deg[i] * deg[j]).sqrt();
        }
    }
    Tensor::new(&[n, n], a).expect("n*n entries")
}

pub fn feature_matrix(g: &MolecularGraph) -> Tensor {
    let rows: Vec<Vec<f64>> = atom_features(g).iter().map(|r| r.to_vec()).collect();
    Tensor::new(&[g.n_atoms(), ATOM_FEATURES], rows.concat()).expect("N x 5 features")
}

/// `Z ← relu(Â Z W + b)` for each `(W, b)` in order.
pub fn gcn_forward(tape: &mut Tape, a_hat: Var, x: Var, layers: &[(Var, Var)]) -> Result<Var, TensorError> {
    let mut z = x;
    for &(w, b) in layers {
        let agg = tape.matmul(a_hat, z)?;
        let lin = tape.linear(agg, w, Some(b))?;
        z = tape.relu(lin)?;
    }
    Ok(z)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("functional group {0} has no member atoms")]
pub struct EmptyGroup(pub usize);

/// `F × N` averaging matrix: row g holds `1/|g|` on the group's atoms.
pub fn group_pool_matrix(m: &AtomGroupMatrix) -> Result<Tensor, EmptyGroup> {
    let (n, f) = (m.n_atoms(), m.n_groups());
    let mut data = vec![0.0; f * n];
    for g in 0..f {
        let atoms = m.group_atoms(g);
        if atoms.is_empty() {
            return Err(EmptyGroup(g));
        }
        let w = 1.0 / atoms.len() as f64;
        for a in atoms {
            data[g * n + a] = w;
        }
    }
    Ok(Tensor::new(&[f, n], data).expect("f*n entries"))
}

/// Sinusoidal code over group positions: even columns `sin(g/10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn positional_encoding(f: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; f * d];
    for g in 0..f {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = g as f64 / 10000f64.powf(2.0 * i / d as f64);
            data[g * d + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[f, d], data).expect("f*d entries")
}

#[derive(Debug, Clone, Copy)]
pub struct FingerIdOutput {
    /// `F × D` projected group embeddings.
    pub h_l: Var,
    /// `F × D_concat` pre-projection features `[z_inter ‖ e_fg ‖ e_pos ‖ z_global]`.
    pub concat: Var,
    /// `N × D_graph` atom embeddings.
    pub atoms: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FingerId {
    pub cfg: FingerIdConfig,
    pub d_model: usize,
    /// Catalogue size; the type table has one extra row for the fallback group.
    pub n_patterns: usize,
}

impl FingerId {
    pub const FG_TABLE: &'static str = "finger.fg_table";
    pub const PROJ_W: &'static str = "finger.proj.w";
    pub const PROJ_B: &'static str = "finger.proj.b";

    fn gcn_names(i: usize) -> (String, String) {
        (format!("finger.gcn.{i}.w"), format!("finger.gcn.{i}.b"))
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let mut width = ATOM_FEATURES;
        for i in 0..self.cfg.gcn_layers {
            let (w, b) = Self::gcn_names(i);
            store.init_uniform(&w, &[width, self.cfg.d_graph], rng);
            store.init_const(&b, &[self.cfg.d_graph], 0.0);
            width = self.cfg.d_graph;
        }
        store.init_uniform(Self::FG_TABLE, &[self.n_patterns + 1, self.cfg.d_fg], rng);
        store.init_uniform(Self::PROJ_W, &[self.cfg.d_concat(), self.d_model], rng);
        store.init_const(Self::PROJ_B, &[self.d_model], 0.0);
    }

    /// Width of the atom embeddings (the raw features when there are no layers).
    fn atom_width(&self) -> usize {
        if self.cfg.gcn_layers == 0 {
            ATOM_FEATURES
        } else {
            self.cfg.d_graph
        }
    }

    pub fn forward(&self, tape: &mut Tape, lig: &LigandGroups) -> Result<FingerIdOutput, TensorError> {
        if self.atom_width() != self.cfg.d_graph {
            return Err(TensorError::Invalid {
                op: "finger_id",
                msg: format!("gcn_layers = 0 requires d_graph = {ATOM_FEATURES}"),
            });
        }
        let a_hat = tape.constant(normalized_adjacency(&lig.graph));
        let x = tape.constant(feature_matrix(&lig.graph));
        let mut layers = Vec::with_capacity(self.cfg.gcn_layers);
        for i in 0..self.cfg.gcn_layers {
            let (w, b) = Self::gcn_names(i);
            layers.push((tape.param(&w)?, tape.param(&b)?));
        }
        let z = gcn_forward(tape, a_hat, x, &layers)?;

        let pool = group_pool_matrix(&lig.matrix).map_err(|e| TensorError::Invalid {
            op: "group_pool",
            msg: e.to_string(),
        })?;
        let f = pool.shape()[0];
        let pool = tape.constant(pool);
        let z_inter = tape.matmul(pool, z)?;

        let table = tape.param(Self::FG_TABLE)?;
        let e_fg = tape.gather_rows(table, &lig.pattern_indices(self.n_patterns))?;
        let e_pos = tape.constant(positional_encoding(f, self.cfg.d_pos));

        let z_global = tape.mean(z, 0)?;
        let z_global = tape.reshape(z_global, &[1, self.cfg.d_graph])?;
        let z_global = tape.broadcast_to(z_global, &[f, self.cfg.d_graph])?;

        let concat = tape.concat(&[z_inter, e_fg, e_pos, z_global], 1)?;
        let w = tape.param(Self::PROJ_W)?;
        let b = tape.param(Self::PROJ_B)?;
        let h_l = tape.linear(concat, w, Some(b))?;
        Ok(FingerIdOutput { h_l, concat, atoms: z })
    }
}
