//! Two-stage training: the interaction network under focal loss, then the
//! affinity head on a frozen backbone under MSE plus latent alignment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fgparser::{FgParser, LigandGroups};
use crate::labels::LabelSet;
use crate::losses::{self, FocalConfig, LatentConfig, LossError};
use crate::model::{backbone_hash, is_backbone, InteractionModel, ModelConfig, ProteinInput, BACKBONE_PREFIXES};
use crate::pairwise_unet::{type_index, N_TYPES};
use crate::protein::ProteinSequence;
use crate::tensor::{Adam, AdamConfig, Checkpoint, CheckpointError, Gradients, ParamStore, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{id}: {msg}")]
    Data { id: String, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("frozen parameter '{0}' received a gradient")]
    FrozenGradient(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Interaction,
    Affinity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub focal: FocalConfig,
    pub latent: LatentConfig,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// L2 penalty added to the gradient of every trainable parameter.
    pub weight_decay: f64,
    pub dropout: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_stage(Stage::Interaction)
    }
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        let (epochs, batch_size) = match stage {
            Stage::Interaction => (30, 2),
            Stage::Affinity => (80, 16),
        };
        let adam = AdamConfig::default();
        TrainConfig {
            stage,
            epochs,
            batch_size,
            learning_rate: adam.lr,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            focal: FocalConfig::default(),
            latent: LatentConfig::default(),
            grad_clip: 0.0,
            weight_decay: 0.0,
            dropout: 0.0,
            model: ModelConfig::default(),
        }
    }

    /// Parse TOML; keys left out take the defaults of the declared stage.
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        let stage = match value.get("stage") {
            Some(s) => s
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?,
            None => Stage::Interaction,
        };
        let mut base =
            toml::Value::try_from(TrainConfig::for_stage(stage)).map_err(|e| TrainError::Config(e.to_string()))?;
        merge(&mut base, value);
        let cfg: TrainConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.focal.alpha > 0.0 && self.focal.alpha < 1.0) || self.focal.gamma < 0.0 {
            return bad("focal alpha must lie in (0, 1) and gamma be non-negative");
        }
        if !(self.latent.tau > 0.0) {
            return bad("latent tau must be positive");
        }
        if self.grad_clip < 0.0 || self.weight_decay < 0.0 {
            return bad("grad_clip and weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// One protein–ligand pair.
#[derive(Debug, Clone)]
pub struct Complex {
    pub id: String,
    pub protein: ProteinSequence,
    /// Precomputed `R × D` embeddings for file mode.
    pub embeddings: Option<Tensor>,
    pub ligand_id: String,
    pub ligand: LigandGroups,
    pub labels: Option<LabelSet>,
    pub affinity: Option<f64>,
}

impl Complex {
    pub fn protein_input(&self) -> ProteinInput<'_> {
        match &self.embeddings {
            Some(t) => ProteinInput::Embeddings(t),
            None => ProteinInput::Sequence(&self.protein),
        }
    }

    fn data_error(&self, msg: impl std::fmt::Display) -> TrainError {
        TrainError::Data {
            id: self.id.clone(),
            msg: msg.to_string(),
        }
    }

    fn require_labels(&self) -> Result<&LabelSet, TrainError> {
        let y = self.labels.as_ref().ok_or_else(|| self.data_error("no labels"))?;
        if y.r != self.protein.len() || y.f != self.ligand.groups.len() {
            return Err(self.data_error(format!(
                "labels are {}x{} but the complex is {}x{}",
                y.r,
                y.f,
                self.protein.len(),
                self.ligand.groups.len()
            )));
        }
        Ok(y)
    }

    fn require_affinity(&self) -> Result<f64, TrainError> {
        self.affinity.ok_or_else(|| self.data_error("no affinity value"))
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub focal: Option<f64>,
    pub mse: Option<f64>,
    pub info_nce: Option<f64>,
    pub uniformity: Option<f64>,
    pub total: Option<f64>,
    pub rmse: Option<f64>,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "epoch,split,focal,mse,info_nce,uniformity,total,rmse";

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            f(self.focal),
            f(self.mse),
            f(self.info_nce),
            f(self.uniformity),
            f(self.total),
            f(self.rmse)
        )
    }
}

/// Everything needed to continue training after `epochs_done` epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: usize,
    pub params: ParamStore,
    pub adam: Adam,
    pub best_val: Option<f64>,
    pub best_params: Option<ParamStore>,
}

impl TrainState {
    pub fn new(params: ParamStore, cfg: &TrainConfig) -> Self {
        TrainState {
            epochs_done: 0,
            params,
            adam: Adam::new(cfg.adam()),
            best_val: None,
            best_params: None,
        }
    }

    /// Parameters to keep: the best-validation snapshot when there is one.
    pub fn best(&self) -> &ParamStore {
        self.best_params.as_ref().unwrap_or(&self.params)
    }

    pub fn to_checkpoint(&self, model: &ModelConfig) -> Checkpoint {
        let mut ck = Checkpoint::default();
        put_model_config(&mut ck, model);
        ck.put_params(&self.params);
        ck.put_adam(&self.adam);
        ck.put_u64("meta.epochs_done", self.epochs_done as u64);
        if let (Some(v), Some(p)) = (self.best_val, &self.best_params) {
            ck.put_f64s("meta.best_val", &[1], vec![v]);
            ck.put_params_under("best.", p);
        }
        ck
    }

    /// Restore a state written by [`Self::to_checkpoint`]. The template fixes
    /// which parameters are trainable.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainConfig, template: &ParamStore) -> Result<Self, TrainError> {
        check_model_config(ck, &cfg.model)?;
        let params = ck.params(Some(template))?;
        check_same_layout(template, &params)?;
        let mut adam = Adam::new(cfg.adam());
        ck.restore_adam(&mut adam)?;
        let (best_val, best_params) = match ck.f64s("meta.best_val") {
            Ok(v) => (Some(v[0]), Some(ck.params_under("best.", Some(template))?)),
            Err(CheckpointError::Missing(_)) => (None, None),
            Err(e) => return Err(e.into()),
        };
        Ok(TrainState {
            epochs_done: ck.u64("meta.epochs_done")? as usize,
            params,
            adam,
            best_val,
            best_params,
        })
    }
}

pub fn put_model_config(ck: &mut Checkpoint, model: &ModelConfig) {
    ck.put_bytes("meta.config", &serde_json::to_vec(model).expect("config serializes"));
}

pub fn model_config(ck: &Checkpoint) -> Result<ModelConfig, TrainError> {
    serde_json::from_slice(ck.bytes("meta.config")?).map_err(|e| TrainError::CheckpointMismatch(e.to_string()))
}

fn check_model_config(ck: &Checkpoint, expected: &ModelConfig) -> Result<(), TrainError> {
    let found = model_config(ck)?;
    if &found != expected {
        return Err(TrainError::CheckpointMismatch(format!(
            "checkpoint model {} differs from config {}",
            serde_json::to_string(&found).unwrap_or_default(),
            serde_json::to_string(expected).unwrap_or_default()
        )));
    }
    Ok(())
}

fn check_same_layout(expected: &ParamStore, found: &ParamStore) -> Result<(), TrainError> {
    for (name, t) in expected.iter() {
        match found.get(name) {
            Some(f) if f.shape() == t.shape() => {}
            Some(f) => {
                return Err(TrainError::CheckpointMismatch(format!(
                    "'{name}' has shape {:?}, expected {:?}",
                    f.shape(),
                    t.shape()
                )))
            }
            None => return Err(TrainError::CheckpointMismatch(format!("missing parameter '{name}'"))),
        }
    }
    if let Some(extra) = found.names().find(|n| !expected.contains(n)) {
        return Err(TrainError::CheckpointMismatch(format!(
            "unexpected parameter '{extra}'"
        )));
    }
    Ok(())
}

/// Sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

fn sample_seed(seed: u64, epoch: usize, sample: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | (sample as u64 + 1));
    rng.gen()
}

/// Apply weight decay and clipping to averaged gradients, then one Adam step.
fn apply_update(state: &mut TrainState, grads: &Gradients, cfg: &TrainConfig) -> Result<(), TrainError> {
    let mut grads = grads.clone();
    if cfg.weight_decay > 0.0 {
        let mut decay = Gradients::default();
        for (name, t) in state.params.iter().filter(|(_, t)| t.requires_grad) {
            if grads.get(name).is_some() {
                decay.insert(name.clone(), t.data().to_vec());
            }
        }
        grads.add_scaled(&decay, cfg.weight_decay);
    }
    if cfg.grad_clip > 0.0 {
        let norm = grads
            .iter()
            .filter(|(n, _)| state.params.get(n).is_some_and(|t| t.requires_grad))
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > cfg.grad_clip {
            let mut scaled = Gradients::default();
            scaled.add_scaled(&grads, cfg.grad_clip / norm);
            grads = scaled;
        }
    }
    state.params.zero_grad();
    state.params.accumulate(&grads)?;
    state.adam.step(&mut state.params);
    state.params.zero_grad();
    Ok(())
}

/// Per-epoch summary handed to the callback.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub rows: Vec<LogRow>,
    pub improved: bool,
}

pub type EpochCallback<'a> = dyn FnMut(&EpochReport, &TrainState) -> Result<(), TrainError> + 'a;

/// Focal loss and its gradients for one complex.
fn interaction_sample(
    model: &InteractionModel,
    params: &ParamStore,
    c: &Complex,
    cfg: &TrainConfig,
    dropout_seed: u64,
) -> Result<(f64, Gradients), TrainError> {
    let y = c.require_labels()?;
    let mut tape = Tape::with_params(params);
    let out = model
        .forward(
            &mut tape,
            c.protein_input(),
            &c.ligand,
            Some((cfg.dropout, dropout_seed)),
        )
        .map_err(|e| c.data_error(e))?;
    let loss = losses::focal_loss(&mut tape, out.p, y.dense(), cfg.focal).map_err(|e| c.data_error(e))?;
    tape.backward(loss)?;
    Ok((tape.data(loss)[0], tape.param_grads()))
}

/// Mean focal loss over a set, inference only.
pub fn evaluate_focal(
    model: &InteractionModel,
    params: &ParamStore,
    data: &[Complex],
    focal: FocalConfig,
) -> Result<f64, TrainError> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|c| {
            let y = c.require_labels()?;
            let p = model
                .predict(params, c.protein_input(), &c.ligand)
                .map_err(|e| c.data_error(e))?;
            losses::focal_value(&p.probs, y.dense(), focal).map_err(|e| c.data_error(e))
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Train the interaction network. Starting from `state` (fresh or resumed),
/// runs up to `cfg.epochs` total epochs and returns the final state.
pub fn train_interaction(
    model: &InteractionModel,
    train: &[Complex],
    val: &[Complex],
    cfg: &TrainConfig,
    mut state: TrainState,
    on_epoch: &mut EpochCallback,
) -> Result<TrainState, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    for c in train.iter().chain(val) {
        c.require_labels()?;
    }
    for epoch in state.epochs_done..cfg.epochs {
        let order = epoch_permutation(train.len(), cfg.seed, epoch);
        let mut sample_loss = vec![0.0; train.len()];
        for batch in order.chunks(cfg.batch_size) {
            let params = &state.params;
            let results: Vec<(f64, Gradients)> = batch
                .par_iter()
                .map(|&i| interaction_sample(model, params, &train[i], cfg, sample_seed(cfg.seed, epoch, i)))
                .collect::<Result<_, _>>()?;
            let mut grads = Gradients::default();
            for (&i, (loss, g)) in batch.iter().zip(&results) {
                sample_loss[i] = *loss;
                grads.add_scaled(g, 1.0 / batch.len() as f64);
            }
            apply_update(&mut state, &grads, cfg)?;
        }
        let train_loss = sample_loss.iter().sum::<f64>() / train.len() as f64;
        let mut rows = vec![LogRow {
            epoch,
            split: "train".into(),
            focal: Some(train_loss),
            ..LogRow::default()
        }];
        let monitored = if val.is_empty() {
            train_loss
        } else {
            let v = evaluate_focal(model, &state.params, val, cfg.focal)?;
            rows.push(LogRow {
                epoch,
                split: "val".into(),
                focal: Some(v),
                ..LogRow::default()
            });
            v
        };
        let improved = state.best_val.map_or(true, |b| monitored < b);
        if improved {
            state.best_val = Some(monitored);
            state.best_params = Some(state.params.clone());
        }
        state.epochs_done = epoch + 1;
        on_epoch(&EpochReport { epoch, rows, improved }, &state)?;
    }
    Ok(state)
}

/// Frozen-backbone outputs for one complex: probabilities and the
/// pre-attention embeddings.
#[derive(Debug, Clone)]
pub struct BackboneFeatures {
    pub p: Tensor,
    pub hp: Tensor,
    pub hl: Tensor,
}

pub fn backbone_features(
    model: &InteractionModel,
    params: &ParamStore,
    data: &[Complex],
) -> Result<Vec<BackboneFeatures>, TrainError> {
    data.par_iter()
        .map(|c| {
            let mut tape = Tape::inference(params);
            let out = model
                .forward(&mut tape, c.protein_input(), &c.ligand, None)
                .map_err(|e| c.data_error(e))?;
            Ok(BackboneFeatures {
                p: tape.value(out.p).clone(),
                hp: tape.value(out.hp).clone(),
                hl: tape.value(out.hl).clone(),
            })
        })
        .collect()
}

/// Loss components of one affinity batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityLosses {
    pub mse: f64,
    pub info_nce: Option<f64>,
    pub uniformity: Option<f64>,
    pub total: f64,
}

/// Forward the head over a batch on one tape; returns the total-loss var,
/// the components and the predictions.
fn affinity_batch(
    tape: &mut Tape,
    model: &InteractionModel,
    feats: &[&BackboneFeatures],
    targets: &[f64],
    latent: LatentConfig,
) -> Result<(crate::tensor::Var, AffinityLosses, Vec<f64>), TrainError> {
    let mut preds = Vec::with_capacity(feats.len());
    let mut hs = Vec::with_capacity(feats.len());
    for f in feats {
        let p = tape.constant(f.p.clone());
        let hp = tape.constant(f.hp.clone());
        let hl = tape.constant(f.hl.clone());
        let out = model.head.forward(tape, p, hp, hl)?;
        preds.push(out.y_hat);
        hs.push(out.h);
    }
    let y_hat = tape.concat(&preds, 0)?;
    let mse = losses::mse(tape, y_hat, targets)?;
    let predictions = tape.data(y_hat).to_vec();
    if feats.len() < 2 {
        let v = tape.data(mse)[0];
        let comps = AffinityLosses {
            mse: v,
            info_nce: None,
            uniformity: None,
            total: v,
        };
        return Ok((mse, comps, predictions));
    }
    let h = tape.concat(&hs, 0)?;
    let nce = losses::info_nce(tape, h, targets, latent.tau)?;
    let z = tape.l2_normalize(h, 1, 1e-12)?;
    let unif = losses::uniformity(tape, z)?;
    let total = losses::total_affinity_loss(tape, mse, nce, unif, latent)?;
    let comps = AffinityLosses {
        mse: tape.data(mse)[0],
        info_nce: Some(tape.data(nce)[0]),
        uniformity: Some(tape.data(unif)[0]),
        total: tape.data(total)[0],
    };
    Ok((total, comps, predictions))
}

/// Head predictions for cached backbone features, inference only.
pub fn predict_affinities(
    model: &InteractionModel,
    params: &ParamStore,
    feats: &[BackboneFeatures],
) -> Result<Vec<f64>, TrainError> {
    feats
        .iter()
        .map(|f| {
            let mut tape = Tape::inference(params);
            let p = tape.constant(f.p.clone());
            let hp = tape.constant(f.hp.clone());
            let hl = tape.constant(f.hl.clone());
            let out = model.head.forward(&mut tape, p, hp, hl)?;
            Ok(tape.data(out.y_hat)[0])
        })
        .collect()
}

pub struct AffinityRun {
    pub state: TrainState,
    pub backbone_hash_before: String,
    pub backbone_hash_after: String,
}

/// Train the affinity head. Backbone parameters in `state` are frozen for
/// the whole run; any gradient reaching them is an error.
pub fn train_affinity(
    model: &InteractionModel,
    train: &[Complex],
    val: &[Complex],
    cfg: &TrainConfig,
    mut state: TrainState,
    on_epoch: &mut EpochCallback,
) -> Result<AffinityRun, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    for prefix in BACKBONE_PREFIXES {
        state.params.set_trainable(prefix, false);
    }
    let before = backbone_hash(&state.params);
    let y_train: Vec<f64> = train.iter().map(Complex::require_affinity).collect::<Result<_, _>>()?;
    let y_val: Vec<f64> = val.iter().map(Complex::require_affinity).collect::<Result<_, _>>()?;
    let f_train = backbone_features(model, &state.params, train)?;
    let f_val = backbone_features(model, &state.params, val)?;

    for epoch in state.epochs_done..cfg.epochs {
        let order = epoch_permutation(train.len(), cfg.seed, epoch);
        let (mut sums, mut sq_err, mut latent_batches) = ([0.0; 4], 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let feats: Vec<&BackboneFeatures> = batch.iter().map(|&i| &f_train[i]).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| y_train[i]).collect();
            let mut tape = Tape::with_params(&state.params);
            let (loss, comps, preds) = affinity_batch(&mut tape, model, &feats, &targets, cfg.latent)?;
            tape.backward(loss)?;
            let grads = tape.param_grads();
            if let Some((name, _)) = grads
                .iter()
                .find(|(n, g)| is_backbone(n) && g.iter().any(|&v| v != 0.0))
            {
                return Err(TrainError::FrozenGradient(name.clone()));
            }
            let w = batch.len() as f64;
            sums[0] += comps.mse * w;
            sums[3] += comps.total * w;
            if let (Some(n), Some(u)) = (comps.info_nce, comps.uniformity) {
                sums[1] += n;
                sums[2] += u;
                latent_batches += 1;
            }
            sq_err += preds.iter().zip(&targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
            apply_update(&mut state, &grads, cfg)?;
        }
        let n = train.len() as f64;
        let latent = |v: f64| (latent_batches > 0).then(|| v / latent_batches as f64);
        let mut rows = vec![LogRow {
            epoch,
            split: "train".into(),
            mse: Some(sums[0] / n),
            info_nce: latent(sums[1]),
            uniformity: latent(sums[2]),
            total: Some(sums[3] / n),
            rmse: Some((sq_err / n).sqrt()),
            ..LogRow::default()
        }];
        let monitored = if val.is_empty() {
            (sq_err / n).sqrt()
        } else {
            let preds = predict_affinities(model, &state.params, &f_val)?;
            let rmse = crate::metrics::rmse(&preds, &y_val).map_err(|e| TrainError::Config(e.to_string()))?;
            rows.push(LogRow {
                epoch,
                split: "val".into(),
                rmse: Some(rmse),
                ..LogRow::default()
            });
            rmse
        };
        let improved = state.best_val.map_or(true, |b| monitored < b);
        if improved {
            state.best_val = Some(monitored);
            state.best_params = Some(state.params.clone());
        }
        state.epochs_done = epoch + 1;
        on_epoch(&EpochReport { epoch, rows, improved }, &state)?;
    }
    let after = backbone_hash(&state.params);
    if after != before {
        return Err(TrainError::FrozenGradient("backbone hash changed".into()));
    }
    Ok(AffinityRun {
        state,
        backbone_hash_before: before,
        backbone_hash_after: after,
    })
}

/// Ligands for synthetic data. Each carries groups that the planted rules
/// below react to.
pub const SYNTHETIC_LIGANDS: [&str; 8] = [
    "OCc1ccccc1",
    "OC(=O)CCc1ccccc1",
    "CC(=O)NCc1ccccc1",
    "OC(=O)CC(O)C(=O)O",
    "Clc1ccc(CO)cc1",
    "CCOC(=O)c1ccccc1",
    "NCCCC(=O)O",
    "OCC(O)CO",
];

const SYNTHETIC_RESIDUES: &[u8] = b"LIVFSTNQKRGAWYDE";

/// Planted interaction type for a residue letter facing a group pattern.
pub fn planted_rule(residue: char, pattern: &str) -> Option<usize> {
    let ty = match (residue, pattern) {
        ('L' | 'I' | 'V' | 'F', "aromatic_6_ring") => "hydrophobic",
        ('W' | 'Y', "aromatic_6_ring") => "pi_stacking",
        ('K' | 'R', "aromatic_6_ring") => "pi_cation",
        ('K' | 'R', "carboxylic_acid") => "salt_bridge",
        ('S' | 'T' | 'N' | 'Q', "hydroxyl" | "amide" | "ester" | "ketone") => "hydrogen_bond",
        ('D' | 'E', "primary_amine") => "salt_bridge",
        ('G' | 'A', "halogen") => "halogen_bond",
        _ => return None,
    };
    type_index(ty)
}

/// `n` complexes with random short proteins, ligands from the pool above,
/// labels from [`planted_rule`], and an affinity that is linear in the
/// number of labelled contacts.
pub fn synthetic_dataset(n: usize, seed: u64, min_len: usize, max_len: usize) -> Vec<Complex> {
    let parser = FgParser::default();
    let ligands: Vec<LigandGroups> = SYNTHETIC_LIGANDS
        .iter()
        .map(|s| parser.parse(s).expect("synthetic ligand parses"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(min_len..=max_len);
            let residues: String = (0..len)
                .map(|_| SYNTHETIC_RESIDUES[rng.gen_range(0..SYNTHETIC_RESIDUES.len())] as char)
                .collect();
            let protein = ProteinSequence::new(format!("syn{i}"), &residues).expect("synthetic alphabet");
            let li = rng.gen_range(0..ligands.len());
            let ligand = ligands[li].clone();
            let f = ligand.groups.len();
            let mut y = vec![0u8; len * f * N_TYPES];
            for (r, ch) in residues.chars().enumerate() {
                for (g, grp) in ligand.groups.iter().enumerate() {
                    if let Some(k) = planted_rule(ch, parser.pattern_name(grp.pattern_id)) {
                        y[(r * f + g) * N_TYPES + k] = 1;
                    }
                }
            }
            let contacts = y.iter().filter(|&&v| v != 0).count() as f64;
            let labels = LabelSet::from_dense(&protein.id, &format!("lig{li}"), len, f, parser.catalogue_hash(), y);
            Complex {
                id: format!("syn{i}"),
                embeddings: None,
                ligand_id: format!("lig{li}"),
                protein,
                ligand,
                labels: Some(labels),
                affinity: Some(4.0 + 0.25 * contacts),
            }
        })
        .collect()
}
