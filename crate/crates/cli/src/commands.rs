use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use linker_core::evaluation::{match_labels, pool, Level};
use linker_core::fgparser::FgParser;
use linker_core::formats::{read_predictions, write_prediction, Manifest, PredictionRecord};
use linker_core::labels::{load_labels, residue_hard, smooth};
use linker_core::metrics::{rmse, EvalReport, PrCurve, RocCurve};
use linker_core::model::{is_backbone, InteractionModel, ModelConfig, ProteinMode};
use linker_core::pairwise_unet::InteractionTensor;
use linker_core::tensor::{Checkpoint, ParamStore};
use linker_core::training::{
    backbone_features, model_config, predict_affinities, train_affinity as run_affinity,
    train_interaction as run_interaction, Complex, EpochReport, LogRow, Stage, TrainConfig, TrainError, TrainState,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::{CurveArgs, Global};

const STAGE_RECORD: &str = "meta.stage";

fn warn(msg: impl std::fmt::Display) {
    eprintln!("{}", serde_json::json!({ "warning": msg.to_string() }));
}

/// Opens `path` for writing, `-` meaning stdout.
fn sink(path: &Path) -> Result<Box<dyn Write>, CliError> {
    if path == Path::new("-") {
        return Ok(Box::new(io::stdout().lock()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = File::create(path).map_err(|e| CliError::data(path.display(), e))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn parse_fg(g: &Global, input: &Path, output: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(input).map_err(|e| CliError::data(input.display(), e))?;
    let parser = FgParser::default();
    let lines: Vec<(usize, &str, String)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let mut parts = l.split_whitespace();
            let smiles = parts.next().unwrap_or_default();
            let id = parts.next().map_or_else(|| format!("mol{}", i + 1), str::to_string);
            (i + 1, smiles, id)
        })
        .collect();
    let results: Vec<_> = lines
        .par_iter()
        .map(|(_, s, id)| parser.parse(s).map(|lig| parser.to_record(id, &lig)))
        .collect();
    let mut out = sink(output)?;
    for ((line, _, _), r) in lines.iter().zip(results) {
        match r {
            Ok(rec) => writeln!(out, "{}", serde_json::to_string(&rec)?)?,
            Err(e) if g.strict => return Err(CliError::data(format!("{}:{line}", input.display()), e)),
            Err(e) => warn(format!("{}:{line}: skipped: {e}", input.display())),
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FeaturizeSummary {
    complexes: usize,
    ligands: usize,
    written: usize,
    cached: usize,
    cache_dir: String,
}

/// Cache layout: `<cache>/<catalogue hash prefix>/<sha256 of SMILES>.json`,
/// each holding the decomposition record.
pub fn featurize(manifest: &Path, cache: &Path, mode: ProteinMode) -> Result<(), CliError> {
    let parser = FgParser::default();
    let m = Manifest::load(manifest)?;
    let complexes = m.complexes(&parser, mode)?;
    let dir = cache.join(&parser.catalogue_hash()[..16]);
    fs::create_dir_all(&dir).map_err(|e| CliError::data(dir.display(), e))?;
    let mut ligands: BTreeMap<String, &Complex> = BTreeMap::new();
    for (c, rec) in complexes.iter().zip(&m.records) {
        ligands.entry(rec.smiles.clone()).or_insert(c);
    }
    let (mut written, mut cached) = (0, 0);
    for (smiles, c) in &ligands {
        let key: String = Sha256::digest(smiles.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let path = dir.join(format!("{key}.json"));
        let text = serde_json::to_string(&parser.to_record(&c.ligand_id, &c.ligand))? + "\n";
        if fs::read_to_string(&path).is_ok_and(|old| old == text) {
            cached += 1;
        } else {
            fs::write(&path, text).map_err(|e| CliError::data(path.display(), e))?;
            written += 1;
        }
    }
    print_json(&FeaturizeSummary {
        complexes: complexes.len(),
        ligands: ligands.len(),
        written,
        cached,
        cache_dir: dir.display().to_string(),
    })
}

fn load_config(path: Option<&Path>, stage: Stage, seed: Option<u64>) -> Result<TrainConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::data(p.display(), e))?;
            let has_stage = text
                .lines()
                .any(|l| l.split('=').next().map(str::trim) == Some("stage"));
            let text = if has_stage {
                text
            } else {
                format!("stage = \"{}\"\n{text}", stage_name(stage))
            };
            TrainConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::for_stage(stage),
    };
    if cfg.stage != stage {
        return Err(CliError::Usage(format!(
            "config is for the {} stage",
            stage_name(cfg.stage)
        )));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Interaction => "interaction",
        Stage::Affinity => "affinity",
    }
}

fn load_complexes(path: Option<&Path>, parser: &FgParser, mode: ProteinMode) -> Result<Vec<Complex>, CliError> {
    match path {
        Some(p) => Ok(Manifest::load(p)?.complexes(parser, mode)?),
        None => Ok(Vec::new()),
    }
}

struct EpochLog {
    out: Option<BufWriter<File>>,
}

impl EpochLog {
    fn open(path: Option<&Path>, append: bool) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(EpochLog { out: None });
        };
        let existing = append && path.is_file();
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(existing)
            .truncate(!existing)
            .open(path)
            .map_err(|e| CliError::data(path.display(), e))?;
        let mut out = BufWriter::new(f);
        if !existing {
            writeln!(out, "{}", LogRow::CSV_HEADER)?;
        }
        Ok(EpochLog { out: Some(out) })
    }

    fn rows(&mut self, rows: &[LogRow]) -> io::Result<()> {
        if let Some(out) = &mut self.out {
            for r in rows {
                writeln!(out, "{}", r.to_csv())?;
            }
            out.flush()?;
        }
        Ok(())
    }
}

fn stage_checkpoint(state: &TrainState, cfg: &TrainConfig) -> Checkpoint {
    let mut ck = state.to_checkpoint(&cfg.model);
    ck.put_bytes(STAGE_RECORD, stage_name(cfg.stage).as_bytes());
    ck
}

fn save_state(state: &TrainState, cfg: &TrainConfig, out: &Path) -> Result<(), CliError> {
    stage_checkpoint(state, cfg)
        .save(out)
        .map_err(|e| CliError::data(out.display(), e))
}

fn epoch_hook<'a>(
    log: &'a mut EpochLog,
    cfg: &'a TrainConfig,
    out: &'a Path,
) -> impl FnMut(&EpochReport, &TrainState) -> Result<(), TrainError> + 'a {
    move |report, state| {
        log.rows(&report.rows).map_err(|e| TrainError::Data {
            id: "log".into(),
            msg: e.to_string(),
        })?;
        stage_checkpoint(state, cfg).save(out).map_err(TrainError::Checkpoint)
    }
}

#[derive(Serialize)]
struct TrainSummary {
    stage: &'static str,
    epochs_done: usize,
    best_val: Option<f64>,
    checkpoint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    backbone_hash: Option<String>,
}

fn resume_state(out: &Path, resume: bool, cfg: &TrainConfig, template: ParamStore) -> Result<TrainState, CliError> {
    if resume && out.is_file() {
        let ck = Checkpoint::load(out).map_err(|e| CliError::data(out.display(), e))?;
        Ok(TrainState::from_checkpoint(&ck, cfg, &template)?)
    } else {
        Ok(TrainState::new(template, cfg))
    }
}

pub fn train_interaction(
    g: &Global,
    config: Option<&Path>,
    manifest: &Path,
    val: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    resume: bool,
) -> Result<(), CliError> {
    let cfg = load_config(config, Stage::Interaction, g.seed)?;
    let parser = FgParser::default();
    let train = load_complexes(Some(manifest), &parser, cfg.model.protein)?;
    let val = load_complexes(val, &parser, cfg.model.protein)?;
    let model =
        InteractionModel::with_default_catalogue(cfg.model.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let state = resume_state(out, resume, &cfg, model.init_params(cfg.seed))?;
    let mut log = EpochLog::open(log, resume)?;
    let state = run_interaction(&model, &train, &val, &cfg, state, &mut epoch_hook(&mut log, &cfg, out))?;
    save_state(&state, &cfg, out)?;
    print_json(&TrainSummary {
        stage: "interaction",
        epochs_done: state.epochs_done,
        best_val: state.best_val,
        checkpoint: out.display().to_string(),
        backbone_hash: None,
    })
}

/// Parameters to deploy from a checkpoint: the best snapshot when present.
fn deployed_params(ck: &Checkpoint) -> Result<ParamStore, CliError> {
    let prefix = if ck.get("meta.best_val").is_some() {
        "best."
    } else {
        "param."
    };
    Ok(ck.params_under(prefix, None)?)
}

#[allow(clippy::too_many_arguments)]
pub fn train_affinity(
    g: &Global,
    config: Option<&Path>,
    backbone: &Path,
    manifest: &Path,
    val: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    resume: bool,
) -> Result<(), CliError> {
    let mut cfg = load_config(config, Stage::Affinity, g.seed)?;
    let bb = Checkpoint::load(backbone).map_err(|e| CliError::data(backbone.display(), e))?;
    // Backbone dimensions come from the checkpoint; only the head is configurable here.
    cfg.model = ModelConfig {
        affinity: cfg.model.affinity.clone(),
        ..model_config(&bb)?
    };
    let parser = FgParser::default();
    let train = load_complexes(Some(manifest), &parser, cfg.model.protein)?;
    let val = load_complexes(val, &parser, cfg.model.protein)?;
    let model =
        InteractionModel::with_default_catalogue(cfg.model.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut template = model.init_params(cfg.seed);
    for (name, t) in deployed_params(&bb)?.iter().filter(|(n, _)| is_backbone(n)) {
        let slot = template
            .get_mut(name)
            .ok_or_else(|| CliError::Data(format!("backbone parameter '{name}' is not part of the model")))?;
        if slot.shape() != t.shape() {
            return Err(CliError::Data(format!(
                "backbone parameter '{name}' has shape {:?}",
                t.shape()
            )));
        }
        *slot = t.clone();
    }
    let state = resume_state(out, resume, &cfg, template)?;
    let mut log = EpochLog::open(log, resume)?;
    let run = run_affinity(&model, &train, &val, &cfg, state, &mut epoch_hook(&mut log, &cfg, out))?;
    save_state(&run.state, &cfg, out)?;
    print_json(&TrainSummary {
        stage: "affinity",
        epochs_done: run.state.epochs_done,
        best_val: run.state.best_val,
        checkpoint: out.display().to_string(),
        backbone_hash: Some(run.backbone_hash_after),
    })
}

#[derive(Serialize)]
struct PredictSummary {
    predictions: usize,
    out: String,
    affinity_csv: Option<String>,
}

pub fn predict(backbone: &Path, manifest: &Path, out: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(backbone).map_err(|e| CliError::data(backbone.display(), e))?;
    let cfg = model_config(&ck)?;
    let with_head = ck.bytes(STAGE_RECORD).is_ok_and(|s| s == b"affinity");
    let model = InteractionModel::with_default_catalogue(cfg.clone()).map_err(|e| CliError::Data(e.to_string()))?;
    let params = deployed_params(&ck)?;
    let parser = FgParser::default();
    let complexes = Manifest::load(manifest)?.complexes(&parser, cfg.protein)?;
    let feats = backbone_features(&model, &params, &complexes)?;
    let affinities = if with_head {
        Some(predict_affinities(&model, &params, &feats)?)
    } else {
        None
    };
    let mut csv = String::from("id,protein_id,ligand_id,affinity\n");
    for (i, (c, f)) in complexes.iter().zip(&feats).enumerate() {
        let s = f.p.shape();
        let p =
            InteractionTensor::new(s[0], s[1], f.p.data().to_vec()).map_err(|e| CliError::Internal(e.to_string()))?;
        let a = affinities.as_ref().map(|v| v[i]);
        write_prediction(out, &PredictionRecord::new(&c.protein.id, &c.ligand_id, &p, a))?;
        if let Some(a) = a {
            csv.push_str(&format!("{},{},{},{a}\n", c.id, c.protein.id, c.ligand_id));
        }
    }
    let affinity_csv = if with_head {
        let path = out.join("affinity.csv");
        fs::write(&path, csv).map_err(|e| CliError::data(path.display(), e))?;
        Some(path.display().to_string())
    } else {
        None
    };
    print_json(&PredictSummary {
        predictions: complexes.len(),
        out: out.display().to_string(),
        affinity_csv,
    })
}

fn curves(g: &Global, a: &CurveArgs) -> Result<(EvalReport, PrCurve, RocCurve), CliError> {
    if !(a.sigma > 0.0 && a.sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma must be positive, got {}", a.sigma)));
    }
    let parser = FgParser::default();
    let records = read_predictions(&a.preds)?;
    let preds: Vec<(String, String, InteractionTensor)> = records
        .iter()
        .map(|r| Ok((r.protein_id.clone(), r.ligand_id.clone(), r.tensor()?)))
        .collect::<Result<_, CliError>>()?;
    let labels = load_labels(&a.labels, Some(parser.catalogue_hash()))?;
    let (matched, missing) = match_labels(&preds, &labels);
    if !missing.is_empty() {
        let msg = format!("{} predictions without labels: {}", missing.len(), missing.join(", "));
        if g.strict {
            return Err(CliError::Data(msg));
        }
        warn(msg);
    }
    let pooled = pool(&matched, a.level, a.sigma).map_err(CliError::Data)?;
    let (mut report, pr, roc) = EvalReport::compute(
        a.level.as_str(),
        &pooled.scores,
        &pooled.labels,
        pooled.soft.as_deref(),
        &a.recalls,
        &a.thresholds,
    )?;
    if let Some(m) = &a.manifest {
        let m = Manifest::load(m)?;
        let truth: BTreeMap<(&str, &str), f64> = m
            .records
            .iter()
            .filter_map(|r| r.affinity.map(|y| ((r.protein_id.as_str(), r.ligand_id()), y)))
            .collect();
        let (p, t): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter_map(|r| Some((r.affinity?, *truth.get(&(r.protein_id.as_str(), r.ligand_id.as_str()))?)))
            .unzip();
        if !p.is_empty() {
            report.rmse = Some(rmse(&p, &t)?);
        }
    }
    Ok((report, pr, roc))
}

pub fn evaluate(g: &Global, a: &CurveArgs, out: Option<&Path>) -> Result<(), CliError> {
    let (report, _, _) = curves(g, a)?;
    let text = serde_json::to_string_pretty(&report)?;
    match out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| CliError::data(p.display(), e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn smooth_labels(labels: &Path, sigma: f64, out: &Path) -> Result<(), CliError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage(format!("--sigma must be positive, got {sigma}")));
    }
    let sets = load_labels(labels, None)?;
    let mut w = sink(out)?;
    writeln!(w, "protein_id,ligand_id,residue,y_hard,y_smooth")?;
    for s in &sets {
        let hard = residue_hard(s);
        let soft = smooth(&hard, sigma)?;
        for (i, (h, y)) in hard.iter().zip(&soft).enumerate() {
            writeln!(w, "{},{},{i},{h},{y}", s.protein_id, s.ligand_id)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_curves(g: &Global, a: &CurveArgs, out: &Path) -> Result<(), CliError> {
    let (report, pr, roc) = curves(g, a)?;
    fs::create_dir_all(out).map_err(|e| CliError::data(out.display(), e))?;
    let level = a.level.as_str();
    let mut text = String::from("threshold,precision,recall\n");
    for p in &pr.points {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    fs::write(out.join(format!("pr_{level}.csv")), text)?;
    let mut text = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        text.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    fs::write(out.join(format!("roc_{level}.csv")), text)?;
    if level == Level::Residue.as_str() {
        let mut text = String::from("threshold,weighted_precision\n");
        for (t, v) in &report.weighted_precision_at {
            text.push_str(&format!("{t},{}\n", v.map(|v| v.to_string()).unwrap_or_default()));
        }
        fs::write(out.join("weighted_precision.csv"), text)?;
    }
    let summary = serde_json::json!({
        "report": report,
        // Values are linear; precision reads best on a log axis at low prevalence.
        "plot_hints": { "precision_axis": "log" },
    });
    fs::write(
        out.join(format!("summary_{level}.json")),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    print_json(&summary)
}
