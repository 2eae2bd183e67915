//! Ranking and regression metrics. Curves sweep thresholds over distinct
//! scores in descending order; tied scores cross the threshold together.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("labels contain no positives")]
    NoPositives,
    #[error("ROC needs at least one positive and one negative")]
    DegenerateLabels,
    #[error("no positive predictions; weighted precision is undefined")]
    NoPredictions,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Cumulative `(threshold, tp, fp)` after each distinct score, descending.
fn sweep(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, u64, u64)>, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricError::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    Ok(out)
}

/// Precision-recall curve and step-interpolated average precision
/// `Σ (R_n − R_{n−1}) P_n`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, MetricError> {
    let steps = sweep(scores, labels)?;
    let npos = steps.last().map_or(0, |s| s.1);
    if npos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut points = Vec::with_capacity(steps.len());
    // Σ Δtp·P_n, divided by the positive count once at the end.
    let mut weighted = 0.0;
    let mut prev_tp = 0u64;
    for &(t, tp, fp) in &steps {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / npos as f64;
        weighted += (tp - prev_tp) as f64 * precision;
        prev_tp = tp;
        points.push(PrPoint {
            threshold: t,
            precision,
            recall,
        });
    }
    let ap = (weighted / npos as f64).min(1.0);
    Ok(PrCurve { points, ap })
}

/// ROC curve (starting at the origin) and its trapezoidal area, which equals
/// the Mann-Whitney statistic with ties counted as one half.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricError> {
    let steps = sweep(scores, labels)?;
    let &(_, npos, nneg) = steps.last().expect("non-empty");
    if npos == 0 || nneg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    // Twice the area in units of (1/npos)(1/nneg), accumulated exactly.
    let mut twice_area: u128 = 0;
    let (mut ptp, mut pfp) = (0u64, 0u64);
    for &(t, tp, fp) in &steps {
        twice_area += (fp - pfp) as u128 * (tp + ptp) as u128;
        (ptp, pfp) = (tp, fp);
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / nneg as f64,
            tpr: tp as f64 / npos as f64,
        });
    }
    let auc = twice_area as f64 / (2 * npos as u128 * nneg as u128) as f64;
    Ok(RocCurve { points, auc })
}

/// `Σ ŷ_i y_i / Σ ŷ_i` for binary predictions and soft labels.
pub fn weighted_precision(preds: &[bool], y_soft: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != y_soft.len() {
        return Err(MetricError::LengthMismatch(preds.len(), y_soft.len()));
    }
    let n = preds.iter().filter(|&&p| p).count();
    if n == 0 {
        return Err(MetricError::NoPredictions);
    }
    let s: f64 = preds.iter().zip(y_soft).filter(|(&p, _)| p).map(|(_, &y)| y).sum();
    Ok(s / n as f64)
}

/// Weighted precision after thresholding scores at `threshold` (inclusive).
pub fn weighted_precision_at(scores: &[f64], y_soft: &[f64], threshold: f64) -> Result<f64, MetricError> {
    let preds: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    weighted_precision(&preds, y_soft)
}

pub fn prevalence(labels: &[bool]) -> Result<f64, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    Ok(pos as f64 / labels.len() as f64)
}

pub fn enrichment(precision: f64, prevalence: f64) -> f64 {
    precision / prevalence
}

/// Enrichment at the first sweep point whose recall reaches `target`.
pub fn enrichment_at_recall(curve: &PrCurve, prevalence: f64, target: f64) -> Option<f64> {
    curve
        .points
        .iter()
        .find(|p| p.recall >= target)
        .map(|p| enrichment(p.precision, prevalence))
}

pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != truths.len() {
        return Err(MetricError::LengthMismatch(preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let s: f64 = preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((s / preds.len() as f64).sqrt())
}

/// Summary written by `evaluate` / `export-curves`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: String,
    pub n: usize,
    pub positives: usize,
    pub ap: f64,
    pub roc_auc: f64,
    pub prevalence: f64,
    pub enrichment_at_recall: Vec<(f64, f64)>,
    /// `None` where nothing was predicted at that threshold.
    pub weighted_precision_at: Vec<(f64, Option<f64>)>,
    pub rmse: Option<f64>,
}

pub const DEFAULT_RECALLS: [f64; 5] = [0.01, 0.05, 0.1, 0.25, 0.5];
pub const DEFAULT_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

impl EvalReport {
    /// Pooled report over `scores`/`labels`; `soft` enables weighted precision.
    pub fn compute(
        level: &str,
        scores: &[f64],
        labels: &[bool],
        soft: Option<&[f64]>,
        recalls: &[f64],
        thresholds: &[f64],
    ) -> Result<(EvalReport, PrCurve, RocCurve), MetricError> {
        let pr = pr_curve(scores, labels)?;
        let roc = roc_curve(scores, labels)?;
        let prev = prevalence(labels)?;
        let enrichment_at_recall = recalls
            .iter()
            .filter_map(|&r| enrichment_at_recall(&pr, prev, r).map(|e| (r, e)))
            .collect();
        let weighted_precision_at = match soft {
            Some(y) => thresholds
                .iter()
                .map(|&t| match weighted_precision_at(scores, y, t) {
                    Ok(v) => Ok((t, Some(v))),
                    Err(MetricError::NoPredictions) => Ok((t, None)),
                    Err(e) => Err(e),
                })
                .collect::<Result<_, _>>()?,
            None => Vec::new(),
        };
        let report = EvalReport {
            level: level.to_string(),
            n: scores.len(),
            positives: labels.iter().filter(|&&l| l).count(),
            ap: pr.ap,
            roc_auc: roc.auc,
            prevalence: prev,
            enrichment_at_recall,
            weighted_precision_at,
            rmse: None,
        };
        Ok((report, pr, roc))
    }
}
