//! Descriptor evaluation metrics: FPR95, average precision for the
//! verification, matching and retrieval tasks, and mean average accuracy
//! over pose errors.
//!
//! Rankings sort by descending score; equal scores keep their input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metric::distance_matrix;
use crate::types::EmbeddingMatrix;
use crate::{Error, Result};

/// Scores (higher = more likely positive) with ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl RankedQuery {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores and {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidArgument("scores contain NaN".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Indices by descending score, ties in index order.
    fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// False positive rate of the shortest score prefix reaching 95% recall.
/// Samples with equal scores enter the prefix together.
pub fn fpr95(q: &RankedQuery) -> Result<f64> {
    let p = q.positives();
    let n = q.labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "FPR95 needs positives and negatives, got {p} and {n}"
        )));
    }
    let order = q.ranking();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = q.scores[order[i]];
        while i < order.len() && q.scores[order[i]] == s {
            if q.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // tp / p >= 0.95 without rounding
        if 20 * tp >= 19 * p {
            break;
        }
    }
    Ok(fp as f64 / n as f64)
}

/// Mean over positives of the precision at each positive's rank.
pub fn average_precision(q: &RankedQuery) -> Result<f64> {
    let p = q.positives();
    if p == 0 {
        return Err(Error::InvalidArgument(
            "average precision needs a positive".into(),
        ));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in q.ranking().iter().enumerate() {
        if q.labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / p as f64)
}

/// AP of one global ranking of scored patch pairs.
pub fn verification_ap(scores: &[f64], labels: &[bool]) -> Result<f64> {
    average_precision(&RankedQuery::new(scores.to_vec(), labels.to_vec())?)
}

/// Mean AP over queries, each with its own pool of positives and negatives.
pub fn retrieval_map(queries: &[RankedQuery]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let aps = queries
        .par_iter()
        .map(average_precision)
        .collect::<Result<Vec<f64>>>()?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Per-query APs for matching: reference row `i` ranks all target rows by
/// ascending distance, and only target `gt[i]` is correct.
pub fn matching_aps(
    desc_ref: &EmbeddingMatrix,
    desc_tgt: &EmbeddingMatrix,
    gt: &[usize],
) -> Result<Vec<f64>> {
    if desc_ref.rows() != desc_tgt.rows() || gt.len() != desc_ref.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} reference rows, {} target rows, {} ground-truth entries",
            desc_ref.rows(),
            desc_tgt.rows(),
            gt.len()
        )));
    }
    if let Some(&bad) = gt.iter().find(|&&g| g >= desc_tgt.rows()) {
        return Err(Error::OutOfBounds(format!(
            "ground-truth index {bad} of {}",
            desc_tgt.rows()
        )));
    }
    if gt.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let d = distance_matrix(desc_ref, desc_tgt)?;
    (0..gt.len())
        .into_par_iter()
        .map(|i| {
            let scores = d.row(i).iter().map(|v| -v).collect();
            let labels = (0..d.cols()).map(|j| j == gt[i]).collect();
            average_precision(&RankedQuery::new(scores, labels)?)
        })
        .collect()
}

pub fn matching_map(
    desc_ref: &EmbeddingMatrix,
    desc_tgt: &EmbeddingMatrix,
    gt: &[usize],
) -> Result<f64> {
    let aps = matching_aps(desc_ref, desc_tgt, gt)?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Mean over thresholds `step, 2·step, …, max_deg` of the fraction of
/// errors at or below the threshold.
pub fn maa(errors: &[f64], max_deg: f64, step_deg: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no pose errors".into()));
    }
    if !(max_deg > 0.0 && step_deg > 0.0 && max_deg.is_finite() && step_deg.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "max_deg {max_deg} and step {step_deg} must be positive"
        )));
    }
    if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::InvalidArgument(
            "pose errors must be finite and non-negative".into(),
        ));
    }
    let steps = (max_deg / step_deg + 1e-9).floor() as usize;
    if steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "step {step_deg} exceeds max {max_deg}"
        )));
    }
    let mut total = 0.0;
    for i in 1..=steps {
        let t = i as f64 * step_deg;
        total += errors.iter().filter(|&&e| e <= t).count() as f64 / errors.len() as f64;
    }
    Ok(total / steps as f64)
}
