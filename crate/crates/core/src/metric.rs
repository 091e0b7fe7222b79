//! Distances, hard-in-batch triplet margin losses and hardness scores.
//!
//! Distances are Euclidean with a constant `1e-8` added under the square
//! root, computed from the Gram expansion `|a|^2 + |b|^2 - 2<a, b>` in f64.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::types::EmbeddingMatrix;
use crate::{Error, Result};

/// Added under the square root of every distance.
pub const DISTANCE_EPS: f64 = 1e-8;

/// Dense row-major distance table.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn distance_matrix(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<DistanceMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "embedding widths differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let bn: Vec<f64> = (0..b.rows()).map(|j| sq_norm(b.row(j))).collect();
    let data: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let ai = a.row(i);
            let an = sq_norm(ai);
            let bn = &bn;
            (0..b.rows()).map(move |j| {
                let sq = (an + bn[j] - 2.0 * dot(ai, b.row(j))).max(0.0);
                (sq + DISTANCE_EPS).sqrt()
            })
        })
        .collect();
    Ok(DistanceMatrix {
        rows: a.rows(),
        cols: b.rows(),
        data,
    })
}

/// Anchors `a[i]` and positives `b[i]` of a batch of corresponding pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub a: EmbeddingMatrix,
    pub b: EmbeddingMatrix,
}

impl BatchEmbeddings {
    pub fn new(a: EmbeddingMatrix, b: EmbeddingMatrix) -> Result<Self> {
        if a.rows() != b.rows() || a.cols() != b.cols() {
            return Err(Error::DimensionMismatch(format!(
                "anchors {}x{} vs positives {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.rows() == 0
    }

    /// Stacks `[a; b]` with pair index `i` as the label of rows `i` and `n + i`.
    pub fn to_labeled(&self) -> Result<LabeledEmbeddings> {
        let n = self.len() as u64;
        let labels = (0..n).chain(0..n).collect();
        LabeledEmbeddings::new(self.a.stack(&self.b)?, labels)
    }
}

/// Embeddings with one label per row; equal labels mark corresponding patches.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    pub e: EmbeddingMatrix,
    pub labels: Vec<u64>,
}

impl LabeledEmbeddings {
    pub fn new(e: EmbeddingMatrix, labels: Vec<u64>) -> Result<Self> {
        if labels.len() != e.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} embeddings",
                labels.len(),
                e.rows()
            )));
        }
        Ok(Self { e, labels })
    }
}

/// Loss value with its per-term breakdown.
///
/// For the pairwise loss there is one entry per anchor; for the generalized
/// loss one entry per unique label (ascending), listed in `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub per_anchor: Vec<f64>,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
    pub labels: Vec<u64>,
}

struct HardestNegatives {
    d_pos: Vec<f64>,
    d_neg: Vec<f64>,
}

/// For each pair, the positive distance and `min(d_neg1, d_neg2)`.
fn hardest_negatives(batch: &BatchEmbeddings) -> Result<HardestNegatives> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::NoNegatives(n));
    }
    let d = distance_matrix(&batch.a, &batch.b)?;
    let mut d_pos = Vec::with_capacity(n);
    let mut d_neg = Vec::with_capacity(n);
    for i in 0..n {
        let mut neg = f64::INFINITY;
        for j in (0..n).filter(|&j| j != i) {
            // d(a_i, b_j) and d(a_j, b_i)
            neg = neg.min(d.get(i, j)).min(d.get(j, i));
        }
        d_pos.push(d.get(i, i));
        d_neg.push(neg);
    }
    Ok(HardestNegatives { d_pos, d_neg })
}

/// Hard-in-batch triplet margin loss, averaged over anchors.
///
/// Per pair `i`: `max(0, margin + d(a_i, b_i) - min(d_neg1, d_neg2))` where
/// `d_neg1 = min_{j != i} d(a_i, b_j)` and `d_neg2 = min_{j != i} d(a_j, b_i)`.
/// Anchor-anchor and positive-positive distances are not negatives.
pub fn hard_triplet_loss(batch: &BatchEmbeddings, margin: f64) -> Result<LossReport> {
    let h = hardest_negatives(batch)?;
    let per_anchor: Vec<f64> = h
        .d_pos
        .iter()
        .zip(&h.d_neg)
        .map(|(p, n)| (margin + p - n).max(0.0))
        .collect();
    let total = per_anchor.iter().sum::<f64>() / per_anchor.len() as f64;
    Ok(LossReport {
        total,
        per_anchor,
        d_pos: h.d_pos,
        d_neg: h.d_neg,
        labels: (0..batch.len() as u64).collect(),
    })
}

/// Generalized loss over labeled embeddings, summed over unique labels.
///
/// Per label `l`: `d_pos` is the largest distance between two distinct
/// members (0 for a single member), `d_neg` the smallest distance from a
/// member to any row with another label.
pub fn generalized_loss(batch: &LabeledEmbeddings, margin: f64) -> Result<LossReport> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in batch.labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "generalized loss needs at least 2 distinct labels, got {}",
            groups.len()
        )));
    }
    let d = distance_matrix(&batch.e, &batch.e)?;
    let mut report = LossReport {
        total: 0.0,
        per_anchor: Vec::with_capacity(groups.len()),
        d_pos: Vec::with_capacity(groups.len()),
        d_neg: Vec::with_capacity(groups.len()),
        labels: Vec::with_capacity(groups.len()),
    };
    for (&label, members) in &groups {
        let mut pos = 0.0f64;
        let mut neg = f64::INFINITY;
        for &i in members {
            for j in 0..batch.labels.len() {
                if j == i {
                    continue;
                }
                if batch.labels[j] == label {
                    pos = pos.max(d.get(i, j));
                } else {
                    neg = neg.min(d.get(i, j));
                }
            }
        }
        let term = (margin + pos - neg).max(0.0);
        report.total += term;
        report.per_anchor.push(term);
        report.d_pos.push(pos);
        report.d_neg.push(neg);
        report.labels.push(label);
    }
    Ok(report)
}

/// Hardness `e_i = d(a_i, b_i) - min(d_neg1, d_neg2)`; negative for easy pairs.
pub fn hardness_scores(batch: &BatchEmbeddings) -> Result<Vec<f64>> {
    let h = hardest_negatives(batch)?;
    Ok(h.d_pos.iter().zip(&h.d_neg).map(|(p, n)| p - n).collect())
}
