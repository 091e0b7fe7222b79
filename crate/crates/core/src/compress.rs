//! PCA compression of embeddings.
//!
//! Model files start with `PCA1`, then `d` and `k` as little-endian u32,
//! the mean (`d` f64) and the components (`k·d` f64, row-major).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::types::EmbeddingMatrix;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PCA1";
/// Rows with a smaller projected norm come back as zeros.
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    d: usize,
    k: usize,
    mean: Vec<f64>,
    /// `k` rows of length `d`, by descending explained variance.
    components: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub model: PcaModel,
    /// Eigenvalues of the kept components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

impl PcaModel {
    pub fn new(d: usize, k: usize, mean: Vec<f64>, components: Vec<f64>) -> Result<Self> {
        if k == 0 || k > d || mean.len() != d || components.len() != k * d {
            return Err(Error::DimensionMismatch(format!(
                "PCA model d={d} k={k} with {} mean and {} component values",
                mean.len(),
                components.len()
            )));
        }
        if mean.iter().chain(&components).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "PCA model contains non-finite values".into(),
            ));
        }
        Ok(Self {
            d,
            k,
            mean,
            components,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn output_dim(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.d..(i + 1) * self.d]
    }

    /// Coordinates of `x - mean` along each component.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (v, m))| c * (v - m))
                    .sum()
            })
            .collect()
    }

    /// `mean + Σ y_i · component_i`.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (i, &yi) in y.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.component(i)) {
                *o += yi * c;
            }
        }
        out
    }
}

/// Fits `k` principal components to the rows of `x` (`n > d` rows needed).
///
/// Each component is flipped so its largest-magnitude coordinate is
/// positive, preferring the lower index on ties.
pub fn pca_fit(x: &EmbeddingMatrix, k: usize) -> Result<PcaFit> {
    let (n, d) = (x.rows(), x.cols());
    if n <= d {
        return Err(Error::Insufficient(format!(
            "PCA needs more rows than columns, got {n}x{d}"
        )));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {k} of {d} components"
        )));
    }
    let mut mean = vec![0.0f64; d];
    for row in x.iter_rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in x.iter_rows() {
        for (c, (&v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = f64::from(v) - m;
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let total_variance = cov.trace();

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(k * d);
    let mut explained_variance = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let pivot = (0..d).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(v);
        explained_variance.push(eig.eigenvalues[c]);
    }
    Ok(PcaFit {
        model: PcaModel::new(d, k, mean, components)?,
        explained_variance,
        total_variance,
    })
}

/// Projects rows onto the model's components, optionally rescaling each
/// output row to unit length.
pub fn pca_apply(m: &PcaModel, x: &EmbeddingMatrix, renormalize: bool) -> Result<EmbeddingMatrix> {
    if x.cols() != m.d {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} columns, got {}",
            m.d,
            x.cols()
        )));
    }
    let rows: Vec<Vec<f32>> = (0..x.rows())
        .into_par_iter()
        .map(|r| {
            let xr: Vec<f64> = x.row(r).iter().map(|&v| f64::from(v)).collect();
            let mut y = m.project(&xr);
            if renormalize {
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm <= ZERO_NORM {
                    y.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    y.iter_mut().for_each(|v| *v /= norm);
                }
            }
            y.into_iter().map(|v| v as f32).collect()
        })
        .collect();
    EmbeddingMatrix::from_rows(m.k, &rows)
}

pub fn encode_model(m: &PcaModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * (m.d + m.k * m.d));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.d as u32).to_le_bytes());
    out.extend_from_slice(&(m.k as u32).to_le_bytes());
    for v in m.mean.iter().chain(&m.components) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<PcaModel> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a PCA1 model".into()));
    }
    let d = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let k = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let expected = d
        .checked_add(
            k.checked_mul(d)
                .ok_or_else(|| Error::Format("model size overflows".into()))?,
        )
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::Format("model size overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "PCA1 d={d} k={k} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let (mean, components) = vals.split_at(d);
    PcaModel::new(d, k, mean.to_vec(), components.to_vec())
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_model(m: &PcaModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(m)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<PcaModel> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
