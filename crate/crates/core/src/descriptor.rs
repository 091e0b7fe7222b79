//! Patch descriptors. [`BaselineDescriptor`] is a small handcrafted
//! descriptor for running the pipeline without a trained network; learned
//! descriptors plug in through embedding files instead.

use rayon::prelude::*;

use crate::types::{EmbeddingMatrix, Patch};
use crate::{Error, Result};

/// Standard deviations at or below this map a patch to zeros.
pub const STD_EPS: f64 = 1e-8;

/// Shifts and scales a patch to zero mean and unit population std.
pub fn normalize_patch(p: &Patch) -> Patch {
    let n = p.data().len() as f64;
    let mean = p.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = p
        .data()
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let data = if std <= STD_EPS {
        vec![0.0; p.data().len()]
    } else {
        p.data()
            .iter()
            .map(|&v| ((f64::from(v) - mean) / std) as f32)
            .collect()
    };
    Patch::new(p.side(), data).expect("same side and finite values")
}

pub trait Descriptor: Sync {
    fn dim(&self) -> usize;
    fn describe(&self, p: &Patch) -> Result<Vec<f32>>;
}

/// 128 values for a 32×32 patch: 8×8 means of 4×4 pixel blocks of the
/// normalized patch, then 4-bin gradient orientation histograms over a 4×4
/// grid of 8×8 cells. Each half is L2-normalized before the whole vector is.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineDescriptor;

impl BaselineDescriptor {
    pub const SIDE: usize = 32;
    pub const DIM: usize = 128;
}

fn l2_normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > STD_EPS {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

impl Descriptor for BaselineDescriptor {
    fn dim(&self) -> usize {
        Self::DIM
    }

    fn describe(&self, p: &Patch) -> Result<Vec<f32>> {
        const S: usize = BaselineDescriptor::SIDE;
        if p.side() != S {
            return Err(Error::InvalidArgument(format!(
                "baseline descriptor needs {S}x{S} patches, got side {}",
                p.side()
            )));
        }
        let q = normalize_patch(p);
        let px = |x: usize, y: usize| f64::from(q.get(x, y));

        let mut pooled = vec![0.0f64; 64];
        for y in 0..S {
            for x in 0..S {
                pooled[(y / 4) * 8 + x / 4] += px(x, y) / 16.0;
            }
        }

        let mut hist = vec![0.0f64; 64];
        for y in 0..S {
            for x in 0..S {
                let gx = (px((x + 1).min(S - 1), y) - px(x.saturating_sub(1), y)) / 2.0;
                let gy = (px(x, (y + 1).min(S - 1)) - px(x, y.saturating_sub(1))) / 2.0;
                let mag = gx.hypot(gy);
                if mag == 0.0 {
                    continue;
                }
                let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let bin = ((angle / std::f64::consts::FRAC_PI_2) as usize).min(3);
                hist[((y / 8) * 4 + x / 8) * 4 + bin] += mag;
            }
        }

        l2_normalize(&mut pooled);
        l2_normalize(&mut hist);
        let mut out: Vec<f64> = pooled.into_iter().chain(hist).collect();
        l2_normalize(&mut out);
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}

/// Describes patches in parallel; row `i` belongs to patch `i`.
pub fn describe_batch(patches: &[Patch], descriptor: &dyn Descriptor) -> Result<EmbeddingMatrix> {
    let rows = patches
        .par_iter()
        .map(|p| descriptor.describe(p))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingMatrix::from_rows(descriptor.dim(), &rows)
}
