use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Rng};

/// Mean hardness of one patch set over training, with its patch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetHardness {
    pub label: u64,
    pub mean_e: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionMode {
    /// Closest to the dataset-wide mean hardness first.
    Medium,
    /// Easiest first.
    Low,
    /// Hardest first.
    High,
}

/// A kept set. `indices` lists the kept patch indices when only part of
/// the set fits, `None` when the whole set is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub label: u64,
    pub count: usize,
    pub indices: Option<Vec<usize>>,
}

/// Keeps at most `target` patches, taking whole sets in hardness order and
/// filling the remainder with random patches (without replacement) from the
/// first set that does not fit.
pub fn reduce_dataset(
    h: &[SetHardness],
    target: usize,
    mode: ReductionMode,
    rng: &mut Rng,
) -> Result<Vec<Selection>> {
    if target == 0 {
        return Err(Error::InvalidArgument(
            "target patch count must be at least 1".into(),
        ));
    }
    for s in h {
        if s.count == 0 || !s.mean_e.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "set {} has count {} and mean hardness {}",
                s.label, s.count, s.mean_e
            )));
        }
    }
    let mut order: Vec<&SetHardness> = h.iter().collect();
    match mode {
        ReductionMode::Medium => {
            let mean = h.iter().map(|s| s.mean_e).sum::<f64>() / h.len().max(1) as f64;
            order.sort_by(|a, b| {
                (a.mean_e - mean)
                    .abs()
                    .total_cmp(&(b.mean_e - mean).abs())
                    .then(a.label.cmp(&b.label))
            });
        }
        ReductionMode::Low => {
            order.sort_by(|a, b| a.mean_e.total_cmp(&b.mean_e).then(a.label.cmp(&b.label)))
        }
        ReductionMode::High => {
            order.sort_by(|a, b| b.mean_e.total_cmp(&a.mean_e).then(a.label.cmp(&b.label)))
        }
    }

    let mut out = Vec::new();
    let mut total = 0usize;
    for s in order {
        if total + s.count <= target {
            total += s.count;
            out.push(Selection {
                label: s.label,
                count: s.count,
                indices: None,
            });
            continue;
        }
        let rest = target - total;
        if rest > 0 {
            let mut idx = index::sample(rng, s.count, rest).into_vec();
            idx.sort_unstable();
            out.push(Selection {
                label: s.label,
                count: rest,
                indices: Some(idx),
            });
        }
        break;
    }
    Ok(out)
}
