use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use super::sampling::{sample_batch, BatchSpec, ImagePairSampler, SamplingStrategy};
use super::{SampledBatch, SetMeta};
use crate::{Error, Result, Rng};

/// Anything that can produce a batch of a requested number of patches.
pub trait BatchSource {
    fn next_batch(&mut self, n_patches: usize) -> Result<SampledBatch>;
}

/// One dataset's views sampled with its own strategy and RNG stream.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    views: Vec<Vec<SetMeta>>,
    spec: BatchSpec,
    rng: Rng,
    pairs: ImagePairSampler,
}

impl DatasetSource {
    pub fn new(views: Vec<Vec<SetMeta>>, spec: BatchSpec, rng: Rng) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            views,
            spec,
            rng,
            pairs: ImagePairSampler::new(),
        })
    }

    pub fn views(&self) -> &[Vec<SetMeta>] {
        &self.views
    }
}

impl BatchSource for DatasetSource {
    fn next_batch(&mut self, n_patches: usize) -> Result<SampledBatch> {
        let spec = BatchSpec {
            batch_size: n_patches,
            ..self.spec.clone()
        };
        match spec.strategy {
            SamplingStrategy::ImagePairs => {
                self.pairs.next_batch(&self.views, &spec, &mut self.rng)
            }
            _ => sample_batch(&self.views, &spec, &mut self.rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComposeStrategy {
    /// Each epoch is split into contiguous runs, one per dataset, in order.
    PerEpoch,
    /// Every batch comes from one dataset drawn by weight.
    PerBatch,
    /// Every batch holds one contiguous block per dataset, in order.
    InBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeSpec {
    pub strategy: ComposeStrategy,
    pub batch_size: usize,
    pub positives_per_set: usize,
    pub batches_per_epoch: usize,
    /// Per-dataset probabilities for `PerBatch`; uniform when `None`.
    pub weights: Option<Vec<f64>>,
}

/// Endless stream of batches drawn from several sources.
pub struct Composer {
    sources: Vec<Box<dyn BatchSource + Send>>,
    spec: ComposeSpec,
    picker: Option<WeightedIndex<f64>>,
    rng: Rng,
    produced: usize,
}

impl std::fmt::Debug for Composer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Composer")
            .field("datasets", &self.sources.len())
            .field("spec", &self.spec)
            .field("produced", &self.produced)
            .finish()
    }
}

pub fn compose_multi(
    sources: Vec<Box<dyn BatchSource + Send>>,
    spec: ComposeSpec,
    rng: Rng,
) -> Result<Composer> {
    Composer::new(sources, spec, rng)
}

impl Composer {
    pub fn new(
        sources: Vec<Box<dyn BatchSource + Send>>,
        spec: ComposeSpec,
        rng: Rng,
    ) -> Result<Self> {
        let d = sources.len();
        if d == 0 {
            return Err(Error::InvalidArgument("no datasets to compose".into()));
        }
        let pps = spec.positives_per_set;
        if pps < 2 || spec.batch_size == 0 || !spec.batch_size.is_multiple_of(pps) {
            return Err(Error::InvalidArgument(format!(
                "batch_size {} must be a positive multiple of positives_per_set {} (>= 2)",
                spec.batch_size, pps
            )));
        }
        if spec.strategy == ComposeStrategy::PerEpoch && spec.batches_per_epoch == 0 {
            return Err(Error::InvalidArgument(
                "batches_per_epoch must be at least 1".into(),
            ));
        }
        if spec.strategy == ComposeStrategy::InBatch && block_base(spec.batch_size, d, pps) == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch of {} patches cannot hold {d} blocks of {pps}",
                spec.batch_size
            )));
        }
        let picker = match &spec.weights {
            Some(w) => {
                if w.len() != d {
                    return Err(Error::InvalidArgument(format!(
                        "{} weights for {d} datasets",
                        w.len()
                    )));
                }
                let sum: f64 = w.iter().sum();
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidArgument(format!(
                        "weights {w:?} must be non-negative and sum to 1"
                    )));
                }
                Some(WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            }
            None => None,
        };
        Ok(Self {
            sources,
            spec,
            picker,
            rng,
            produced: 0,
        })
    }

    pub fn n_datasets(&self) -> usize {
        self.sources.len()
    }

    /// Block sizes of an in-batch composition, in dataset order.
    pub fn block_sizes(&self) -> Vec<usize> {
        in_batch_blocks(
            self.spec.batch_size,
            self.sources.len(),
            self.spec.positives_per_set,
        )
    }

    fn tagged(&mut self, d: usize, n: usize) -> Result<SampledBatch> {
        let mut b = self.sources[d].next_batch(n)?;
        for item in &mut b.items {
            item.dataset = d;
        }
        Ok(b)
    }

    pub fn next_batch(&mut self) -> Result<SampledBatch> {
        let d = self.sources.len();
        let b = self.produced;
        self.produced += 1;
        let bs = self.spec.batch_size;
        match self.spec.strategy {
            ComposeStrategy::PerEpoch => {
                let pos = b % self.spec.batches_per_epoch;
                self.tagged(pos * d / self.spec.batches_per_epoch, bs)
            }
            ComposeStrategy::PerBatch => {
                let pick = if d == 1 {
                    0
                } else if let Some(w) = &self.picker {
                    w.sample(&mut self.rng)
                } else {
                    rand::Rng::random_range(&mut self.rng, 0..d)
                };
                self.tagged(pick, bs)
            }
            ComposeStrategy::InBatch => {
                let mut out = SampledBatch::default();
                for (k, n) in self.block_sizes().into_iter().enumerate() {
                    let part = self.tagged(k, n)?;
                    out.short |= part.short;
                    out.items.extend(part.items);
                }
                Ok(out)
            }
        }
    }
}

fn block_base(batch_size: usize, d: usize, pps: usize) -> usize {
    batch_size / d / pps * pps
}

/// `floor(batch_size / d)` rounded down to whole sets; the last block takes
/// the remainder.
fn in_batch_blocks(batch_size: usize, d: usize, pps: usize) -> Vec<usize> {
    let base = block_base(batch_size, d, pps);
    let mut blocks = vec![base; d];
    blocks[d - 1] = batch_size - base * (d - 1);
    blocks
}

impl Iterator for Composer {
    type Item = Result<SampledBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}
