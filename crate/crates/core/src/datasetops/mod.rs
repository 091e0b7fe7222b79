//! Dataset reduction by hardness and batch composition.
//!
//! Samplers work on [`SetMeta`] records, so batches can be drawn without
//! decoding any patch pixels. A batch is a list of [`BatchItem`]s that name
//! a dataset, view, set and patch index; consecutive runs of
//! `positives_per_set` items share a label.

mod compose;
mod reduce;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::types::{Keypoint, PatchSet};

pub use compose::{
    compose_multi, BatchSource, ComposeSpec, ComposeStrategy, Composer, DatasetSource,
};
pub use reduce::{reduce_dataset, ReductionMode, Selection, SetHardness};
pub use sampling::{
    group_views, sample_batch, sample_batch_image_pairs, sample_batch_no_collisions,
    sample_batch_uniform, BatchSpec, ImagePairSampler, SamplingStrategy,
};

/// What the samplers need to know about a patch set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMeta {
    pub label: u64,
    pub view_id: u64,
    pub n_patches: usize,
    pub keypoint: Keypoint,
}

impl From<&PatchSet> for SetMeta {
    fn from(set: &PatchSet) -> Self {
        Self {
            label: set.label,
            view_id: set.view_id,
            n_patches: set.len(),
            keypoint: set.source_keypoint,
        }
    }
}

/// One patch of a batch. `view` and `set` index into the source's view list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub dataset: usize,
    pub view: usize,
    pub set: usize,
    pub label: u64,
    pub patch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampledBatch {
    pub items: Vec<BatchItem>,
    /// Set when the pool ran out before the batch was full.
    pub short: bool,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
