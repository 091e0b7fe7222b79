use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{BatchItem, SampledBatch, SetMeta};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    Uniform,
    ImagePairs,
    NoCollisions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    /// Patches per batch.
    pub batch_size: usize,
    pub positives_per_set: usize,
    pub n_source_views: usize,
    pub strategy: SamplingStrategy,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            positives_per_set: 2,
            n_source_views: 1,
            strategy: SamplingStrategy::Uniform,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.positives_per_set < 2 {
            return Err(Error::InvalidArgument(format!(
                "positives_per_set must be at least 2, got {}",
                self.positives_per_set
            )));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.positives_per_set) {
            return Err(Error::InvalidArgument(format!(
                "batch_size {} is not a positive multiple of positives_per_set {}",
                self.batch_size, self.positives_per_set
            )));
        }
        if self.n_source_views == 0 {
            return Err(Error::InvalidArgument(
                "n_source_views must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn sets_per_batch(&self) -> usize {
        self.batch_size / self.positives_per_set
    }
}

/// Groups sets by `view_id` (ascending), keeping input order within a view.
pub fn group_views(sets: Vec<SetMeta>) -> Vec<Vec<SetMeta>> {
    let mut map: BTreeMap<u64, Vec<SetMeta>> = BTreeMap::new();
    for s in sets {
        map.entry(s.view_id).or_default().push(s);
    }
    map.into_values().collect()
}

fn usable_sets(view: &[SetMeta], pps: usize) -> Vec<usize> {
    (0..view.len())
        .filter(|&s| view[s].n_patches >= pps)
        .collect()
}

/// Draws `n_source_views` distinct views among those with a usable set,
/// returned in ascending order.
fn choose_views(views: &[Vec<SetMeta>], spec: &BatchSpec, rng: &mut Rng) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..views.len())
        .filter(|&v| !usable_sets(&views[v], spec.positives_per_set).is_empty())
        .collect();
    if spec.n_source_views > eligible.len() {
        return Err(Error::Insufficient(format!(
            "{} source views requested but only {} views have sets with {} patches",
            spec.n_source_views,
            eligible.len(),
            spec.positives_per_set
        )));
    }
    let mut chosen: Vec<usize> = index::sample(rng, eligible.len(), spec.n_source_views)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen)
}

fn push_set(
    items: &mut Vec<BatchItem>,
    views: &[Vec<SetMeta>],
    v: usize,
    s: usize,
    patches: &[usize],
) {
    let label = views[v][s].label;
    items.extend(patches.iter().map(|&patch| BatchItem {
        dataset: 0,
        view: v,
        set: s,
        label,
        patch,
    }));
}

/// Picks views, then repeatedly a view, an unused set in it and distinct
/// patches of that set, all uniformly.
pub fn sample_batch_uniform(
    views: &[Vec<SetMeta>],
    spec: &BatchSpec,
    rng: &mut Rng,
) -> Result<SampledBatch> {
    spec.validate()?;
    let pps = spec.positives_per_set;
    let chosen = choose_views(views, spec, rng)?;
    let mut remaining: Vec<Vec<usize>> = chosen
        .iter()
        .map(|&v| usable_sets(&views[v], pps))
        .collect();
    let available: usize = remaining.iter().map(Vec::len).sum();
    if available < spec.sets_per_batch() {
        return Err(Error::Insufficient(format!(
            "chosen views hold {available} sets, batch needs {}",
            spec.sets_per_batch()
        )));
    }
    let mut items = Vec::with_capacity(spec.batch_size);
    for _ in 0..spec.sets_per_batch() {
        let active: Vec<usize> = (0..chosen.len())
            .filter(|&c| !remaining[c].is_empty())
            .collect();
        let c = active[rng.random_range(0..active.len())];
        let pick = rng.random_range(0..remaining[c].len());
        let s = remaining[c].swap_remove(pick);
        let v = chosen[c];
        let patches = index::sample(rng, views[v][s].n_patches, pps).into_vec();
        push_set(&mut items, views, v, s, &patches);
    }
    Ok(SampledBatch {
        items,
        short: false,
    })
}

/// Walks the views in order, drawing one image tuple per visit and emitting
/// the view's sets (shuffled) with the patches of those images. State
/// carries over between batches, wrapping after the last view.
#[derive(Debug, Clone, Default)]
pub struct ImagePairSampler {
    view: Option<usize>,
    order: Vec<usize>,
    pos: usize,
    images: Vec<usize>,
}

/// Images seen by every set of the view, or 0 for an empty view.
fn view_images(view: &[SetMeta]) -> usize {
    view.iter().map(|s| s.n_patches).min().unwrap_or(0)
}

impl ImagePairSampler {
    pub fn new() -> Self {
        Self::default()
    }

    fn enter_next_view(&mut self, views: &[Vec<SetMeta>], pps: usize, rng: &mut Rng) {
        let start = self.view.map_or(0, |v| v + 1);
        let v = (0..views.len())
            .map(|k| (start + k) % views.len())
            .find(|&v| view_images(&views[v]) >= pps)
            .expect("caller checked that a usable view exists");
        self.view = Some(v);
        self.order = (0..views[v].len()).collect();
        self.order.shuffle(rng);
        self.pos = 0;
        self.images = index::sample(rng, view_images(&views[v]), pps).into_vec();
        self.images.sort_unstable();
    }

    pub fn next_batch(
        &mut self,
        views: &[Vec<SetMeta>],
        spec: &BatchSpec,
        rng: &mut Rng,
    ) -> Result<SampledBatch> {
        spec.validate()?;
        let pps = spec.positives_per_set;
        let total: usize = views
            .iter()
            .filter(|v| view_images(v) >= pps)
            .map(Vec::len)
            .sum();
        if total < spec.sets_per_batch() {
            return Err(Error::Insufficient(format!(
                "{total} sets in views with {pps} images, batch needs {}",
                spec.sets_per_batch()
            )));
        }
        let mut used = HashSet::new();
        let mut items = Vec::with_capacity(spec.batch_size);
        while items.len() < spec.batch_size {
            if self.view.is_none() || self.pos >= self.order.len() {
                self.enter_next_view(views, pps, rng);
            }
            let v = self.view.expect("set above");
            let s = self.order[self.pos];
            self.pos += 1;
            // a wrap-around within one batch can revisit a set
            if !used.insert((v, s)) {
                continue;
            }
            push_set(&mut items, views, v, s, &self.images);
        }
        Ok(SampledBatch {
            items,
            short: false,
        })
    }
}

/// One batch from a fresh [`ImagePairSampler`], starting at the first view.
pub fn sample_batch_image_pairs(
    views: &[Vec<SetMeta>],
    spec: &BatchSpec,
    rng: &mut Rng,
) -> Result<SampledBatch> {
    ImagePairSampler::new().next_batch(views, spec, rng)
}

fn boxes_overlap(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.2.min(b.2) - a.0.max(b.0) > 0.0 && a.3.min(b.3) - a.1.max(b.1) > 0.0
}

/// Pools the sets of `n_source_views` random views and draws sets at
/// random, discarding every pooled set whose keypoint box overlaps an
/// accepted one. Returns a short batch, flagged, if the pool runs dry.
pub fn sample_batch_no_collisions(
    views: &[Vec<SetMeta>],
    spec: &BatchSpec,
    rng: &mut Rng,
) -> Result<SampledBatch> {
    spec.validate()?;
    let pps = spec.positives_per_set;
    let chosen = choose_views(views, spec, rng)?;
    let mut pool: Vec<(usize, usize)> = chosen
        .iter()
        .flat_map(|&v| usable_sets(&views[v], pps).into_iter().map(move |s| (v, s)))
        .collect();
    let mut items = Vec::with_capacity(spec.batch_size);
    while items.len() < spec.batch_size && !pool.is_empty() {
        let (v, s) = pool.swap_remove(rng.random_range(0..pool.len()));
        let accepted = views[v][s].keypoint.support_box();
        pool.retain(|&(v2, s2)| !boxes_overlap(accepted, views[v2][s2].keypoint.support_box()));
        let patches = index::sample(rng, views[v][s].n_patches, pps).into_vec();
        push_set(&mut items, views, v, s, &patches);
    }
    let short = items.len() < spec.batch_size;
    if short {
        log::warn!(
            "collision-free pool exhausted: {} of {} patches",
            items.len(),
            spec.batch_size
        );
    }
    Ok(SampledBatch { items, short })
}

/// Dispatches on `spec.strategy`; image pairs start from the first view.
pub fn sample_batch(
    views: &[Vec<SetMeta>],
    spec: &BatchSpec,
    rng: &mut Rng,
) -> Result<SampledBatch> {
    match spec.strategy {
        SamplingStrategy::Uniform => sample_batch_uniform(views, spec, rng),
        SamplingStrategy::ImagePairs => sample_batch_image_pairs(views, spec, rng),
        SamplingStrategy::NoCollisions => sample_batch_no_collisions(views, spec, rng),
    }
}
