//! Camera and image selection for building patch datasets from webcams.
//!
//! Learned predicates (sky segmentation, moving-object detection) and the
//! image matcher are external; their results come in as plain values.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::types::Image;
use crate::{Error, Result, Rng};

/// Images sampled per camera.
pub const CAMERA_SAMPLES: usize = 20;
/// Passing images needed to keep a camera.
pub const MIN_PASSING: usize = 14;
pub const MIN_LAPLACIAN_VARIANCE: f64 = 180.0;
pub const MIN_MEAN_INTENSITY: f64 = 30.0;
pub const MIN_SIDE: usize = 700;
pub const MAX_SKY_FRACTION: f64 = 0.5;
pub const MIN_INLIERS: u32 = 50;
pub const MAX_IDENTITY_SAD: f64 = 50.0;
pub const MAIN_VIEW_SIZE: usize = 50;
pub const DEFAULT_CLUSTERS: usize = 120;

/// Results of the external predicates for one image. Defaults let every
/// image pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalSignals {
    pub sky_fraction: f64,
    pub dynamic_objects: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterFlags {
    /// Less than half the image is sky.
    pub f1_sky: bool,
    /// No moving objects.
    pub f2_static: bool,
    /// Laplacian variance at least 180.
    pub f3_sharp: bool,
    /// Mean intensity above 30.
    pub f4_bright: bool,
    /// Both sides longer than 700 pixels.
    pub f5_large: bool,
}

impl FilterFlags {
    pub fn passed(&self) -> bool {
        self.f1_sky && self.f2_static && self.f3_sharp && self.f4_bright && self.f5_large
    }
}

/// Population variance of the 4-neighbour Laplacian over interior pixels,
/// on 0–255 intensities. Images without interior pixels give 0.
pub fn laplacian_variance(img: &Image) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let px = |x: usize, y: usize| f64::from(img.get(x, y)) * 255.0;
    let rows: Vec<(f64, f64)> = (1..h - 1)
        .into_par_iter()
        .map(|y| {
            let (mut s, mut s2) = (0.0, 0.0);
            for x in 1..w - 1 {
                let l = px(x, y - 1) + px(x - 1, y) + px(x + 1, y) + px(x, y + 1) - 4.0 * px(x, y);
                s += l;
                s2 += l * l;
            }
            (s, s2)
        })
        .collect();
    let n = ((w - 2) * (h - 2)) as f64;
    let (s, s2) = rows.iter().fold((0.0, 0.0), |a, r| (a.0 + r.0, a.1 + r.1));
    let mean = s / n;
    (s2 / n - mean * mean).max(0.0)
}

pub fn mean_intensity(img: &Image) -> f64 {
    img.data().iter().map(|&v| f64::from(v)).sum::<f64>() / img.data().len() as f64 * 255.0
}

pub fn image_filters(img: &Image, ext: &ExternalSignals) -> FilterFlags {
    FilterFlags {
        f1_sky: ext.sky_fraction < MAX_SKY_FRACTION,
        f2_static: !ext.dynamic_objects,
        f3_sharp: laplacian_variance(img) >= MIN_LAPLACIAN_VARIANCE,
        f4_bright: mean_intensity(img) > MIN_MEAN_INTENSITY,
        f5_large: img.width() > MIN_SIDE && img.height() > MIN_SIDE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraReport {
    pub camera: String,
    pub flags: Vec<FilterFlags>,
    pub passed: usize,
    pub kept: bool,
    pub reason: Option<String>,
}

/// Keeps a camera when at least 14 of its 20 samples pass every filter.
pub fn evaluate_camera(camera: &str, flags: Vec<FilterFlags>) -> CameraReport {
    let passed = flags.iter().filter(|f| f.passed()).count();
    let reason = if flags.len() != CAMERA_SAMPLES {
        Some(format!(
            "expected {CAMERA_SAMPLES} sample images, found {}",
            flags.len()
        ))
    } else if passed < MIN_PASSING {
        Some(format!(
            "{passed} of {CAMERA_SAMPLES} images pass, need {MIN_PASSING}"
        ))
    } else {
        None
    };
    CameraReport {
        camera: camera.to_string(),
        flags,
        passed,
        kept: reason.is_none(),
        reason,
    }
}

#[derive(Debug, Clone)]
pub struct CameraSamples {
    pub camera: String,
    pub images: Vec<(Image, ExternalSignals)>,
}

/// Evaluates cameras in parallel; reports come back sorted by camera id.
pub fn select_cameras(cameras: &[CameraSamples]) -> Vec<CameraReport> {
    let mut reports: Vec<CameraReport> = cameras
        .par_iter()
        .map(|c| {
            let flags = c
                .images
                .iter()
                .map(|(img, ext)| image_filters(img, ext))
                .collect();
            evaluate_camera(&c.camera, flags)
        })
        .collect();
    reports.sort_by(|a, b| a.camera.cmp(&b.camera));
    reports
}

/// 8×8 block means of the image, flattened row-major to 64 values.
pub fn global_descriptor(img: &Image) -> Vec<f64> {
    const G: usize = 8;
    let (w, h) = (img.width(), img.height());
    let span = |k: usize, n: usize| {
        let start = (k * n / G).min(n - 1);
        (start, ((k + 1) * n / G).max(start + 1).min(n))
    };
    let mut out = Vec::with_capacity(G * G);
    for by in 0..G {
        let (y0, y1) = span(by, h);
        for bx in 0..G {
            let (x0, x1) = span(bx, w);
            let mut s = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += f64::from(img.get(x, y));
                }
            }
            out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// One image index per cluster.
    pub representatives: Vec<usize>,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lower index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seeds(features: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = features
        .iter()
        .map(|p| sq_dist(p, &features[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a chosen one
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (i, p) in features.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &features[next]));
        }
    }
    chosen.into_iter().map(|i| features[i].clone()).collect()
}

/// Lloyd's k-means with k-means++ seeding; returns the member nearest each
/// centroid as that cluster's representative.
pub fn kmeans_representatives(
    features: &[Vec<f64>],
    k: usize,
    rng: &mut Rng,
) -> Result<KMeansResult> {
    let n = features.len();
    if k == 0 || n < k {
        return Err(Error::Insufficient(format!("{n} images for {k} clusters")));
    }
    let d = features[0].len();
    if features
        .iter()
        .any(|f| f.len() != d || f.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "features must be finite rows of equal length".into(),
        ));
    }
    if n == k {
        return Ok(KMeansResult {
            representatives: (0..n).collect(),
            assignments: (0..n).collect(),
            centroids: features.to_vec(),
            inertia: vec![0.0],
            iterations: 0,
        });
    }

    let mut centroids = plus_plus_seeds(features, k, rng);
    let mut inertia = Vec::new();
    let mut iterations = 0;
    let assign = |centroids: &[Vec<f64>]| -> Vec<(usize, f64)> {
        features.par_iter().map(|p| nearest(p, centroids)).collect()
    };
    let mut nearest_now = assign(&centroids);
    inertia.push(nearest_now.iter().map(|a| a.1).sum());
    while iterations < 100 {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in features.iter().zip(&nearest_now) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        let mut cost: Vec<f64> = nearest_now.iter().map(|a| a.1).collect();
        for c in 0..k {
            let next: Vec<f64> = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // reseed from the point currently worst served
                let far = (0..n).fold(0, |b, i| if cost[i] > cost[b] { i } else { b });
                cost[far] = 0.0;
                features[far].clone()
            };
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        nearest_now = assign(&centroids);
        inertia.push(nearest_now.iter().map(|a| a.1).sum());
        if shift < 1e-6 {
            break;
        }
    }

    let assignments: Vec<usize> = nearest_now.iter().map(|a| a.0).collect();
    let mut representatives = Vec::with_capacity(k);
    for (c, centroid) in centroids.iter().enumerate() {
        let mut members: Vec<usize> = (0..n).filter(|&i| assignments[i] == c).collect();
        if members.is_empty() {
            // duplicate points can leave a cluster without members
            members = (0..n).filter(|i| !representatives.contains(i)).collect();
        }
        let rep = members
            .into_iter()
            .fold(None::<(usize, f64)>, |best, i| {
                let d = sq_dist(&features[i], centroid);
                match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((i, d)),
                }
            })
            .map(|b| b.0)
            .expect("non-empty candidate list");
        representatives.push(rep);
    }
    Ok(KMeansResult {
        representatives,
        assignments,
        centroids,
        inertia,
        iterations,
    })
}

/// Matcher output for an image pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    /// Row-major 3×3 matrix.
    #[serde(rename = "H")]
    pub h: [f64; 9],
    pub inliers: u32,
}

impl Homography {
    /// Sum of absolute differences between `H / H[2][2]` and the identity;
    /// `None` when the matrix cannot be normalized.
    pub fn identity_sad(&self) -> Option<f64> {
        let h22 = self.h[8];
        if h22 == 0.0 || !self.h.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(
            self.h
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let id = if i % 4 == 0 { 1.0 } else { 0.0 };
                    (v / h22 - id).abs()
                })
                .sum(),
        )
    }

    /// More than 50 inliers and a near-identity normalized matrix.
    pub fn same_view(&self) -> bool {
        self.inliers > MIN_INLIERS && self.identity_sad().is_some_and(|s| s < MAX_IDENTITY_SAD)
    }
}

/// Greedy view clustering over images `0..count`: the first unassigned
/// image becomes a reference and collects every unassigned image `i` whose
/// result for the pair `(reference, i)` passes [`Homography::same_view`].
/// Missing pairs count as failed matches.
pub fn cluster_views(
    count: usize,
    pairs: &BTreeMap<(usize, usize), Homography>,
) -> Vec<Vec<usize>> {
    let mut assigned = vec![false; count];
    let mut views = Vec::new();
    for r in 0..count {
        if assigned[r] {
            continue;
        }
        assigned[r] = true;
        let mut view = vec![r];
        for (i, taken) in assigned.iter_mut().enumerate().skip(r + 1) {
            if !*taken && pairs.get(&(r, i)).is_some_and(Homography::same_view) {
                *taken = true;
                view.push(i);
            }
        }
        views.push(view);
    }
    views
}

/// The largest view reduced to 50 random images, if it has more than 50.
/// Equal sizes prefer the view with the smaller reference image.
pub fn keep_main_view(views: &[Vec<usize>], rng: &mut Rng) -> Option<Vec<usize>> {
    let reference = |v: &Vec<usize>| v.iter().copied().min().unwrap_or(usize::MAX);
    let main = views
        .iter()
        .filter(|v| !v.is_empty())
        .min_by(|a, b| b.len().cmp(&a.len()).then(reference(a).cmp(&reference(b))))?;
    if main.len() <= MAIN_VIEW_SIZE {
        return None;
    }
    let mut keep: Vec<usize> = index::sample(rng, main.len(), MAIN_VIEW_SIZE)
        .into_iter()
        .map(|i| main[i])
        .collect();
    keep.sort_unstable();
    Some(keep)
}
