//! Hessian keypoint detection on a Gaussian pyramid, probability maps and
//! random keypoint sampling.
//!
//! Level `k` of the pyramid is the input blurred with a Gaussian of standard
//! deviation `sigma^k` (no downsampling). The determinant of the Hessian is
//! evaluated on every level, scale-normalised, and non-maximum suppression is
//! applied per level with a square window of side `2 * sigma^k * bs`.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;

use crate::types::{Image, Keypoint};
use crate::{Error, Result, Rng};

/// How level-`k` responses are rescaled before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResponseNormalization {
    /// Multiply by `sigma^(4k)`: a blob magnified by `sigma` gives the same
    /// response one level up.
    #[default]
    ScaleNormalized,
    /// Multiply by `sigma^(-4k)`.
    InversePower,
}

impl ResponseNormalization {
    fn factor(self, sigma: f64, level: u32) -> f64 {
        let s = sigma.powi(4 * level as i32);
        match self {
            ResponseNormalization::ScaleNormalized => s,
            ResponseNormalization::InversePower => 1.0 / s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidParams {
    pub sigma: f64,
    pub k1: u32,
    pub k2: u32,
    /// Base scale `bs` in pixels.
    pub base_scale: f64,
    pub threshold: f64,
    pub max_points: usize,
    pub normalization: ResponseNormalization,
}

impl Default for PyramidParams {
    fn default() -> Self {
        Self {
            sigma: 1.8,
            k1: 0,
            k2: 4,
            base_scale: 30.0,
            threshold: 0.00016,
            max_points: 2000,
            normalization: ResponseNormalization::ScaleNormalized,
        }
    }
}

impl PyramidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 1.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 1, got {}",
                self.sigma
            )));
        }
        if self.k2 < self.k1 {
            return Err(Error::InvalidArgument(format!(
                "k2 ({}) < k1 ({})",
                self.k2, self.k1
            )));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if !(self.base_scale > 0.0 && self.base_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "base scale must be > 0, got {}",
                self.base_scale
            )));
        }
        Ok(())
    }

    pub fn level_std(&self, level: u32) -> f64 {
        self.sigma.powi(level as i32)
    }

    /// Keypoint scale assigned to detections on `level`.
    pub fn level_scale(&self, level: u32) -> f64 {
        self.base_scale * self.level_std(level)
    }

    /// Side of the NMS window on `level`: `round(2 sigma^k bs)`, at least 3, odd.
    pub fn nms_side(&self, level: u32) -> usize {
        let side = (2.0 * self.level_std(level) * self.base_scale)
            .round()
            .max(3.0) as usize;
        side | 1
    }
}

/// Non-negative real map with the shape of its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ResponseMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} map with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Format(
                "response values must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            data: vec![1.0 / n as f64; n],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn scaled(mut self, factor: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// Divides by the total; falls back to the uniform map when it is zero.
    pub fn normalized(self) -> Self {
        let total = self.sum();
        if total > 0.0 {
            self.scaled(1.0 / total)
        } else {
            Self::uniform(self.width, self.height)
        }
    }
}

/// Mirror index without repeating the edge sample (`-1 -> 1`), for any offset.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalised Gaussian taps of width `ceil(6 std)` rounded up to odd.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let width = ((6.0 * std).ceil() as usize).max(1) | 1;
    let radius = (width / 2) as isize;
    let denom = 2.0 * std * std;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

fn check_min_side(img: &Image) -> Result<()> {
    if img.width() < 3 || img.height() < 3 {
        return Err(Error::InvalidArgument(format!(
            "image must be at least 3x3, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Separable Gaussian blur with reflect boundary.
pub fn gaussian_blur(img: &Image, std: f64) -> Result<Image> {
    check_min_side(img)?;
    let taps = gaussian_kernel(std);
    let r = (taps.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * f64::from(row[reflect(x as isize + t as isize - r, w)]);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * tmp[reflect(y as isize + t as isize - r, h) * w + x];
            }
            out[y * w + x] = acc as f32;
        }
    }
    Image::new(w, h, out)
}

/// Levels `k1..=k2`, level `k` blurred with std `sigma^k`.
pub fn gaussian_pyramid(img: &Image, p: &PyramidParams) -> Result<Vec<Image>> {
    p.validate()?;
    check_min_side(img)?;
    (p.k1..=p.k2)
        .into_par_iter()
        .map(|k| gaussian_blur(img, p.level_std(k)))
        .collect()
}

/// `max(det H, 0)` from central second differences, reflect boundary.
pub fn hessian_response(img: &Image) -> Result<ResponseMap> {
    check_min_side(img)?;
    let (w, h) = (img.width(), img.height());
    let at = |x: isize, y: isize| f64::from(img.get(reflect(x, w), reflect(y, h)));
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = at(x, y);
            let ixx = at(x + 1, y) - 2.0 * c + at(x - 1, y);
            let iyy = at(x, y + 1) - 2.0 * c + at(x, y - 1);
            let ixy =
                (at(x + 1, y + 1) - at(x + 1, y - 1) - at(x - 1, y + 1) + at(x - 1, y - 1)) / 4.0;
            data.push((ixx * iyy - ixy * ixy).max(0.0));
        }
    }
    Ok(ResponseMap {
        width: w,
        height: h,
        data,
    })
}

/// Normalised Hessian response of one pyramid level.
pub fn level_response(level_img: &Image, level: u32, p: &PyramidParams) -> Result<ResponseMap> {
    Ok(hessian_response(level_img)?.scaled(p.normalization.factor(p.sigma, level)))
}

#[derive(Clone, Copy)]
struct Key {
    value: f64,
    index: usize,
}

impl Key {
    /// Higher response wins; equal responses go to the smaller row-major index.
    #[inline]
    fn beats(self, other: Key) -> bool {
        self.value > other.value || (self.value == other.value && self.index < other.index)
    }
}

/// Best key in the clipped window `[i - r, i + r]` for every position.
fn sliding_best(keys: &[Key], r: usize, out: &mut Vec<Key>) {
    out.clear();
    let n = keys.len();
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + r).min(n - 1);
        while next <= hi {
            while let Some(&b) = dq.back() {
                if keys[next].beats(keys[b]) {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(r);
        while let Some(&f) = dq.front() {
            if f < lo {
                dq.pop_front();
            } else {
                break;
            }
        }
        out.push(keys[*dq.front().expect("window is never empty")]);
    }
}

/// Pixels that beat every other pixel of the `side x side` window centred on
/// them (clipped at the border). Equal values are resolved in favour of the
/// lexicographically smallest `(y, x)`. Returned in row-major order.
pub fn window_maxima(map: &ResponseMap, side: usize) -> Vec<(usize, usize)> {
    let (w, h) = (map.width, map.height);
    let r = side / 2;
    let mut rowbest = vec![
        Key {
            value: 0.0,
            index: 0
        };
        w * h
    ];
    let mut buf_in = Vec::with_capacity(w.max(h));
    let mut buf_out = Vec::with_capacity(w.max(h));
    for y in 0..h {
        buf_in.clear();
        buf_in.extend((0..w).map(|x| Key {
            value: map.data[y * w + x],
            index: y * w + x,
        }));
        sliding_best(&buf_in, r, &mut buf_out);
        rowbest[y * w..(y + 1) * w].copy_from_slice(&buf_out);
    }
    let mut is_max = vec![false; w * h];
    for x in 0..w {
        buf_in.clear();
        buf_in.extend((0..h).map(|y| rowbest[y * w + x]));
        sliding_best(&buf_in, r, &mut buf_out);
        for (y, best) in buf_out.iter().enumerate() {
            is_max[y * w + x] = best.index == y * w + x;
        }
    }
    is_max
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (i % w, i / w))
        .collect()
}

/// Outcome of [`detect_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub keypoints: Vec<Keypoint>,
    /// Threshold in force after all doublings.
    pub threshold: f64,
    pub restarts: usize,
}

/// Detects keypoints; see [`detect_report`].
pub fn detect(img: &Image, p: &PyramidParams) -> Result<Vec<Keypoint>> {
    Ok(detect_report(img, p)?.keypoints)
}

/// Scale-normalised Hessian detection with per-level NMS.
///
/// A window maximum survives if its response reaches the threshold and its
/// `scale / 2` half-support stays inside the image. When more than
/// `max_points` survive, the threshold doubles and detection starts over.
/// Keypoints are sorted by descending response, then level, `y`, `x`.
pub fn detect_report(img: &Image, p: &PyramidParams) -> Result<Detection> {
    p.validate()?;
    let levels = gaussian_pyramid(img, p)?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    // Maxima do not depend on the threshold, so a restart only re-filters them.
    let per_level: Vec<Vec<Keypoint>> = levels
        .par_iter()
        .enumerate()
        .map(|(i, level_img)| -> Result<Vec<Keypoint>> {
            let k = p.k1 + i as u32;
            let resp = level_response(level_img, k, p)?;
            let scale = p.level_scale(k);
            let half = scale / 2.0;
            Ok(window_maxima(&resp, p.nms_side(k))
                .into_iter()
                .filter(|&(x, y)| {
                    let (x, y) = (x as f64, y as f64);
                    x - half >= 0.0 && y - half >= 0.0 && x + half <= w - 1.0 && y + half <= h - 1.0
                })
                .map(|(x, y)| Keypoint {
                    x: x as f64,
                    y: y as f64,
                    scale,
                    angle: 0.0,
                    response: resp.get(x, y),
                    level: Some(k as i32),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let candidates: Vec<Keypoint> = per_level.into_iter().flatten().collect();

    let mut threshold = p.threshold;
    let mut restarts = 0;
    loop {
        let count = candidates
            .iter()
            .filter(|kp| kp.response >= threshold)
            .count();
        if count <= p.max_points {
            break;
        }
        threshold *= 2.0;
        restarts += 1;
    }
    let mut keypoints: Vec<Keypoint> = candidates
        .into_iter()
        .filter(|kp| kp.response >= threshold)
        .collect();
    keypoints.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.level.cmp(&b.level))
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
    Ok(Detection {
        keypoints,
        threshold,
        restarts,
    })
}

/// Response evaluated to build a sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    Uniform,
    Hessian,
    SqrtHessian,
    /// `sqrt(det H)` kept only at strict window maxima of the given side.
    SqrtHessianNms {
        window: usize,
    },
}

/// Which image(s) the response is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSource {
    RandomImage,
    MeanImage,
    MedianImage,
    AverageResponses,
}

/// Stand-in image for a registered view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representative {
    Random,
    Mean,
    Median,
}

fn check_same_dims(images: &[Image]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one image".into()))?;
    if let Some(i) = images.iter().position(|im| !im.same_dims(first)) {
        return Err(Error::DimensionMismatch(format!(
            "image {i} is {}x{}, expected {}x{}",
            images[i].width(),
            images[i].height(),
            first.width(),
            first.height()
        )));
    }
    Ok(())
}

/// Uniform pick, per-pixel mean, or per-pixel median (mean of the two middle
/// values for an even count).
pub fn representative_image(
    images: &[Image],
    kind: Representative,
    rng: &mut Rng,
) -> Result<Image> {
    check_same_dims(images)?;
    let (w, h) = (images[0].width(), images[0].height());
    match kind {
        Representative::Random => Ok(images[rng.random_range(0..images.len())].clone()),
        Representative::Mean => {
            let n = images.len() as f64;
            let data = (0..w * h)
                .map(|i| (images.iter().map(|im| f64::from(im.data()[i])).sum::<f64>() / n) as f32)
                .collect();
            Image::new(w, h, data)
        }
        Representative::Median => {
            let mut column = Vec::with_capacity(images.len());
            let data = (0..w * h)
                .map(|i| {
                    column.clear();
                    column.extend(images.iter().map(|im| im.data()[i]));
                    column.sort_by(f32::total_cmp);
                    let m = column.len() / 2;
                    if column.len() % 2 == 1 {
                        column[m]
                    } else {
                        ((f64::from(column[m - 1]) + f64::from(column[m])) / 2.0) as f32
                    }
                })
                .collect();
            Image::new(w, h, data)
        }
    }
}

fn evaluate_response(img: &Image, kind: ResponseKind) -> Result<ResponseMap> {
    match kind {
        ResponseKind::Uniform => Ok(ResponseMap::uniform(img.width(), img.height())),
        ResponseKind::Hessian => hessian_response(img),
        ResponseKind::SqrtHessian => {
            let mut m = hessian_response(img)?;
            m.data.iter_mut().for_each(|v| *v = v.sqrt());
            Ok(m)
        }
        ResponseKind::SqrtHessianNms { window } => {
            let mut m = evaluate_response(img, ResponseKind::SqrtHessian)?;
            let mut keep = vec![false; m.data.len()];
            for (x, y) in window_maxima(&m, window.max(1)) {
                keep[y * m.width + x] = true;
            }
            m.data.iter_mut().zip(keep).for_each(|(v, k)| {
                if !k {
                    *v = 0.0;
                }
            });
            Ok(m)
        }
    }
}

/// Sampling distribution over pixels, summing to one.
///
/// Falls back to the uniform map when the total response is zero.
pub fn probability_map(
    images: &[Image],
    response: ResponseKind,
    source: MapSource,
    rng: &mut Rng,
) -> Result<ResponseMap> {
    check_same_dims(images)?;
    let (w, h) = (images[0].width(), images[0].height());
    if response == ResponseKind::Uniform {
        return Ok(ResponseMap::uniform(w, h));
    }
    let raw = match source {
        MapSource::RandomImage => evaluate_response(
            &representative_image(images, Representative::Random, rng)?,
            response,
        )?,
        MapSource::MeanImage => evaluate_response(
            &representative_image(images, Representative::Mean, rng)?,
            response,
        )?,
        MapSource::MedianImage => evaluate_response(
            &representative_image(images, Representative::Median, rng)?,
            response,
        )?,
        MapSource::AverageResponses => {
            let maps = images
                .par_iter()
                .map(|im| evaluate_response(im, response))
                .collect::<Result<Vec<_>>>()?;
            let n = maps.len() as f64;
            let data = (0..w * h)
                .map(|i| maps.iter().map(|m| m.data[i]).sum::<f64>() / n)
                .collect();
            ResponseMap::new(w, h, data)?
        }
    };
    Ok(raw.normalized())
}

/// Draws `n` keypoints: position from `map` as a categorical distribution
/// over pixels, scale uniform in `scale_range`, angle uniform in `[0, 360)`.
pub fn sample_keypoints(
    map: &ResponseMap,
    n: usize,
    scale_range: (f64, f64),
    rng: &mut Rng,
) -> Result<Vec<Keypoint>> {
    let (lo, hi) = scale_range;
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one keypoint".into()));
    }
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid scale range ({lo}, {hi})"
        )));
    }
    let dist = WeightedIndex::new(map.data())
        .map_err(|e| Error::InvalidArgument(format!("probability map: {e}")))?;
    let out = (0..n)
        .map(|_| {
            let i = dist.sample(rng);
            let scale = if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            };
            let angle = rng.random_range(0.0..360.0);
            Keypoint {
                x: (i % map.width) as f64,
                y: (i / map.width) as f64,
                scale,
                angle,
                response: map.data[i],
                level: None,
            }
        })
        .collect();
    Ok(out)
}
