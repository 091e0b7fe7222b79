//! Patch extraction from registered views and the training-time
//! augmentation recipes.
//!
//! A keypoint's support is the square of side `scale` centred on `(x, y)`
//! and rotated by `angle` degrees. An `S x S` patch samples that square on a
//! regular grid with spacing `scale / S`, pixel centres at offsets
//! `(u - (S - 1) / 2) * scale / S`.

use rand::Rng as _;
use rayon::prelude::*;

use crate::resample::{resize_region, sample_clamped, sample_inside};
use crate::types::{Image, Keypoint, Patch, PatchSet};
use crate::{rng, Error, Result, Rng};

pub const AMOS_INPUT_SIDE: usize = 96;
pub const LIBERTY_INPUT_SIDE: usize = 64;
pub const CENTER_CROP_SIDE: usize = 64;
pub const TRAIN_SIDE: usize = 32;

/// Resamples the support of `kp` into an `out_side x out_side` patch.
pub fn extract_patch(img: &Image, kp: &Keypoint, out_side: usize) -> Result<Patch> {
    if out_side == 0 {
        return Err(Error::InvalidArgument(
            "patch side must be at least 1".into(),
        ));
    }
    if kp.scale.is_nan() || kp.scale <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "keypoint scale must be > 0, got {}",
            kp.scale
        )));
    }
    let step = kp.scale / out_side as f64;
    let centre = (out_side as f64 - 1.0) / 2.0;
    let (sin, cos) = kp.angle.to_radians().sin_cos();
    let mut data = Vec::with_capacity(out_side * out_side);
    for v in 0..out_side {
        let oy = (v as f64 - centre) * step;
        for u in 0..out_side {
            let ox = (u as f64 - centre) * step;
            let sx = kp.x + cos * ox - sin * oy;
            let sy = kp.y + sin * ox + cos * oy;
            let val = sample_inside(img, sx, sy).ok_or_else(|| {
                Error::OutOfBounds(format!(
                    "keypoint ({}, {}) scale {} angle {} on {}x{} image",
                    kp.x,
                    kp.y,
                    kp.scale,
                    kp.angle,
                    img.width(),
                    img.height()
                ))
            })?;
            data.push(val as f32);
        }
    }
    Patch::new(out_side, data)
}

/// Cuts one patch set per keypoint out of a registered view.
///
/// The same keypoint geometry is used on every image. Keypoints whose support
/// leaves the image are dropped; the surviving sets get consecutive labels
/// starting at `first_label`.
pub fn extract_patch_sets(
    images: &[Image],
    kps: &[Keypoint],
    out_side: usize,
    view_id: u64,
    first_label: u64,
) -> Result<Vec<PatchSet>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("view has no images".into()))?;
    if images.len() < 2 {
        return Err(Error::InvalidArgument(
            "a view needs at least two images".into(),
        ));
    }
    if images.iter().any(|im| !im.same_dims(first)) {
        return Err(Error::DimensionMismatch(
            "images of a view must share dimensions".into(),
        ));
    }
    let extracted: Vec<Option<Vec<Patch>>> = kps
        .par_iter()
        .map(|kp| -> Result<Option<Vec<Patch>>> {
            let mut patches = Vec::with_capacity(images.len());
            for img in images {
                match extract_patch(img, kp, out_side) {
                    Ok(p) => patches.push(p),
                    Err(Error::OutOfBounds(_)) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(patches))
        })
        .collect::<Result<_>>()?;
    let mut sets = Vec::new();
    let mut label = first_label;
    for (kp, patches) in kps.iter().zip(extracted) {
        if let Some(patches) = patches {
            sets.push(PatchSet::new(label, view_id, patches, *kp)?);
            label += 1;
        }
    }
    Ok(sets)
}

/// Translates every keypoint by `(dx, dy)` pixels.
pub fn shift_keypoints(kps: &[Keypoint], dx: f64, dy: f64) -> Vec<Keypoint> {
    kps.iter()
        .map(|kp| Keypoint {
            x: kp.x + dx,
            y: kp.y + dy,
            ..*kp
        })
        .collect()
}

fn flip(p: &Patch, horizontal: bool, vertical: bool) -> Patch {
    let s = p.side();
    Patch::from_fn(s, |x, y| {
        let sx = if horizontal { s - 1 - x } else { x };
        let sy = if vertical { s - 1 - y } else { y };
        p.get(sx, sy)
    })
    .expect("same side")
}

fn check_side(p: &Patch, expected: usize) -> Result<()> {
    if p.side() != expected {
        return Err(Error::InvalidArgument(format!(
            "expected a {expected}x{expected} patch, got {}x{}",
            p.side(),
            p.side()
        )));
    }
    Ok(())
}

/// One draw of the AMOS augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmosAugmentation {
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: f64,
    pub scale: f64,
    pub shear_x_deg: f64,
    pub shear_y_deg: f64,
    /// Crop `(left, top, width, height)` inside the 64x64 centre.
    pub crop: (usize, usize, usize, usize),
}

impl AmosAugmentation {
    /// No flips, identity affine, whole centre crop.
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            rotation_deg: 0.0,
            scale: 1.0,
            shear_x_deg: 0.0,
            shear_y_deg: 0.0,
            crop: (0, 0, CENTER_CROP_SIDE, CENTER_CROP_SIDE),
        }
    }

    /// Flips p=0.5 each; rotation U(-25, 25) deg, scale U(0.8, 1.4), shear
    /// U(-10, 10) deg per axis; crop area fraction U(0.7, 1.0) and aspect
    /// ratio U(0.9, 1.1) with a uniformly placed integer box.
    pub fn sample(rng: &mut Rng) -> Self {
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let rotation_deg = rng.random_range(-25.0..25.0);
        let scale = rng.random_range(0.8..1.4);
        let shear_x_deg = rng.random_range(-10.0..10.0);
        let shear_y_deg = rng.random_range(-10.0..10.0);
        let area_frac: f64 = rng.random_range(0.7..1.0);
        let aspect: f64 = rng.random_range(0.9..1.1);
        let area = (CENTER_CROP_SIDE * CENTER_CROP_SIDE) as f64 * area_frac;
        let w = ((area * aspect).sqrt().round() as usize).clamp(1, CENTER_CROP_SIDE);
        let h = ((area / aspect).sqrt().round() as usize).clamp(1, CENTER_CROP_SIDE);
        let left = rng.random_range(0..=CENTER_CROP_SIDE - w);
        let top = rng.random_range(0..=CENTER_CROP_SIDE - h);
        Self {
            hflip,
            vflip,
            rotation_deg,
            scale,
            shear_x_deg,
            shear_y_deg,
            crop: (left, top, w, h),
        }
    }

    /// Forward 2x2 map applied about the patch centre: rotation, then shear,
    /// then isotropic scale.
    fn forward_matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let rot = [[c, -s], [s, c]];
        let shear = [
            [1.0, self.shear_x_deg.to_radians().tan()],
            [self.shear_y_deg.to_radians().tan(), 1.0],
        ];
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.scale * (shear[i][0] * rot[0][j] + shear[i][1] * rot[1][j]);
            }
        }
        m
    }
}

fn warp_affine(p: &Patch, aug: &AmosAugmentation) -> Result<Patch> {
    let m = aug.forward_matrix();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::InvalidArgument(
            "degenerate affine augmentation".into(),
        ));
    }
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let img = p.as_image();
    let c = (p.side() as f64 - 1.0) / 2.0;
    Patch::from_fn(p.side(), |x, y| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        let sx = c + inv[0][0] * dx + inv[0][1] * dy;
        let sy = c + inv[1][0] * dx + inv[1][1] * dy;
        sample_clamped(&img, sx, sy) as f32
    })
}

fn centre_crop(p: &Patch, side: usize) -> Patch {
    let off = (p.side() - side) / 2;
    Patch::from_fn(side, |x, y| p.get(x + off, y + off)).expect("crop side")
}

/// Applies fixed AMOS augmentation parameters to a 96x96 patch.
///
/// Pipeline: flips, affine warp about the centre (replicated borders), 64x64
/// centre crop, crop box, bilinear resize to 32x32.
pub fn augment_amos_with(patch96: &Patch, aug: &AmosAugmentation) -> Result<Patch> {
    check_side(patch96, AMOS_INPUT_SIDE)?;
    let (left, top, w, h) = aug.crop;
    if w == 0 || h == 0 || left + w > CENTER_CROP_SIDE || top + h > CENTER_CROP_SIDE {
        return Err(Error::InvalidArgument(format!(
            "crop {:?} exceeds the centre crop",
            aug.crop
        )));
    }
    let flipped = flip(patch96, aug.hflip, aug.vflip);
    let warped = warp_affine(&flipped, aug)?;
    let centre = centre_crop(&warped, CENTER_CROP_SIDE).as_image();
    Patch::new(
        TRAIN_SIDE,
        resize_region(&centre, left, top, w, h, TRAIN_SIDE, TRAIN_SIDE),
    )
}

/// Random AMOS augmentation: 96x96 in, 32x32 out.
pub fn augment_amos(patch96: &Patch, rng: &mut Rng) -> Result<Patch> {
    check_side(patch96, AMOS_INPUT_SIDE)?;
    let aug = AmosAugmentation::sample(rng);
    augment_amos_with(patch96, &aug)
}

/// Liberty recipe: flips p=0.5 each, then bilinear resize 64 -> 32.
pub fn augment_liberty(patch64: &Patch, rng: &mut Rng) -> Result<Patch> {
    check_side(patch64, LIBERTY_INPUT_SIDE)?;
    let flipped = flip(patch64, rng.random_bool(0.5), rng.random_bool(0.5));
    Patch::new(
        TRAIN_SIDE,
        resize_region(
            &flipped.as_image(),
            0,
            0,
            LIBERTY_INPUT_SIDE,
            LIBERTY_INPUT_SIDE,
            TRAIN_SIDE,
            TRAIN_SIDE,
        ),
    )
}

/// Augmentation recipe selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    Amos,
    Liberty,
}

/// Augments every patch of every set. Set `label` draws from the stream
/// `seed ^ label`, so the result does not depend on scheduling.
pub fn augment_sets(sets: &[PatchSet], recipe: Recipe, seed: u64) -> Result<Vec<PatchSet>> {
    sets.par_iter()
        .map(|set| {
            let mut r = rng::stream(seed, set.label);
            let patches = set
                .patches
                .iter()
                .map(|p| match recipe {
                    Recipe::Amos => augment_amos(p, &mut r),
                    Recipe::Liberty => augment_liberty(p, &mut r),
                })
                .collect::<Result<Vec<_>>>()?;
            PatchSet::new(set.label, set.view_id, patches, set.source_keypoint)
        })
        .collect()
}

/// Bilinear resize of a patch to `side` (used to feed fixed-size descriptors).
pub fn resize_patch(p: &Patch, side: usize) -> Result<Patch> {
    if p.side() == side {
        return Ok(p.clone());
    }
    Patch::new(
        side,
        resize_region(&p.as_image(), 0, 0, p.side(), p.side(), side, side),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn textured(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| (((x * 7 + y * 13) % 17) as f32) / 16.0).unwrap()
    }

    #[test]
    fn constant_image_gives_constant_patch() {
        let img = Image::constant(50, 50, 0.3).unwrap();
        let kp = Keypoint::new(25.3, 24.1, 17.0).with_angle(33.0);
        let p = extract_patch(&img, &kp, 16).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn identity_resample_copies_the_window() {
        let img = textured(40, 30);
        let kp = Keypoint::new(20.0, 15.0, 9.0);
        let p = extract_patch(&img, &kp, 9).unwrap();
        for v in 0..9 {
            for u in 0..9 {
                assert_eq!(p.get(u, v), img.get(16 + u, 11 + v));
            }
        }
        // Even side: a half-integer centre lands on pixel centres.
        let kp = Keypoint::new(20.5, 15.5, 8.0);
        let p = extract_patch(&img, &kp, 8).unwrap();
        for v in 0..8 {
            for u in 0..8 {
                assert_eq!(p.get(u, v), img.get(17 + u, 12 + v));
            }
        }
    }

    #[test]
    fn ninety_degrees_rotates_the_patch() {
        let img = Image::from_fn(21, 21, |x, y| ((x * 3 + y * y) % 10) as f32 / 9.0).unwrap();
        let kp = Keypoint::new(10.0, 10.0, 9.0);
        let p0 = extract_patch(&img, &kp, 9).unwrap();
        let p90 = extract_patch(&img, &kp.with_angle(90.0), 9).unwrap();
        for v in 0..9 {
            for u in 0..9 {
                assert!((p90.get(u, v) - p0.get(8 - v, u)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn support_outside_the_image_is_an_error() {
        let img = textured(20, 20);
        let kp = Keypoint::new(3.0, 10.0, 12.0);
        assert!(matches!(
            extract_patch(&img, &kp, 8),
            Err(Error::OutOfBounds(_))
        ));
    }

    #[test]
    fn identical_images_give_identical_patches() {
        let imgs = vec![textured(60, 60); 50];
        let kps = [Keypoint::new(30.0, 30.0, 20.0).with_angle(17.0)];
        let sets = extract_patch_sets(&imgs, &kps, 16, 0, 0).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].len(), 50);
        assert!(sets[0]
            .patches
            .iter()
            .all(|p| p.squared_distance(&sets[0].patches[0]) == 0.0));
    }

    #[test]
    fn border_keypoints_are_dropped_and_labels_stay_consecutive() {
        let imgs = vec![textured(60, 60), textured(60, 60)];
        let kps = [
            Keypoint::new(20.0, 20.0, 10.0),
            Keypoint::new(2.0, 30.0, 40.0),
            Keypoint::new(40.0, 40.0, 10.0),
            Keypoint::new(30.0, 30.0, 12.0),
        ];
        let sets = extract_patch_sets(&imgs, &kps, 8, 4, 100).unwrap();
        assert_eq!(sets.len(), 3);
        assert_eq!(
            sets.iter().map(|s| s.label).collect::<Vec<_>>(),
            vec![100, 101, 102]
        );
        assert_eq!(sets[1].source_keypoint, kps[2]);
        assert!(sets.iter().all(|s| s.view_id == 4 && s.len() == 2));
    }

    #[test]
    fn shift_moves_and_inverts() {
        let kps = vec![Keypoint::new(10.0, 5.0, 3.0), Keypoint::new(1.5, 2.5, 4.0)];
        assert_eq!(shift_keypoints(&kps, 0.0, 0.0), kps);
        assert_eq!(shift_keypoints(&kps, 3.0, 0.0)[0].x, 13.0);
        assert_eq!(
            shift_keypoints(&shift_keypoints(&kps, 3.0, -2.0), -3.0, 2.0),
            kps
        );
    }

    #[test]
    fn translation_equivariance() {
        let base = textured(64, 64);
        let shifted =
            Image::from_fn(64, 64, |x, y| base.get((x + 61) % 64, (y + 62) % 64)).unwrap();
        let kp = Keypoint::new(30.0, 29.0, 14.0).with_angle(25.0);
        let moved = shift_keypoints(&[kp], 3.0, 2.0)[0];
        let a = extract_patch(&base, &kp, 12).unwrap();
        let b = extract_patch(&shifted, &moved, 12).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn amos_constant_and_deterministic() {
        let p = Patch::constant(96, 0.42).unwrap();
        let out = augment_amos(&p, &mut seeded(1)).unwrap();
        assert_eq!(out.side(), 32);
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
        let tex = Patch::from_fn(96, |x, y| ((x * 5 + y * 11) % 23) as f32 / 22.0).unwrap();
        let a = augment_amos(&tex, &mut seeded(9)).unwrap();
        let b = augment_amos(&tex, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn amos_identity_is_a_resize_of_the_centre() {
        let tex = Patch::from_fn(96, |x, y| ((x * 5 + y * 11) % 23) as f32 / 22.0).unwrap();
        let out = augment_amos_with(&tex, &AmosAugmentation::identity()).unwrap();
        // Direct oracle: 2x2 block means of the centre 64x64.
        for v in 0..32 {
            for u in 0..32 {
                let mut acc = 0.0f64;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    acc += f64::from(tex.get(16 + 2 * u + dx, 16 + 2 * v + dy));
                }
                assert!((f64::from(out.get(u, v)) - acc / 4.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn wrong_input_sides_are_rejected() {
        let p = Patch::constant(64, 0.5).unwrap();
        assert!(augment_amos(&p, &mut seeded(0)).is_err());
        let q = Patch::constant(96, 0.5).unwrap();
        assert!(augment_liberty(&q, &mut seeded(0)).is_err());
    }

    #[test]
    fn liberty_checkerboards() {
        let fine = Patch::from_fn(64, |x, y| ((x + y) % 2) as f32).unwrap();
        let out = augment_liberty(&fine, &mut seeded(0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        // 2x2 blocks shrink to a one-pixel checkerboard, up to the random flips.
        let coarse = Patch::from_fn(64, |x, y| ((x / 2 + y / 2) % 2) as f32).unwrap();
        let out = augment_liberty(&coarse, &mut seeded(0)).unwrap();
        let first = out.get(0, 0);
        for v in 0..32 {
            for u in 0..32 {
                let expected = if (u + v) % 2 == 0 { first } else { 1.0 - first };
                assert_eq!(out.get(u, v), expected);
            }
        }
        let c = Patch::constant(64, 0.8).unwrap();
        assert!(augment_liberty(&c, &mut seeded(4))
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 0.8).abs() < 1e-6));
        assert_eq!(
            augment_liberty(&coarse, &mut seeded(5)).unwrap(),
            augment_liberty(&coarse, &mut seeded(5)).unwrap()
        );
    }

    #[test]
    fn augment_sets_is_schedule_independent() {
        let tex = Patch::from_fn(64, |x, y| ((x * 3 + y * 7) % 13) as f32 / 12.0).unwrap();
        let kp = Keypoint::new(0.0, 0.0, 1.0);
        let sets: Vec<PatchSet> = (0..6)
            .map(|l| PatchSet::new(l, 0, vec![tex.clone(), tex.clone()], kp).unwrap())
            .collect();
        let all = augment_sets(&sets, Recipe::Liberty, 3).unwrap();
        let last_only = augment_sets(&sets[5..], Recipe::Liberty, 3).unwrap();
        assert_eq!(all[5], last_only[0]);
    }
}
