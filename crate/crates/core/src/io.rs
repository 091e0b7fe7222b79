//! File formats: raster images, the `EMB1` embedding file, keypoint tables
//! and the patch-set store.
//!
//! `EMB1` layout: the bytes `E M B 1`, `u32` row count, `u32` column count
//! (both little-endian), then `rows * cols` little-endian `f32` values in
//! row-major order.
//!
//! A patch-set store is a directory holding, per set, an 8-bit grayscale PNG
//! strip (`S` wide, `S * count` tall, patches top to bottom in view order)
//! and a JSON sidecar `{label, view_id, keypoint}` with the same stem.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use crate::datasetops::SetMeta;
use crate::types::{EmbeddingMatrix, Image, Keypoint, Patch, PatchSet};
use crate::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const EMB_HEADER_LEN: usize = 12;

/// Reads an 8/16-bit grayscale or RGB(A) PNG/PGM/PPM as intensities in `[0, 1]`.
///
/// Colour is collapsed with the luminance weights 0.299 R + 0.587 G + 0.114 B;
/// alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let read_err = |message: String| Error::ImageRead {
        path: path.to_path_buf(),
        message,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| read_err(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format(format!(
            "{} has zero dimension",
            path.display()
        )));
    }
    let luma = |r: f64, g: f64, b: f64| (0.299 * r + 0.587 * g + 0.114 * b) as f32;
    let data: Vec<f32> = match &decoded {
        DynamicImage::ImageLuma8(img) => {
            img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect()
        }
        DynamicImage::ImageLumaA8(img) => img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect(),
        DynamicImage::ImageLuma16(img) => img
            .as_raw()
            .iter()
            .map(|&v| f32::from(v) / 65535.0)
            .collect(),
        DynamicImage::ImageLumaA16(img) => {
            img.pixels().map(|p| f32::from(p.0[0]) / 65535.0).collect()
        }
        DynamicImage::ImageRgb8(img) => img
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0.map(|c| f64::from(c) / 255.0);
                luma(r, g, b)
            })
            .collect(),
        DynamicImage::ImageRgba8(img) => img
            .pixels()
            .map(|p| {
                let [r, g, b, _] = p.0.map(|c| f64::from(c) / 255.0);
                luma(r, g, b)
            })
            .collect(),
        DynamicImage::ImageRgb16(img) => img
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0.map(|c| f64::from(c) / 65535.0);
                luma(r, g, b)
            })
            .collect(),
        DynamicImage::ImageRgba16(img) => img
            .pixels()
            .map(|p| {
                let [r, g, b, _] = p.0.map(|c| f64::from(c) / 65535.0);
                luma(r, g, b)
            })
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel layout {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(w, h, data)
}

/// Lists raster files (png/pgm/ppm/pnm) of a directory in file-name order.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm" | "ppm" | "pnm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an image as 8-bit grayscale PNG (values clamped to `[0, 1]`).
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let gray = GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| Error::Format("image buffer size".into()))?;
    gray.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::ImageRead {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidArgument(format!(
            "EMB1 needs at least one row and column, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let rows =
        u32::try_from(m.rows()).map_err(|_| Error::InvalidArgument("too many rows".into()))?;
    let cols =
        u32::try_from(m.cols()).map_err(|_| Error::InvalidArgument("too many columns".into()))?;
    let mut buf = Vec::with_capacity(EMB_HEADER_LEN + 4 * m.values().len());
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for v in m.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < EMB_HEADER_LEN {
        return Err(Error::Format(format!(
            "EMB1 header needs {EMB_HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != EMB_MAGIC {
        return Err(Error::Format("bad magic, expected EMB1".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[EMB_HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("EMB1 header overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "EMB1 header says {rows}x{cols} ({expected} bytes) but payload has {} bytes",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(rows, cols, values)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_embeddings(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

/// Writes the `x,y,scale,angle,response,level` table.
pub fn write_keypoints(kps: &[Keypoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if kps.is_empty() {
        w.write_record(["x", "y", "scale", "angle", "response", "level"])?;
    }
    for kp in kps {
        w.serialize(kp)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<Keypoint>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let kp: Keypoint = row?;
        out.push(kp);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    label: u64,
    view_id: u64,
    keypoint: Keypoint,
}

fn set_stem(label: u64) -> String {
    format!("set_{label:08}")
}

/// Writes one patch set as `<stem>.png` plus `<stem>.json` into `dir`.
pub fn write_patch_set(set: &PatchSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let side = set.side();
    let mut bytes = Vec::with_capacity(side * side * set.len());
    for p in &set.patches {
        bytes.extend(p.data().iter().map(|&v| quantize(v)));
    }
    let strip = GrayImage::from_raw(side as u32, (side * set.len()) as u32, bytes)
        .ok_or_else(|| Error::Format("strip buffer size".into()))?;
    let stem = set_stem(set.label);
    let png = dir.join(format!("{stem}.png"));
    strip
        .save_with_format(&png, image::ImageFormat::Png)
        .map_err(|e| Error::ImageRead {
            path: png.clone(),
            message: e.to_string(),
        })?;
    let sidecar = Sidecar {
        label: set.label,
        view_id: set.view_id,
        keypoint: set.source_keypoint,
    };
    let json = dir.join(format!("{stem}.json"));
    let mut f = fs::File::create(&json).map_err(|e| Error::io(&json, e))?;
    serde_json::to_writer(&mut f, &sidecar)?;
    f.write_all(b"\n").map_err(|e| Error::io(&json, e))?;
    Ok(())
}

fn sidecars(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn strip_geometry(png: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(png).map_err(|e| Error::ImageRead {
        path: png.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (w as usize, h as usize);
    if w == 0 || h % w != 0 {
        return Err(Error::Format(format!(
            "{}: strip height {h} is not a multiple of width {w}",
            png.display()
        )));
    }
    Ok((w, h / w))
}

/// Reads every patch set of a store, ordered by file name (i.e. label).
pub fn read_patch_store(dir: impl AsRef<Path>) -> Result<Vec<PatchSet>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for json in sidecars(dir)? {
        let meta = read_sidecar(&json)?;
        let png = json.with_extension("png");
        let strip = load_image(&png)?;
        let side = strip.width();
        if strip.height() % side != 0 {
            return Err(Error::Format(format!(
                "{}: strip height is not a multiple of width",
                png.display()
            )));
        }
        let count = strip.height() / side;
        let data = strip.into_data();
        let patches = data
            .chunks_exact(side * side)
            .take(count)
            .map(|c| Patch::new(side, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        out.push(PatchSet::new(
            meta.label,
            meta.view_id,
            patches,
            meta.keypoint,
        )?);
    }
    Ok(out)
}

/// Reads only sidecars and PNG headers: enough for batch sampling.
pub fn read_set_meta(dir: impl AsRef<Path>) -> Result<Vec<SetMeta>> {
    let dir = dir.as_ref();
    sidecars(dir)?
        .into_iter()
        .map(|json| {
            let meta = read_sidecar(&json)?;
            let (_, count) = strip_geometry(&json.with_extension("png"))?;
            Ok(SetMeta {
                label: meta.label,
                view_id: meta.view_id,
                n_patches: count,
                keypoint: meta.keypoint,
            })
        })
        .collect()
}
