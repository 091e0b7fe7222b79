//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Single-channel intensity image, row-major.
///
/// Images produced by [`crate::io::load_image`] hold intensities in `[0, 1]`.
/// The constructor only enforces finiteness so that synthetic fixtures and
/// intermediate results can reuse the type.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite intensity at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Detected or sampled interest point.
///
/// Pixel centres sit at integer coordinates. `scale` is the side length of
/// the square support in pixels, `angle` is in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub angle: f64,
    pub response: f64,
    #[serde(default)]
    pub level: Option<i32>,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, scale: f64) -> Self {
        Self {
            x,
            y,
            scale,
            angle: 0.0,
            response: 0.0,
            level: None,
        }
    }

    pub fn with_angle(mut self, angle: f64) -> Self {
        self.angle = angle.rem_euclid(360.0);
        self
    }

    /// Axis-aligned support box `(x0, y0, x1, y1)` of side `scale`.
    pub fn support_box(&self) -> (f64, f64, f64, f64) {
        let h = self.scale / 2.0;
        (self.x - h, self.y - h, self.x + h, self.y + h)
    }
}

/// Square patch of side `side`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    data: Vec<f32>,
}

impl Patch {
    pub fn new(side: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 {
            return Err(Error::Format("patch side must be at least 1".into()));
        }
        if data.len() != side * side {
            return Err(Error::DimensionMismatch(format!(
                "patch of side {side} needs {} values, got {}",
                side * side,
                data.len()
            )));
        }
        Ok(Self { side, data })
    }

    pub fn constant(side: usize, value: f32) -> Result<Self> {
        Self::new(side, vec![value; side * side])
    }

    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                data.push(f(x, y));
            }
        }
        Self::new(side, data)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.side + x]
    }

    /// Views the patch as an image (for resampling helpers).
    pub fn as_image(&self) -> Image {
        Image {
            width: self.side,
            height: self.side,
            data: self.data.clone(),
        }
    }

    /// Sum of squared differences; zero for identical patches.
    pub fn squared_distance(&self, other: &Patch) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum()
    }
}

/// Corresponding patches of one scene point, one per image of a view.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub label: u64,
    pub view_id: u64,
    pub patches: Vec<Patch>,
    pub source_keypoint: Keypoint,
}

impl PatchSet {
    pub fn new(
        label: u64,
        view_id: u64,
        patches: Vec<Patch>,
        source_keypoint: Keypoint,
    ) -> Result<Self> {
        if patches.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "patch set {label} needs at least 2 patches, got {}",
                patches.len()
            )));
        }
        let side = patches[0].side();
        if patches.iter().any(|p| p.side() != side) {
            return Err(Error::DimensionMismatch(format!(
                "patch set {label} mixes patch sides"
            )));
        }
        Ok(Self {
            label,
            view_id,
            patches,
            source_keypoint,
        })
    }

    pub fn side(&self) -> usize {
        self.patches[0].side()
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Row-major `rows x cols` matrix of descriptor vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite embedding value at index {i}"
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Stacks equally long rows; `cols` is needed for the empty case.
    pub fn from_rows(cols: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics, so handle zero-width matrices separately.
        let cols = self.cols.max(1);
        self.values
            .chunks_exact(cols)
            .take(if self.cols == 0 { 0 } else { self.rows })
    }

    /// Vertical concatenation.
    pub fn stack(&self, other: &EmbeddingMatrix) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(self.rows + other.rows, self.cols, values)
    }
}
