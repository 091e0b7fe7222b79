//! Bilinear resampling helpers. Pixel centres sit at integer coordinates.

use crate::types::Image;

/// Slack for sample points that land a rounding error outside the grid.
const EDGE_EPS: f64 = 1e-9;

#[inline]
fn lerp_at(img: &Image, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = f64::from(img.get(x0, y0));
    let v10 = f64::from(img.get(x1, y0));
    let v01 = f64::from(img.get(x0, y1));
    let v11 = f64::from(img.get(x1, y1));
    let top = v00 + fx * (v10 - v00);
    let bottom = v01 + fx * (v11 - v01);
    top + fy * (bottom - top)
}

/// Bilinear sample with replicated borders.
pub fn sample_clamped(img: &Image, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width() - 1) as f64);
    let y = y.clamp(0.0, (img.height() - 1) as f64);
    lerp_at(img, x, y)
}

/// Bilinear sample, or `None` when `(x, y)` lies outside the pixel grid.
pub fn sample_inside(img: &Image, x: f64, y: f64) -> Option<f64> {
    let xmax = (img.width() - 1) as f64;
    let ymax = (img.height() - 1) as f64;
    if !(x >= -EDGE_EPS && x <= xmax + EDGE_EPS && y >= -EDGE_EPS && y <= ymax + EDGE_EPS) {
        return None;
    }
    Some(lerp_at(img, x.clamp(0.0, xmax), y.clamp(0.0, ymax)))
}

/// Resizes the rectangle `[left, left + w) x [top, top + h)` of `img` to
/// `out_w x out_h` with half-pixel-centre bilinear interpolation, clamping
/// reads to the rectangle.
pub fn resize_region(
    img: &Image,
    left: usize,
    top: usize,
    w: usize,
    h: usize,
    out_w: usize,
    out_h: usize,
) -> Vec<f32> {
    debug_assert!(left + w <= img.width() && top + h <= img.height());
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for v in 0..out_h {
        let y = ((v as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64) + top as f64;
        for u in 0..out_w {
            let x = ((u as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64) + left as f64;
            out.push(lerp_at(img, x, y) as f32);
        }
    }
    out
}

/// Whole-image bilinear resize.
pub fn resize(img: &Image, out_w: usize, out_h: usize) -> Vec<f32> {
    resize_region(img, 0, 0, img.width(), img.height(), out_w, out_h)
}
