//! 8-bit PNG previews of images, signed maps and deformation fields.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;

use mocomp::deform::DeformationField;

use crate::error::{CliError, Result};

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| CliError::io(path, e))?;
    w.write_image_data(data).map_err(|e| CliError::io(path, e))?;
    w.finish().map_err(|e| CliError::io(path, e))
}

/// Row `j` of the array is drawn as image row `N-1-j` so that `y` points up.
fn rows_up(a: &Array2<f64>) -> impl Iterator<Item = f64> + '_ {
    let n = a.nrows();
    (0..n).rev().flat_map(move |j| a.row(j).to_vec())
}

fn quantize(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Grayscale with a fixed window `[lo, hi]`.
pub fn save_gray(path: &Path, a: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let data: Vec<u8> = rows_up(a).map(|v| quantize(v, lo, hi)).collect();
    write_png(path, a.ncols(), a.nrows(), png::ColorType::Grayscale, &data)
}

/// Signed map with mid-gray at zero, scaled by the largest magnitude.
pub fn save_signed(path: &Path, a: &Array2<f64>) -> Result<()> {
    let m = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m = if m > 0.0 { m } else { 1.0 };
    save_gray(path, a, -m, m)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Displacement colour map: hue from the direction, value from the length
/// relative to `max_len` (the field's own maximum when `None`).
pub fn save_deformation(path: &Path, f: &DeformationField, max_len: Option<f64>) -> Result<()> {
    let (dx, dy) = f.displacement();
    let len = ndarray::Zip::from(&dx).and(&dy).map_collect(|a, b| a.hypot(*b));
    let m = max_len.unwrap_or_else(|| len.iter().fold(0.0f64, |m, v| m.max(*v)));
    let m = if m > 0.0 { m } else { 1.0 };
    let n = dx.nrows();
    let mut data = Vec::with_capacity(n * n * 3);
    for j in (0..n).rev() {
        for k in 0..n {
            let hue = dy[[j, k]].atan2(dx[[j, k]]) / std::f64::consts::TAU;
            data.extend(hsv_to_rgb(hue, 1.0, len[[j, k]] / m));
        }
    }
    write_png(path, n, n, png::ColorType::Rgb, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_endpoints() {
        assert_eq!(quantize(0.0, 0.0, 1.0), 0);
        assert_eq!(quantize(1.0, 0.0, 1.0), 255);
        assert_eq!(quantize(2.0, 0.0, 1.0), 255);
        assert_eq!(quantize(-1.0, 0.0, 1.0), 0);
    }

    #[test]
    fn primary_hues() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(1.0 / 3.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(2.0 / 3.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(0.5, 1.0, 0.0), [0, 0, 0]);
    }
}
