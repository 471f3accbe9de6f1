//! Separable bicubic resampling and spectral band aggregation.

use super::{DataError, HyperCube};
use crate::spectral::WavelengthIntervalMatrix;

/// Keys cubic convolution kernel with `a = −0.5`.
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Half-sample symmetric reflection of an index into `0..n`.
fn reflect(s: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = s.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Per-output-sample taps as `(source index, weight)`. When shrinking, the
/// kernel is stretched by the scale factor (antialiasing); taps beyond the
/// border are reflected back into the source.
fn taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let first = (center - support).ceil() as isize;
            let last = (center + support).floor() as isize;
            let raw: Vec<(isize, f64)> = (first..=last)
                .map(|s| (s, cubic((s as f64 - center) / stretch)))
                .collect();
            let total: f64 = raw.iter().map(|t| t.1).sum();
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
            for (s, w) in raw {
                let s = reflect(s, src);
                match merged.iter_mut().find(|t| t.0 == s) {
                    Some(t) => t.1 += w / total,
                    None => merged.push((s, w / total)),
                }
            }
            merged
        })
        .collect()
}

/// Resample every band of a row-major `h×w` plane to `oh×ow`.
pub fn resize_plane(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let col_taps = taps(w, ow);
    let row_taps = taps(h, oh);
    let mut horiz = vec![0.0; h * ow];
    for i in 0..h {
        let row = &plane[i * w..(i + 1) * w];
        for (o, t) in col_taps.iter().enumerate() {
            horiz[i * ow + o] = t.iter().map(|&(s, wt)| wt * row[s]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (o, t) in row_taps.iter().enumerate() {
        for j in 0..ow {
            out[o * ow + j] = t.iter().map(|&(s, wt)| wt * horiz[s * ow + j]).sum();
        }
    }
    out
}

/// Bicubic resize of every band to `oh×ow`, clamped into `[0, 1]`.
pub fn resize_bicubic(cube: &HyperCube, oh: usize, ow: usize) -> Result<HyperCube, DataError> {
    if oh == 0 || ow == 0 {
        return Err(DataError::Argument(format!(
            "resize target {oh}x{ow} must be positive"
        )));
    }
    let (h, w, c) = (cube.height(), cube.width(), cube.band_count());
    if (oh, ow) == (h, w) {
        return Ok(cube.clone());
    }
    let mut values = vec![0.0f32; oh * ow * c];
    for b in 0..c {
        let out = resize_plane(&cube.plane(b), h, w, oh, ow);
        for (p, v) in out.into_iter().enumerate() {
            values[p * c + b] = v.clamp(0.0, 1.0) as f32;
        }
    }
    HyperCube::new(oh, ow, cube.bands().clone(), cube.range(), values)
}

/// Output extent for a downsampling factor.
pub fn downsampled_extent(extent: usize, p: f64) -> usize {
    (extent as f64 / p).round() as usize
}

/// Bicubic downsampling by a continuous factor `p ≥ 1`.
pub fn spatial_downsample(cube: &HyperCube, p: f64) -> Result<HyperCube, DataError> {
    if !(p.is_finite() && p >= 1.0) {
        return Err(DataError::Argument(format!(
            "downsampling factor must be >= 1, got {p}"
        )));
    }
    let oh = downsampled_extent(cube.height(), p);
    let ow = downsampled_extent(cube.width(), p);
    if oh < 1 || ow < 1 {
        return Err(DataError::Argument(format!(
            "downsampling {}x{} by {p} leaves no pixels",
            cube.height(),
            cube.width()
        )));
    }
    resize_bicubic(cube, oh, ow)
}

/// Average source bands into `target` equal-width intervals over the global range.
/// A source band belongs to the cell containing its midpoint.
pub fn spectral_downsample_cube(cube: &HyperCube, target: usize) -> Result<HyperCube, DataError> {
    let range = cube.range();
    let cells = WavelengthIntervalMatrix::equal_width(range.lo, range.hi, target)?;
    let c = cube.band_count();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); target];
    for (b, iv) in cube.bands().rows().iter().enumerate() {
        let mid = iv.midpoint();
        if let Some(cell) = cells.rows().iter().position(|cell| {
            mid >= cell.start && (mid < cell.end || cell.end == range.hi && mid <= cell.end)
        }) {
            members[cell].push(b);
        }
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(DataError::InsufficientBands {
            cell: empty,
            target,
            available: c,
        });
    }
    let mut values = Vec::with_capacity(cube.height() * cube.width() * target);
    for px in cube.values().chunks_exact(c) {
        for m in &members {
            let s: f64 = m.iter().map(|&b| px[b] as f64).sum();
            values.push((s / m.len() as f64) as f32);
        }
    }
    HyperCube::new(cube.height(), cube.width(), cells, range, values)
}
