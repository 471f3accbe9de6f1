//! Direct loop implementations of the metrics, used as oracles.

use crate::data::HyperCube;
use crate::eval::{SsimConfig, PSNR_CAP_DB};

pub fn psnr_loop(a: &HyperCube, b: &HyperCube, peak: f64) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..a.height() {
        for j in 0..a.width() {
            for c in 0..a.band_count() {
                let d = a.get(i, j, c) as f64 - b.get(i, j, c) as f64;
                acc += d * d;
                n += 1;
            }
        }
    }
    let mse = acc / n as f64;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Per window: weighted means, variances and covariance from their
/// definitions with the full 2-D Gaussian.
pub fn ssim_loop(a: &HyperCube, b: &HyperCube, cfg: &SsimConfig) -> f64 {
    let n = cfg.window;
    let mid = (n as f64 - 1.0) / 2.0;
    let mut w = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            let (du, dv) = (u as f64 - mid, v as f64 - mid);
            w[u * n + v] = (-(du * du + dv * dv) / (2.0 * cfg.sigma * cfg.sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    let mut band_sum = 0.0;
    for c in 0..a.band_count() {
        let mut acc = 0.0;
        let mut count = 0usize;
        for i in 0..=a.height() - n {
            for j in 0..=a.width() - n {
                let (mut ma, mut mb) = (0.0, 0.0);
                for u in 0..n {
                    for v in 0..n {
                        ma += w[u * n + v] * a.get(i + u, j + v, c) as f64;
                        mb += w[u * n + v] * b.get(i + u, j + v, c) as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for u in 0..n {
                    for v in 0..n {
                        let da = a.get(i + u, j + v, c) as f64 - ma;
                        let db = b.get(i + u, j + v, c) as f64 - mb;
                        va += w[u * n + v] * da * da;
                        vb += w[u * n + v] * db * db;
                        cov += w[u * n + v] * da * db;
                    }
                }
                acc += (2.0 * ma * mb + cfg.c1) * (2.0 * cov + cfg.c2)
                    / ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2));
                count += 1;
            }
        }
        band_sum += acc / count as f64;
    }
    band_sum / a.band_count() as f64
}

/// Mean of `arccos(⟨u,v⟩/(‖u‖‖v‖))` in degrees; zero-norm pixels count as 0.
pub fn sam_loop(a: &HyperCube, b: &HyperCube) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.height() {
        for j in 0..a.width() {
            let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
            for c in 0..a.band_count() {
                let (x, y) = (a.get(i, j, c) as f64, b.get(i, j, c) as f64);
                dot += x * y;
                nu += x * x;
                nv += y * y;
            }
            if nu > 0.0 && nv > 0.0 {
                acc += (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0).acos();
            }
        }
    }
    (acc / (a.height() * a.width()) as f64).to_degrees()
}
