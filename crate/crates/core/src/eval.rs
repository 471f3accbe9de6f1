//! Image-quality metrics, the scale × band-count evaluation sweep, and the
//! spectral basis dump.

use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    low_res_input, msi_bands, pixel_center, DataError, HyperCube, RadianceField, SceneRenderer,
    SceneSet, SceneSetConfig, SyntheticScene,
};
use crate::model::{output_extent, quadrature_band, ModelError, SsifModel, SuperResolver};
use crate::spectral::{
    ResponseKind, ResponseSpec, SamplingMode, SpectralError, WavelengthIntervalMatrix,
    WavelengthRange,
};
use crate::train::TrainConfig;

/// PSNR reported for identical cubes.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("eval config: {0}")]
    Config(String),
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn check_shapes(a: &HyperCube, b: &HyperCube) -> Result<(), EvalError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(EvalError::Argument(format!(
            "cube shapes differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.band_count(),
            b.height(),
            b.width(),
            b.band_count()
        )))
    }
}

/// `10·log10(peak²/MSE)` over all entries, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &HyperCube, b: &HyperCube, peak: f64) -> Result<f64, EvalError> {
    check_shapes(a, b)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(EvalError::Argument(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let n = a.values().len() as f64;
    let mse = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Gaussian-window SSIM settings at unit peak.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimConfig {
    /// Normalized 1-D window; the 2-D window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let mid = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let t = i as f64 - mid;
                (-t * t / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// Valid-mode separable filter of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = k
                .iter()
                .enumerate()
                .map(|(t, kt)| kt * plane[i * w + j + t])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = k
                .iter()
                .enumerate()
                .map(|(t, kt)| kt * rows[(i + t) * ow + j])
                .sum();
        }
    }
    out
}

/// SSIM of one band plane, averaged over all valid window positions.
pub fn ssim_plane(
    a: &[f64],
    b: &[f64],
    h: usize,
    w: usize,
    cfg: &SsimConfig,
) -> Result<f64, EvalError> {
    if h < cfg.window || w < cfg.window {
        return Err(EvalError::Argument(format!(
            "ssim needs at least {0}x{0} pixels, got {h}x{w}",
            cfg.window
        )));
    }
    let k = cfg.kernel();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(a, a), h, w, &k);
    let bb = filter_valid(&prod(b, b), h, w, &k);
    let ab = filter_valid(&prod(a, b), h, w, &k);
    let mut acc = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + cfg.c1) * (2.0 * cov + cfg.c2))
            / ((ma * ma + mb * mb + cfg.c1) * (va + vb + cfg.c2));
    }
    Ok(acc / mu_a.len() as f64)
}

/// Per-band SSIM averaged over bands.
pub fn ssim_with(a: &HyperCube, b: &HyperCube, cfg: &SsimConfig) -> Result<f64, EvalError> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    let mut acc = 0.0;
    for band in 0..a.band_count() {
        acc += ssim_plane(&a.plane(band), &b.plane(band), h, w, cfg)?;
    }
    Ok(acc / a.band_count() as f64)
}

pub fn ssim(a: &HyperCube, b: &HyperCube) -> Result<f64, EvalError> {
    ssim_with(a, b, &SsimConfig::default())
}

/// Angle in radians between two spectra; 0 when either has zero norm.
pub fn spectral_angle(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    // 2·atan2(|û − v̂|, |û + v̂|) stays accurate for nearly parallel spectra.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in u.iter().zip(v) {
        let (p, q) = (x / nu, y / nv);
        diff += (p - q) * (p - q);
        sum += (p + q) * (p + q);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Mean per-pixel spectral angle in degrees.
pub fn sam(a: &HyperCube, b: &HyperCube) -> Result<f64, EvalError> {
    check_shapes(a, b)?;
    if a.band_count() < 2 {
        return Err(EvalError::Argument("sam needs at least two bands".into()));
    }
    let c = a.band_count();
    let mut acc = 0.0;
    let (mut u, mut v) = (vec![0.0; c], vec![0.0; c]);
    for (pa, pb) in a.values().chunks_exact(c).zip(b.values().chunks_exact(c)) {
        for q in 0..c {
            u[q] = pa[q] as f64;
            v[q] = pb[q] as f64;
        }
        acc += spectral_angle(&u, &v);
    }
    Ok((acc / (a.height() * a.width()) as f64).to_degrees())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sam_deg: f64,
}

impl Metrics {
    pub fn compute(pred: &HyperCube, truth: &HyperCube) -> Result<Self, EvalError> {
        Ok(Self {
            psnr_db: psnr(pred, truth, 1.0)?,
            ssim: ssim(pred, truth)?,
            sam_deg: sam(pred, truth)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub range: WavelengthRange,
    pub scales: Vec<f64>,
    pub band_counts: Vec<usize>,
    /// Largest scale and band count seen in training.
    pub trained_p_max: f64,
    pub trained_c_max: usize,
    /// Low-resolution input extent.
    pub base_extent: usize,
    pub scenes: SceneSetConfig,
    pub input_bands: Vec<[f64; 2]>,
    pub input_response: ResponseKind,
    pub target_response: ResponseKind,
    pub seed: u64,
}

impl EvalConfig {
    pub fn standard(range: WavelengthRange) -> Self {
        Self {
            range,
            scales: vec![2.0, 4.0, 6.0],
            band_counts: vec![8, 16, 31, 62],
            trained_p_max: 4.0,
            trained_c_max: 31,
            base_extent: 16,
            scenes: SceneSetConfig {
                count: 4,
                components: 5,
                seed: 5000,
            },
            input_bands: msi_bands(range, 4, 0.1)
                .expect("4 bands over a valid range")
                .to_pairs(),
            input_response: ResponseKind::Uniform,
            target_response: ResponseKind::Uniform,
            seed: 0,
        }
    }

    /// The standard sweep, with the input sensor and trained ranges of `train`.
    pub fn for_training(train: &TrainConfig) -> Self {
        Self {
            trained_p_max: train.pairs.p_max,
            trained_c_max: train.pairs.c_max,
            scenes: SceneSetConfig {
                components: train.scenes.components,
                ..Self::standard(train.model.range).scenes
            },
            input_bands: train.pairs.input_bands.clone(),
            input_response: train.pairs.input_response,
            target_response: train.pairs.target_response,
            ..Self::standard(train.model.range)
        }
    }

    pub fn validate(&self) -> Result<WavelengthIntervalMatrix, EvalError> {
        if self.scales.is_empty() || self.band_counts.is_empty() {
            return Err(EvalError::Config(
                "scales and band_counts must be non-empty".into(),
            ));
        }
        if let Some(p) = self.scales.iter().find(|p| !(**p >= 1.0 && p.is_finite())) {
            return Err(EvalError::Config(format!("scale {p} must be >= 1")));
        }
        if self.band_counts.contains(&0) {
            return Err(EvalError::Config("band counts must be positive".into()));
        }
        if self.base_extent == 0 || self.scenes.count == 0 || self.scenes.components == 0 {
            return Err(EvalError::Config(
                "base_extent, scenes.count and scenes.components must be positive".into(),
            ));
        }
        Ok(WavelengthIntervalMatrix::validate(&self.input_bands)?)
    }

    pub fn is_out_of_distribution(&self, p: f64, c: usize) -> bool {
        p > self.trained_p_max || c > self.trained_c_max
    }
}

/// One sweep cell, averaged over scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub p: f64,
    pub c: usize,
    pub ood: bool,
    pub metrics: Metrics,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ssim: SsimConfig,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, p: f64, c: usize) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.p == p && r.c == c)
    }
}

/// Inputs handed to a resolver for one (cell, scene).
pub struct EvalCase<'a> {
    pub scene_index: usize,
    pub scene: &'a SyntheticScene,
    pub input: &'a HyperCube,
    pub p: f64,
    pub bands: &'a WavelengthIntervalMatrix,
    pub rng: &'a mut ChaCha8Rng,
}

/// RNG of sweep cell `index`.
pub fn cell_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + index as u64);
    rng
}

/// Sweep with arbitrary resolver and ground-truth renderers. Rows follow
/// `scales` outer, `band_counts` inner; metrics are per image, then averaged.
pub fn sweep_eval_with(
    cfg: &EvalConfig,
    mut resolve: impl FnMut(EvalCase<'_>) -> Result<HyperCube, EvalError>,
    mut truth: impl FnMut(
        &mut SceneRenderer,
        (usize, usize),
        &WavelengthIntervalMatrix,
    ) -> Result<HyperCube, EvalError>,
) -> Result<EvalReport, EvalError> {
    let input_bands = cfg.validate()?;
    let range = cfg.range;
    let mut scenes = SceneSet::generate(cfg.scenes, range)?;
    let mut rows = Vec::with_capacity(cfg.scales.len() * cfg.band_counts.len());
    for (pi, &p) in cfg.scales.iter().enumerate() {
        let inputs = (0..scenes.len())
            .map(|s| {
                low_res_input(
                    scenes.renderer(s),
                    cfg.base_extent,
                    p,
                    &input_bands,
                    cfg.input_response,
                )
                .map(|(cube, _)| cube)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (ci, &c) in cfg.band_counts.iter().enumerate() {
            let start = Instant::now();
            let bands = WavelengthIntervalMatrix::equal_width(range.lo, range.hi, c)?;
            let mut rng = cell_rng(cfg.seed, pi * cfg.band_counts.len() + ci);
            let mut sum = [0.0; 3];
            for (s, input) in inputs.iter().enumerate() {
                let extent = output_extent(input, p)?;
                let reference = truth(scenes.renderer(s), extent, &bands)?;
                let pred = resolve(EvalCase {
                    scene_index: s,
                    scene: scenes.scene(s),
                    input,
                    p,
                    bands: &bands,
                    rng: &mut rng,
                })?;
                let m = Metrics::compute(&pred, &reference)?;
                sum[0] += m.psnr_db;
                sum[1] += m.ssim;
                sum[2] += m.sam_deg;
            }
            let n = inputs.len() as f64;
            rows.push(EvalRow {
                p,
                c,
                ood: cfg.is_out_of_distribution(p, c),
                metrics: Metrics {
                    psnr_db: sum[0] / n,
                    ssim: sum[1] / n,
                    sam_deg: sum[2] / n,
                },
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(EvalReport {
        ssim: SsimConfig::default(),
        rows,
    })
}

/// Exact band renders of the scene.
pub fn oracle_truth(
    kind: ResponseKind,
) -> impl FnMut(
    &mut SceneRenderer,
    (usize, usize),
    &WavelengthIntervalMatrix,
) -> Result<HyperCube, EvalError> {
    move |renderer, (h, w), bands| Ok(renderer.render(h, w, bands, kind)?)
}

/// Sweep one model against exact renders: every cell uses the same model.
pub fn sweep_eval(model: &dyn SuperResolver, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    sweep_eval_with(
        cfg,
        |case| Ok(model.super_resolve(case.input, case.p, case.bands, case.rng)?),
        oracle_truth(cfg.target_response),
    )
}

/// Super-resolution with the scene's true radiance in place of the network:
/// every output pixel is `quadrature_band` of `γ(x, ·)` at its centre.
pub fn oracle_super_resolve(
    field: &dyn RadianceField,
    extent: (usize, usize),
    bands: &WavelengthIntervalMatrix,
    range: WavelengthRange,
    kind: ResponseKind,
    mode: SamplingMode,
    rng: &mut dyn RngCore,
) -> Result<HyperCube, EvalError> {
    let (h, w) = extent;
    let mut values = Vec::with_capacity(h * w * bands.len());
    for i in 0..h {
        for j in 0..w {
            let x = pixel_center(i, j, h, w);
            for &iv in bands.rows() {
                let spec = ResponseSpec::new(kind, iv);
                let band = quadrature_band(|l| field.radiance(x, l), &spec, mode, rng)?;
                values.push(band.value.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(HyperCube::new(h, w, bands.clone(), range, values)?)
}

/// Report CSV. The SSIM settings are frozen in a leading comment line; with
/// `timing` off the wall-clock column is 0 so reruns are byte-identical.
pub fn write_report_csv(
    out: &mut impl Write,
    report: &EvalReport,
    timing: bool,
) -> std::io::Result<()> {
    let s = report.ssim;
    writeln!(
        out,
        "# ssim window={} sigma={} c1={:e} c2={:e}; psnr peak=1 cap={}",
        s.window, s.sigma, s.c1, s.c2, PSNR_CAP_DB
    )?;
    writeln!(out, "p,C,ood,psnr_db,ssim,sam_deg,wall_ms")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.3}",
            r.p,
            r.c,
            if r.ood { "out" } else { "in" },
            r.metrics.psnr_db,
            r.metrics.ssim,
            r.metrics.sam_deg,
            if timing { r.wall_ms } else { 0.0 }
        )?;
    }
    Ok(())
}

/// Basis curves of `model` at each wavelength of `grid`.
pub fn dump_spectral_basis(model: &SsifModel, grid: &[f64]) -> Result<Vec<Vec<f64>>, EvalError> {
    Ok(model.spectral_basis(grid)?)
}

/// `lambda, e_0 .. e_{d-1}` with one row per wavelength.
pub fn write_basis_csv(
    out: &mut impl Write,
    grid: &[f64],
    basis: &[Vec<f64>],
) -> std::io::Result<()> {
    let d = basis.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("lambda".to_string())
        .chain((0..d).map(|j| format!("e_{j}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (l, row) in grid.iter().zip(basis) {
        let cells: Vec<String> = std::iter::once(format!("{l}"))
            .chain(row.iter().map(|v| format!("{v:.9e}")))
            .collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// `n` evenly spaced wavelengths from `lo` to `hi` inclusive.
pub fn wavelength_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests;
