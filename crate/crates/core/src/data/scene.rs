//! Analytic radiance fields and the band-integration oracle.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, HyperCube};
use crate::spectral::{
    Interval, ResponseKind, ResponseSpec, WavelengthIntervalMatrix, WavelengthRange,
};

/// Panel count of the composite Simpson rule used by the oracle.
pub const ORACLE_PANELS: usize = 1 << 14;

/// Anything that can report radiance at a normalized location and wavelength.
pub trait RadianceField {
    fn radiance(&self, x: [f64; 2], wavelength: f64) -> f64;
}

impl<F: Fn([f64; 2], f64) -> f64> RadianceField for F {
    fn radiance(&self, x: [f64; 2], wavelength: f64) -> f64 {
        self(x, wavelength)
    }
}

/// Composite Simpson's rule with `panels` (rounded up to even) sub-intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = (panels.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// `∫ ρ̃(λ) γ(x, λ) dλ` over the interval, with `ρ̃` the response density
/// renormalized to unit mass on the interval.
pub fn integrate_band_exact_with(
    field: &dyn RadianceField,
    x: [f64; 2],
    interval: Interval,
    kind: ResponseKind,
    panels: usize,
) -> f64 {
    let spec = ResponseSpec::new(kind, interval);
    let (a, b) = (interval.start, interval.end);
    let mass = simpson(|l| spec.density(l), a, b, panels);
    let total = simpson(|l| spec.density(l) * field.radiance(x, l), a, b, panels);
    total / mass
}

pub fn integrate_band_exact(
    field: &dyn RadianceField,
    x: [f64; 2],
    interval: Interval,
    kind: ResponseKind,
) -> f64 {
    integrate_band_exact_with(field, x, interval, kind, ORACLE_PANELS)
}

/// Centre of pixel `(i, j)` of an `h×w` grid in `[−1, 1]²`.
pub fn pixel_center(i: usize, j: usize, h: usize, w: usize) -> [f64; 2] {
    [
        -1.0 + (2 * i + 1) as f64 / h as f64,
        -1.0 + (2 * j + 1) as f64 / w as f64,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub components: usize,
    pub seed: u64,
    pub range: WavelengthRange,
}

/// Gaussian bump `exp(−(λ−c)²/(2w²))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralComponent {
    pub center: f64,
    pub width: f64,
}

impl SpectralComponent {
    pub fn value(&self, wavelength: f64) -> f64 {
        let z = (wavelength - self.center) / self.width;
        (-0.5 * z * z).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Wave {
    amplitude: f64,
    freq: [f64; 2],
    phase: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Blob {
    amplitude: f64,
    center: [f64; 2],
    radius: f64,
}

/// Smooth abundance map with values in `[0.05, 0.95]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialField {
    offset: f64,
    waves: Vec<Wave>,
    blobs: Vec<Blob>,
}

impl SpatialField {
    fn random(rng: &mut impl Rng, constant: bool) -> Self {
        if constant {
            return Self {
                offset: rng.random_range(0.2..0.9),
                waves: vec![],
                blobs: vec![],
            };
        }
        let waves: Vec<Wave> = (0..2)
            .map(|_| Wave {
                amplitude: rng.random_range(0.05..0.12)
                    * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                freq: [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)],
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let blobs: Vec<Blob> = (0..2)
            .map(|_| Blob {
                amplitude: rng.random_range(0.05..0.1)
                    * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                center: [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)],
                radius: rng.random_range(0.3..0.6),
            })
            .collect();
        Self {
            offset: 0.5,
            waves,
            blobs,
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let pi = std::f64::consts::PI;
        let mut v = self.offset;
        for w in &self.waves {
            v += w.amplitude * (pi * (w.freq[0] * x[0] + w.freq[1] * x[1]) + w.phase).sin();
        }
        for b in &self.blobs {
            let d2 = (x[0] - b.center[0]).powi(2) + (x[1] - b.center[1]).powi(2);
            v += b.amplitude * (-d2 / (2.0 * b.radius * b.radius)).exp();
        }
        v
    }
}

/// `γ(x, λ) = clamp01(gain · Σ_m a_m(x) · B_m(λ))`.
///
/// The gain is set so the sum never exceeds one, which keeps `γ` linear in
/// the abundances and lets rendering precompute per-band component integrals.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub components: Vec<SpectralComponent>,
    pub fields: Vec<SpatialField>,
    pub gain: f64,
}

impl SyntheticScene {
    pub fn generate(spec: SceneSpec) -> Result<Self, DataError> {
        Self::build(spec, false)
    }

    /// Scene whose abundances are constant in space.
    pub fn generate_constant(spec: SceneSpec) -> Result<Self, DataError> {
        Self::build(spec, true)
    }

    fn build(spec: SceneSpec, constant: bool) -> Result<Self, DataError> {
        if spec.components == 0 {
            return Err(DataError::Argument(
                "a scene needs at least one spectral component".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let WavelengthRange { lo, hi } = spec.range;
        let span = hi - lo;
        let m = spec.components as f64;
        let components: Vec<SpectralComponent> = (0..spec.components)
            .map(|i| SpectralComponent {
                center: lo + span * (i as f64 + 0.5 + rng.random_range(-0.3..0.3)) / m,
                width: span * rng.random_range(0.06..0.15),
            })
            .collect();
        let fields = (0..spec.components)
            .map(|_| SpatialField::random(&mut rng, constant))
            .collect();
        // A sum of Gaussians peaks inside the hull of its centres, which lies in the range.
        let peak = (0..=4096)
            .map(|i| {
                let l = lo + span * i as f64 / 4096.0;
                components.iter().map(|c| c.value(l)).sum::<f64>()
            })
            .fold(0.0, f64::max);
        Ok(Self {
            spec,
            components,
            fields,
            gain: 0.98 / peak,
        })
    }

    pub fn range(&self) -> WavelengthRange {
        self.spec.range
    }

    /// Abundances scaled by the gain, one per component.
    pub fn abundances(&self, x: [f64; 2]) -> Vec<f64> {
        self.fields.iter().map(|f| self.gain * f.value(x)).collect()
    }
}

impl RadianceField for SyntheticScene {
    fn radiance(&self, x: [f64; 2], wavelength: f64) -> f64 {
        let a = self.abundances(x);
        let s: f64 = a
            .iter()
            .zip(&self.components)
            .map(|(a, c)| a * c.value(wavelength))
            .sum();
        s.clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct BandKey {
    start: u64,
    end: u64,
    kind: ResponseKind,
}

/// Renders band values of one scene, caching per-band component integrals.
///
/// Band value = `Σ_m a_m(x) · ∫ ρ̃ B_m`, which equals the oracle integral
/// because the scene's gain keeps the clamp inactive.
#[derive(Clone, Debug)]
pub struct SceneRenderer {
    scene: SyntheticScene,
    cache: HashMap<BandKey, Vec<f64>>,
}

impl SceneRenderer {
    pub fn new(scene: SyntheticScene) -> Self {
        Self {
            scene,
            cache: HashMap::new(),
        }
    }

    pub fn scene(&self) -> &SyntheticScene {
        &self.scene
    }

    fn component_integrals(&mut self, interval: Interval, kind: ResponseKind) -> &[f64] {
        let key = BandKey {
            start: interval.start.to_bits(),
            end: interval.end.to_bits(),
            kind,
        };
        let scene = &self.scene;
        self.cache.entry(key).or_insert_with(|| {
            let spec = ResponseSpec::new(kind, interval);
            let (a, b) = (interval.start, interval.end);
            let mass = simpson(|l| spec.density(l), a, b, ORACLE_PANELS);
            scene
                .components
                .iter()
                .map(|c| simpson(|l| spec.density(l) * c.value(l), a, b, ORACLE_PANELS) / mass)
                .collect()
        })
    }

    /// All band values at one location.
    pub fn spectrum(
        &mut self,
        x: [f64; 2],
        bands: &WavelengthIntervalMatrix,
        kind: ResponseKind,
    ) -> Vec<f64> {
        let a = self.scene.abundances(x);
        bands
            .rows()
            .iter()
            .map(|&iv| {
                let integrals = self.component_integrals(iv, kind);
                a.iter()
                    .zip(integrals)
                    .map(|(a, i)| a * i)
                    .sum::<f64>()
                    .clamp(0.0, 1.0)
            })
            .collect()
    }

    pub fn render(
        &mut self,
        height: usize,
        width: usize,
        bands: &WavelengthIntervalMatrix,
        kind: ResponseKind,
    ) -> Result<HyperCube, DataError> {
        if height == 0 || width == 0 {
            return Err(DataError::Argument(format!(
                "cannot render a {height}x{width} cube"
            )));
        }
        for &iv in bands.rows() {
            self.component_integrals(iv, kind);
        }
        let mut values = Vec::with_capacity(height * width * bands.len());
        for i in 0..height {
            for j in 0..width {
                let s = self.spectrum(pixel_center(i, j, height, width), bands, kind);
                values.extend(s.into_iter().map(|v| v as f32));
            }
        }
        HyperCube::new(height, width, bands.clone(), self.scene.range(), values)
    }
}

pub fn render_cube(
    scene: &SyntheticScene,
    height: usize,
    width: usize,
    bands: &WavelengthIntervalMatrix,
    kind: ResponseKind,
) -> Result<HyperCube, DataError> {
    SceneRenderer::new(scene.clone()).render(height, width, bands, kind)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSetConfig {
    pub count: usize,
    pub components: usize,
    /// Scene `i` is generated from `seed + i`.
    pub seed: u64,
}

impl Default for SceneSetConfig {
    fn default() -> Self {
        Self {
            count: 64,
            components: 5,
            seed: 1000,
        }
    }
}

/// A fixed collection of scenes, each with its own band-integral cache.
#[derive(Clone, Debug)]
pub struct SceneSet {
    renderers: Vec<SceneRenderer>,
}

impl SceneSet {
    pub fn generate(config: SceneSetConfig, range: WavelengthRange) -> Result<Self, DataError> {
        if config.count == 0 {
            return Err(DataError::Argument(
                "a scene set needs at least one scene".into(),
            ));
        }
        let renderers = (0..config.count as u64)
            .map(|i| {
                let spec = SceneSpec {
                    components: config.components,
                    seed: config.seed.wrapping_add(i),
                    range,
                };
                SyntheticScene::generate(spec).map(SceneRenderer::new)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { renderers })
    }

    pub fn len(&self) -> usize {
        self.renderers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.renderers.is_empty()
    }

    pub fn renderer(&mut self, index: usize) -> &mut SceneRenderer {
        &mut self.renderers[index]
    }

    pub fn scene(&self, index: usize) -> &SyntheticScene {
        self.renderers[index].scene()
    }
}
