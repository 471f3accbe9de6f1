//! Randomly scaled training pairs: spectral and spatial downsampling plus
//! location/value/wavelength query sampling.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::resample::spatial_downsample;
use super::scene::{pixel_center, SceneRenderer};
use super::{DataError, HyperCube};
use crate::spatial::PixelQuery;
use crate::spectral::{ResponseKind, WavelengthIntervalMatrix, WavelengthRange};

/// `count` uniform-response input bands tiling the range, each shrunk by
/// `gap_fraction` of its slot so neighbouring bands leave gaps.
pub fn msi_bands(
    range: WavelengthRange,
    count: usize,
    gap_fraction: f64,
) -> Result<WavelengthIntervalMatrix, DataError> {
    let slot = (range.hi - range.lo) / count.max(1) as f64;
    let inset = 0.5 * gap_fraction * slot;
    let rows: Vec<[f64; 2]> = (0..count)
        .map(|i| {
            let start = range.lo + slot * i as f64;
            [start + inset, start + slot - inset]
        })
        .collect();
    Ok(WavelengthIntervalMatrix::validate(&rows)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub c_min: usize,
    pub c_max: usize,
    /// Input (multispectral) band intervals.
    pub input_bands: Vec<[f64; 2]>,
    pub input_response: ResponseKind,
    /// Response used to integrate ground-truth target bands.
    pub target_response: ResponseKind,
    /// HR pixels queried per pair.
    pub queries: usize,
}

impl PairConfig {
    pub fn new(range: WavelengthRange) -> Self {
        let input = msi_bands(range, 4, 0.1).expect("4 bands over a valid range");
        Self {
            p_min: 1.0,
            p_max: 4.0,
            c_min: 8,
            c_max: 31,
            input_bands: input.to_pairs(),
            input_response: ResponseKind::Uniform,
            target_response: ResponseKind::Uniform,
            queries: 256,
        }
    }

    pub fn validate(&self) -> Result<WavelengthIntervalMatrix, DataError> {
        if !(self.p_min >= 1.0 && self.p_max >= self.p_min && self.p_max.is_finite()) {
            return Err(DataError::Argument(format!(
                "scale range [{}, {}] needs 1 <= p_min <= p_max",
                self.p_min, self.p_max
            )));
        }
        if self.c_min == 0 || self.c_max < self.c_min {
            return Err(DataError::Argument(format!(
                "band range [{}, {}] needs 1 <= c_min <= c_max",
                self.c_min, self.c_max
            )));
        }
        if self.queries == 0 {
            return Err(DataError::Argument(
                "queries per pair must be positive".into(),
            ));
        }
        Ok(WavelengthIntervalMatrix::validate(&self.input_bands)?)
    }
}

/// One low-resolution input with sampled high-resolution band targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub input: HyperCube,
    pub queries: Vec<PixelQuery>,
    /// HR pixel `(row, col)` of each query.
    pub pixels: Vec<(usize, usize)>,
    /// `queries × C` target band values, row-major.
    pub targets: Vec<f64>,
    pub target_bands: WavelengthIntervalMatrix,
    pub scale: f64,
    pub hr_extent: (usize, usize),
}

impl TrainingSample {
    pub fn band_count(&self) -> usize {
        self.target_bands.len()
    }
}

/// Render the HR multispectral input at `round(base·p)` and downsample it by `p`.
pub fn low_res_input(
    renderer: &mut SceneRenderer,
    base_extent: usize,
    p: f64,
    input_bands: &WavelengthIntervalMatrix,
    input_response: ResponseKind,
) -> Result<(HyperCube, usize), DataError> {
    let hr = (base_extent as f64 * p).round().max(1.0) as usize;
    let hr_msi = renderer.render(hr, hr, input_bands, input_response)?;
    Ok((spatial_downsample(&hr_msi, p)?, hr))
}

pub fn make_training_pair<R: Rng + ?Sized>(
    renderer: &mut SceneRenderer,
    base_extent: usize,
    config: &PairConfig,
    rng: &mut R,
) -> Result<TrainingSample, DataError> {
    let input_bands = config.validate()?;
    let p = if config.p_max > config.p_min {
        rng.random_range(config.p_min..=config.p_max)
    } else {
        config.p_min
    };
    let c = rng.random_range(config.c_min..=config.c_max);
    let range = renderer.scene().range();
    let target_bands = WavelengthIntervalMatrix::equal_width(range.lo, range.hi, c)?;

    let (input, hr) = low_res_input(
        renderer,
        base_extent,
        p,
        &input_bands,
        config.input_response,
    )?;

    let total = hr * hr;
    let picked: Vec<usize> = if config.queries >= total {
        (0..total).collect()
    } else {
        index::sample(rng, total, config.queries).into_vec()
    };
    let cell = [2.0 / hr as f64, 2.0 / hr as f64];
    let mut queries = Vec::with_capacity(picked.len());
    let mut pixels = Vec::with_capacity(picked.len());
    let mut targets = Vec::with_capacity(picked.len() * c);
    for &flat in &picked {
        let (i, j) = (flat / hr, flat % hr);
        let x = pixel_center(i, j, hr, hr);
        let spectrum = renderer.spectrum(x, &target_bands, config.target_response);
        // Round through f32 so targets equal the stored HR cube values.
        targets.extend(spectrum.into_iter().map(|v| v as f32 as f64));
        queries.push(PixelQuery { coord: x, cell });
        pixels.push((i, j));
    }
    Ok(TrainingSample {
        input,
        queries,
        pixels,
        targets,
        target_bands,
        scale: p,
        hr_extent: (hr, hr),
    })
}
