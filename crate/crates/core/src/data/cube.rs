use super::DataError;
use crate::spectral::{WavelengthIntervalMatrix, WavelengthRange};

/// `H×W×C` radiance cube with values in `[0, 1]`, stored pixel-major
/// (`((i·W) + j)·C + b`), plus its interval matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: WavelengthIntervalMatrix,
    range: WavelengthRange,
    values: Vec<f32>,
}

impl HyperCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: WavelengthIntervalMatrix,
        range: WavelengthRange,
        values: Vec<f32>,
    ) -> Result<Self, DataError> {
        if height == 0 || width == 0 {
            return Err(DataError::Argument(format!(
                "cube extent {height}x{width} must be positive"
            )));
        }
        let expected = height * width * bands.len();
        if values.len() != expected {
            return Err(DataError::Argument(format!(
                "{height}x{width}x{} cube needs {expected} values, got {}",
                bands.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Argument(format!(
                "value {} at index {pos} is outside [0, 1]",
                values[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            bands,
            range,
            values,
        })
    }

    /// Cube filled with one value.
    pub fn constant(
        height: usize,
        width: usize,
        bands: WavelengthIntervalMatrix,
        range: WavelengthRange,
        value: f32,
    ) -> Result<Self, DataError> {
        let n = height * width * bands.len();
        Self::new(height, width, bands, range, vec![value; n])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &WavelengthIntervalMatrix {
        &self.bands
    }

    pub fn range(&self) -> WavelengthRange {
        self.range
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, band: usize) -> f32 {
        self.values[(i * self.width + j) * self.bands.len() + band]
    }

    pub fn spectrum(&self, i: usize, j: usize) -> &[f32] {
        let c = self.bands.len();
        let start = (i * self.width + j) * c;
        &self.values[start..start + c]
    }

    /// One band as an `H×W` row-major plane.
    pub fn plane(&self, band: usize) -> Vec<f64> {
        let c = self.bands.len();
        self.values
            .iter()
            .skip(band)
            .step_by(c)
            .map(|&v| v as f64)
            .collect()
    }

    /// Channel-first `C×H×W` copy, the layout the image encoder consumes.
    pub fn channels_first(&self) -> Vec<f64> {
        let c = self.bands.len();
        let hw = self.height * self.width;
        let mut out = vec![0.0; c * hw];
        for (p, px) in self.values.chunks_exact(c).enumerate() {
            for (b, &v) in px.iter().enumerate() {
                out[b * hw + p] = v as f64;
            }
        }
        out
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.band_count() == other.band_count()
    }
}
