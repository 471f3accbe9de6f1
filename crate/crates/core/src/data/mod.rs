//! Synthetic scenes, the band-integration oracle, cube resampling, training
//! pair generation, and cube file I/O.

mod cube;
pub mod io;
mod pipeline;
mod resample;
mod scene;

use std::path::Path;

use thiserror::Error;

pub use cube::HyperCube;
pub use io::{cube_file_size, decode_cube, encode_cube, read_cube, write_cube};
pub use pipeline::{low_res_input, make_training_pair, msi_bands, PairConfig, TrainingSample};
pub use resample::{
    downsampled_extent, resize_bicubic, resize_plane, spatial_downsample, spectral_downsample_cube,
};
pub use scene::{
    integrate_band_exact, integrate_band_exact_with, pixel_center, render_cube, simpson,
    RadianceField, SceneRenderer, SceneSet, SceneSetConfig, SceneSpec, SpatialField,
    SpectralComponent, SyntheticScene, ORACLE_PANELS,
};

use crate::spectral::{ResponseKind, SpectralError, WavelengthIntervalMatrix};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Argument(String),
    #[error("band cell {cell} of {target} is empty: the source has only {available} bands")]
    InsufficientBands {
        cell: usize,
        target: usize,
        available: usize,
    },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

impl DataError {
    pub(crate) fn format(offset: usize, reason: String) -> Self {
        Self::Format { offset, reason }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Spectral downsampling from the continuous scene: an exact render at
/// `target` equal-width bands over the global range.
pub fn spectral_downsample_scene(
    renderer: &mut SceneRenderer,
    height: usize,
    width: usize,
    target: usize,
    kind: ResponseKind,
) -> Result<HyperCube, DataError> {
    let range = renderer.scene().range();
    let bands = WavelengthIntervalMatrix::equal_width(range.lo, range.hi, target)?;
    renderer.render(height, width, &bands, kind)
}
