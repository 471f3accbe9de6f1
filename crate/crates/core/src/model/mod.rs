//! The assembled spatial-spectral implicit function: pixel features,
//! wavelength embeddings, a radiance head, and response quadrature.

mod checkpoint;
mod config;
mod head;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use config::{DecoderKind, ModelConfig, Variant};
pub use head::RadianceHead;

use crate::data::{DataError, HyperCube};
use crate::numerics::{Graph, NodeId, NumericsError, ParamStore, Tensor};
use crate::spatial::{
    DecoderConfig, EncoderConfig, FeatureMap, ImageEncoder, PixelDecoder, PixelQuery, SpatialError,
};
use crate::spectral::{
    quadrature_weights, sample_wavelengths, Interval, ResponseSpec, SamplingMode, SpectralEncoder,
    SpectralError, WavelengthIntervalMatrix,
};

/// Queries decoded per graph during whole-image inference.
pub const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Sampled wavelengths and quadrature weights for every band, band-major:
/// band `b` owns entries `b·k .. (b+1)·k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPlan {
    pub bands: WavelengthIntervalMatrix,
    pub k: usize,
    pub wavelengths: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SpectralPlan {
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        bands: &WavelengthIntervalMatrix,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mode = config.sampling_mode();
        let kind = config.variant.response();
        let mut wavelengths = Vec::with_capacity(bands.len() * mode.k());
        let mut weights = Vec::with_capacity(bands.len() * mode.k());
        for &iv in bands.rows() {
            let spec = ResponseSpec::new(kind, iv);
            let ls = sample_wavelengths(&spec, mode, rng);
            weights.extend(quadrature_weights(&spec, &ls, mode)?);
            wavelengths.extend(ls);
        }
        Ok(Self {
            bands: bands.clone(),
            k: mode.k(),
            wavelengths,
            weights,
        })
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    /// `(C·K)×C` matrix mapping per-wavelength radiances to band values.
    pub fn quadrature_matrix(&self) -> Tensor {
        let c = self.band_count();
        let mut q = vec![0.0; self.wavelengths.len() * c];
        for (m, &w) in self.weights.iter().enumerate() {
            q[m * c + m / self.k] = w;
        }
        Tensor::from_vec(vec![self.wavelengths.len(), c], q).expect("plan sizes agree")
    }
}

/// One band value with the samples that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct BandPrediction {
    pub value: f64,
    pub radiances: Vec<f64>,
    pub weights: Vec<f64>,
    pub wavelengths: Vec<f64>,
}

impl BandPrediction {
    /// Sums `w_k · s_k` left to right.
    pub fn combine(wavelengths: Vec<f64>, radiances: Vec<f64>, weights: Vec<f64>) -> Self {
        let value = radiances
            .iter()
            .zip(&weights)
            .fold(0.0, |acc, (r, w)| acc + w * r);
        Self {
            value,
            radiances,
            weights,
            wavelengths,
        }
    }
}

/// Band quadrature with an arbitrary radiance function in place of the network.
pub fn quadrature_band<R: Rng + ?Sized>(
    mut radiance: impl FnMut(f64) -> f64,
    spec: &ResponseSpec,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<BandPrediction, ModelError> {
    mode.validate()?;
    let wavelengths = sample_wavelengths(spec, mode, rng);
    let weights = quadrature_weights(spec, &wavelengths, mode)?;
    let radiances = wavelengths.iter().map(|&l| radiance(l)).collect();
    Ok(BandPrediction::combine(wavelengths, radiances, weights))
}

/// Anything that maps a low-resolution cube to a target grid and band set.
pub trait SuperResolver {
    fn super_resolve(
        &self,
        input: &HyperCube,
        p: f64,
        bands: &WavelengthIntervalMatrix,
        rng: &mut dyn rand::RngCore,
    ) -> Result<HyperCube, ModelError>;
}

/// Output grid for an upsampling factor.
pub fn output_extent(input: &HyperCube, p: f64) -> Result<(usize, usize), ModelError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(ModelError::Argument(format!(
            "scale must be positive, got {p}"
        )));
    }
    let h = (p * input.height() as f64).round() as usize;
    let w = (p * input.width() as f64).round() as usize;
    if h == 0 || w == 0 {
        return Err(ModelError::Argument(format!(
            "scale {p} maps {}x{} to an empty grid",
            input.height(),
            input.width()
        )));
    }
    Ok((h, w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsifModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: ImageEncoder,
    pub pixel_decoder: PixelDecoder,
    pub spectral_encoder: SpectralEncoder,
    pub head: RadianceHead,
}

impl SsifModel {
    /// Freshly initialized parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = ImageEncoder::new(
            &mut params,
            EncoderConfig {
                in_channels: config.input_bands,
                width: config.encoder_width,
                res_blocks: config.res_blocks,
            },
            &mut rng,
        )?;
        let pixel_decoder = PixelDecoder::new(
            &mut params,
            config.encoder_width,
            DecoderConfig {
                feature_unfolding: config.feature_unfolding,
                local_ensemble: config.local_ensemble,
                cell_decode: config.cell_decode,
                hidden: config.pixel_hidden,
                hidden_layers: config.pixel_layers,
                output: config.feature_dim,
            },
            &mut rng,
        )?;
        let spectral_encoder = SpectralEncoder::new(
            &mut params,
            config.fourier,
            config.range,
            config.spectral_hidden,
            config.spectral_layers,
            config.feature_dim,
            &mut rng,
        )?;
        let head = RadianceHead::new(
            &mut params,
            config.decoder_kind,
            config.feature_dim,
            config.head_hidden,
            config.head_layers,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            encoder,
            pixel_decoder,
            spectral_encoder,
            head,
        })
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &HyperCube,
    ) -> Result<FeatureMap, ModelError> {
        Ok(self.encoder.encode(g, store, input)?)
    }

    /// `N×M` radiances for every (query, wavelength) pair.
    pub fn radiance(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fmap: &FeatureMap,
        queries: &[PixelQuery],
        wavelengths: &[f64],
    ) -> Result<NodeId, ModelError> {
        let h = self.pixel_decoder.decode(g, store, fmap, queries)?;
        let e = self.spectral_encoder.encode(g, store, wavelengths)?;
        Ok(self.head.decode(g, store, h, e)?)
    }

    /// `N×C` band predictions from an already encoded input.
    pub fn bands_from_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fmap: &FeatureMap,
        queries: &[PixelQuery],
        plan: &SpectralPlan,
    ) -> Result<NodeId, ModelError> {
        let rad = self.radiance(g, store, fmap, queries, &plan.wavelengths)?;
        let q = g.constant(plan.quadrature_matrix());
        Ok(g.matmul(rad, q)?)
    }

    /// Full forward pass from the low-resolution cube to `N×C` band predictions.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &HyperCube,
        queries: &[PixelQuery],
        plan: &SpectralPlan,
    ) -> Result<NodeId, ModelError> {
        let fmap = self.encode(g, store, input)?;
        self.bands_from_features(g, store, &fmap, queries, plan)
    }

    /// One band at one location, with its per-wavelength radiances.
    pub fn predict_band<R: Rng + ?Sized>(
        &self,
        input: &HyperCube,
        query: PixelQuery,
        interval: Interval,
        rng: &mut R,
    ) -> Result<BandPrediction, ModelError> {
        let bands = WavelengthIntervalMatrix::validate(&[[interval.start, interval.end]])?;
        let plan = SpectralPlan::new(&self.config, &bands, rng)?;
        let mut g = Graph::new();
        let fmap = self.encode(&mut g, &self.params, input)?;
        let rad = self.radiance(&mut g, &self.params, &fmap, &[query], &plan.wavelengths)?;
        let radiances = g.value(rad).data().to_vec();
        Ok(BandPrediction::combine(
            plan.wavelengths,
            radiances,
            plan.weights,
        ))
    }

    fn features(&self, input: &HyperCube) -> Result<(Tensor, FeatureMap), ModelError> {
        let mut g = Graph::new();
        let fmap = self.encode(&mut g, &self.params, input)?;
        Ok((g.value(fmap.node).clone(), fmap))
    }

    /// Predict every pixel of the `round(p·h)×round(p·w)` grid at `bands`.
    /// Stochastic variants draw fresh wavelengths for every chunk of queries.
    pub fn super_resolve<R: Rng + ?Sized>(
        &self,
        input: &HyperCube,
        p: f64,
        bands: &WavelengthIntervalMatrix,
        rng: &mut R,
    ) -> Result<HyperCube, ModelError> {
        let (oh, ow) = output_extent(input, p)?;
        let (features, fmap) = self.features(input)?;
        let queries = PixelQuery::grid(oh, ow);
        let c = bands.len();
        let mut values = Vec::with_capacity(oh * ow * c);
        for chunk in queries.chunks(INFERENCE_CHUNK) {
            let plan = SpectralPlan::new(&self.config, bands, rng)?;
            let mut g = Graph::new();
            let node = g.constant(features.clone());
            let fm = FeatureMap { node, ..fmap };
            let out = self.bands_from_features(&mut g, &self.params, &fm, chunk, &plan)?;
            let data = g.value(out).data();
            if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite(format!("prediction {bad}")).into());
            }
            values.extend(data.iter().map(|&v| v.clamp(0.0, 1.0) as f32));
        }
        Ok(HyperCube::new(
            oh,
            ow,
            bands.clone(),
            input.range(),
            values,
        )?)
    }

    /// Spectral basis functions at each wavelength: the `d`-vector the
    /// pixel feature is paired with (`MLP_spec(e)` for the modulated head,
    /// the raw embedding otherwise).
    pub fn spectral_basis(&self, wavelengths: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut g = Graph::new();
        let e = self
            .spectral_encoder
            .encode(&mut g, &self.params, wavelengths)?;
        let basis = self.head.basis(&mut g, &self.params, e)?;
        let d = g.shape(basis)[1];
        Ok(g.value(basis)
            .data()
            .chunks_exact(d)
            .map(<[f64]>::to_vec)
            .collect())
    }
}

impl SuperResolver for SsifModel {
    fn super_resolve(
        &self,
        input: &HyperCube,
        p: f64,
        bands: &WavelengthIntervalMatrix,
        rng: &mut dyn rand::RngCore,
    ) -> Result<HyperCube, ModelError> {
        SsifModel::super_resolve(self, input, p, bands, rng)
    }
}

#[cfg(test)]
mod tests;
