use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::spectral::{FourierConfig, ResponseKind, SamplingMode, WavelengthRange};

/// Response function and wavelength sampling scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Band midpoint only.
    #[serde(rename = "m")]
    M,
    #[serde(rename = "rf-gs")]
    RfGs,
    #[serde(rename = "rf-gf")]
    RfGf,
    #[serde(rename = "rf-us")]
    RfUs,
    #[serde(rename = "rf-uf")]
    RfUf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::M,
        Variant::RfGs,
        Variant::RfGf,
        Variant::RfUs,
        Variant::RfUf,
    ];

    pub fn response(self) -> ResponseKind {
        match self {
            Variant::RfGs | Variant::RfGf => ResponseKind::Gaussian,
            Variant::M | Variant::RfUs | Variant::RfUf => ResponseKind::Uniform,
        }
    }

    pub fn sampling(self, k: usize) -> SamplingMode {
        match self {
            Variant::M => SamplingMode::Midpoint,
            Variant::RfGs | Variant::RfUs => SamplingMode::Stochastic { k },
            Variant::RfGf | Variant::RfUf => SamplingMode::FixedGrid { k },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::M => "m",
            Variant::RfGs => "rf-gs",
            Variant::RfGf => "rf-gf",
            Variant::RfUs => "rf-us",
            Variant::RfUf => "rf-uf",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!("unknown variant {s:?}; expected one of m, rf-gs, rf-gf, rf-us, rf-uf")
            })
    }
}

/// How pixel features and wavelength embeddings combine into radiance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// `⟨MLP(e), h⟩`.
    Modulated,
    /// `MLP([e, h])` with a scalar output.
    Concatenated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub decoder_kind: DecoderKind,
    /// Wavelength samples per band (ignored by the midpoint variant).
    pub k: usize,
    pub input_bands: usize,
    pub range: WavelengthRange,
    pub encoder_width: usize,
    pub res_blocks: usize,
    pub feature_unfolding: bool,
    pub local_ensemble: bool,
    pub cell_decode: bool,
    pub pixel_hidden: usize,
    pub pixel_layers: usize,
    /// Width `d` shared by pixel features and wavelength embeddings.
    pub feature_dim: usize,
    pub fourier: FourierConfig,
    pub spectral_hidden: usize,
    pub spectral_layers: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
}

impl ModelConfig {
    /// Full-size defaults.
    pub fn standard(variant: Variant, input_bands: usize, range: WavelengthRange) -> Self {
        Self {
            variant,
            decoder_kind: DecoderKind::Modulated,
            k: 16,
            input_bands,
            range,
            encoder_width: 32,
            res_blocks: 4,
            feature_unfolding: true,
            local_ensemble: true,
            cell_decode: true,
            pixel_hidden: 256,
            pixel_layers: 4,
            feature_dim: 64,
            fourier: FourierConfig::default(),
            spectral_hidden: 512,
            spectral_layers: 2,
            head_hidden: 64,
            head_layers: 1,
        }
    }

    /// Reduced widths that train in seconds to minutes on one CPU core.
    pub fn compact(variant: Variant, input_bands: usize, range: WavelengthRange) -> Self {
        Self {
            encoder_width: 16,
            res_blocks: 2,
            pixel_hidden: 64,
            pixel_layers: 2,
            feature_dim: 16,
            spectral_hidden: 32,
            spectral_layers: 2,
            head_hidden: 32,
            head_layers: 1,
            ..Self::standard(variant, input_bands, range)
        }
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        self.variant.sampling(self.k)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("k", self.k),
            ("input_bands", self.input_bands),
            ("encoder_width", self.encoder_width),
            ("pixel_hidden", self.pixel_hidden),
            ("feature_dim", self.feature_dim),
            ("spectral_hidden", self.spectral_hidden),
            ("head_hidden", self.head_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        self.fourier.validate()?;
        Ok(())
    }
}
