//! Wavelength intervals, band response functions, wavelength sampling with
//! quadrature weights, and the Fourier-feature spectral encoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::nn::Mlp;
use crate::numerics::{Graph, NodeId, NumericsError, ParamStore, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid interval at row {row}: [{start}, {end}] (start must be below end)")]
    InvalidInterval { row: usize, start: f64, end: f64 },
    #[error("wavelength interval matrix has no rows")]
    EmptyMatrix,
    #[error("spectral config: {0}")]
    Config(String),
    #[error("quadrature weights are degenerate (all response values are zero)")]
    DegenerateWeights,
    #[error("non-finite wavelength {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// One band's wavelength interval `[start, end]` in nanometers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, SpectralError> {
        if start.is_finite() && end.is_finite() && start < end {
            Ok(Self { start, end })
        } else {
            Err(SpectralError::InvalidInterval { row: 0, start, end })
        }
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn contains(&self, wavelength: f64) -> bool {
        (self.start..=self.end).contains(&wavelength)
    }
}

/// `C` band intervals; rows may overlap and have unequal widths.
#[derive(Clone, Debug, PartialEq)]
pub struct WavelengthIntervalMatrix {
    rows: Vec<Interval>,
}

impl WavelengthIntervalMatrix {
    pub fn validate(rows: &[[f64; 2]]) -> Result<Self, SpectralError> {
        if rows.is_empty() {
            return Err(SpectralError::EmptyMatrix);
        }
        let rows = rows
            .iter()
            .enumerate()
            .map(|(row, &[start, end])| {
                Interval::new(start, end).map_err(|_| SpectralError::InvalidInterval {
                    row,
                    start,
                    end,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }

    /// `count` contiguous equal-width intervals partitioning `[lo, hi]`.
    pub fn equal_width(lo: f64, hi: f64, count: usize) -> Result<Self, SpectralError> {
        if count == 0 {
            return Err(SpectralError::EmptyMatrix);
        }
        let step = (hi - lo) / count as f64;
        let rows: Vec<[f64; 2]> = (0..count)
            .map(|i| {
                let start = lo + step * i as f64;
                let end = if i + 1 == count {
                    hi
                } else {
                    lo + step * (i + 1) as f64
                };
                [start, end]
            })
            .collect();
        Self::validate(&rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Interval] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> Interval {
        self.rows[i]
    }

    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.rows.iter().map(|r| [r.start, r.end]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Gaussian,
    Uniform,
}

/// A band's response function over its interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseSpec {
    pub kind: ResponseKind,
    pub interval: Interval,
}

impl ResponseSpec {
    pub fn new(kind: ResponseKind, interval: Interval) -> Self {
        Self { kind, interval }
    }

    /// Gaussian mean: the interval midpoint.
    pub fn mu(&self) -> f64 {
        self.interval.midpoint()
    }

    /// Gaussian standard deviation: a sixth of the interval width.
    pub fn sigma(&self) -> f64 {
        self.interval.width() / 6.0
    }

    /// Response value at `wavelength`. The Gaussian is the untruncated normal
    /// density; the uniform density is zero outside the interval.
    pub fn density(&self, wavelength: f64) -> f64 {
        match self.kind {
            ResponseKind::Gaussian => {
                let s = self.sigma();
                let z = (wavelength - self.mu()) / s;
                (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            }
            ResponseKind::Uniform => {
                if self.interval.contains(wavelength) {
                    1.0 / self.interval.width()
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    /// `k` fresh draws from the response distribution per call.
    Stochastic { k: usize },
    /// Midpoints of `k` equal sub-intervals.
    FixedGrid { k: usize },
    /// The interval midpoint alone.
    Midpoint,
}

impl SamplingMode {
    pub fn k(&self) -> usize {
        match *self {
            Self::Stochastic { k } | Self::FixedGrid { k } => k,
            Self::Midpoint => 1,
        }
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if self.k() == 0 {
            return Err(SpectralError::Config("sampling needs K >= 1".into()));
        }
        Ok(())
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Self::Stochastic { .. })
    }
}

/// Wavelengths at which to evaluate radiance for one band. Every returned
/// value lies inside the interval.
pub fn sample_wavelengths<R: Rng + ?Sized>(
    spec: &ResponseSpec,
    mode: SamplingMode,
    rng: &mut R,
) -> Vec<f64> {
    let Interval { start, end } = spec.interval;
    match mode {
        SamplingMode::Midpoint => vec![spec.interval.midpoint()],
        SamplingMode::FixedGrid { k } => {
            let step = (end - start) / k as f64;
            (1..=k).map(|i| start + (i as f64 - 0.5) * step).collect()
        }
        SamplingMode::Stochastic { k } => match spec.kind {
            ResponseKind::Uniform => (0..k).map(|_| rng.random_range(start..end)).collect(),
            ResponseKind::Gaussian => {
                let normal = Normal::new(spec.mu(), spec.sigma())
                    .expect("sigma is positive for a valid interval");
                (0..k)
                    .map(|_| normal.sample(rng).clamp(start, end))
                    .collect()
            }
        },
    }
}

/// Normalized weights combining per-wavelength radiances into a band value.
pub fn quadrature_weights(
    spec: &ResponseSpec,
    wavelengths: &[f64],
    mode: SamplingMode,
) -> Result<Vec<f64>, SpectralError> {
    if wavelengths.is_empty() {
        return Err(SpectralError::DegenerateWeights);
    }
    match mode {
        SamplingMode::Midpoint => Ok(vec![1.0]),
        SamplingMode::Stochastic { .. } => {
            Ok(vec![1.0 / wavelengths.len() as f64; wavelengths.len()])
        }
        SamplingMode::FixedGrid { .. } => {
            let rho: Vec<f64> = wavelengths.iter().map(|&l| spec.density(l)).collect();
            let total: f64 = rho.iter().sum();
            if total.is_nan() || total <= 0.0 {
                return Err(SpectralError::DegenerateWeights);
            }
            Ok(rho.into_iter().map(|r| r / total).collect())
        }
    }
}

/// Multi-scale sinusoid parameters for the wavelength encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierConfig {
    pub scales: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self {
            scales: 16,
            lambda_min: 0.01,
            lambda_max: 1.0,
        }
    }
}

impl FourierConfig {
    pub fn validate(&self) -> Result<(), SpectralError> {
        if self.scales < 2 {
            return Err(SpectralError::Config(format!(
                "need at least 2 frequency scales, got {}",
                self.scales
            )));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max) {
            return Err(SpectralError::Config(format!(
                "scale bounds must satisfy 0 < lambda_min < lambda_max, got {} and {}",
                self.lambda_min, self.lambda_max
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.scales
    }

    /// `s_t = lambda_min · g^(t/(T−1))` with `g = lambda_max / lambda_min`.
    pub fn scale(&self, t: usize) -> f64 {
        let ratio = self.lambda_max / self.lambda_min;
        self.lambda_min * ratio.powf(t as f64 / (self.scales - 1) as f64)
    }
}

/// `[sin(λ/s_0), cos(λ/s_0), …, sin(λ/s_{T−1}), cos(λ/s_{T−1})]`.
pub fn fourier_features(
    normalized: f64,
    config: &FourierConfig,
) -> Result<Vec<f64>, SpectralError> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.dim());
    for t in 0..config.scales {
        let phase = normalized / config.scale(t);
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}

/// Global wavelength range used to map wavelengths into `[0, 1]` before encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavelengthRange {
    pub lo: f64,
    pub hi: f64,
}

impl WavelengthRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SpectralError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(SpectralError::InvalidInterval {
                row: 0,
                start: lo,
                end: hi,
            })
        }
    }

    pub fn normalize(&self, wavelength: f64) -> f64 {
        (wavelength - self.lo) / (self.hi - self.lo)
    }

    pub fn interval(&self) -> Interval {
        Interval {
            start: self.lo,
            end: self.hi,
        }
    }
}

/// Wavelength encoder: Fourier features followed by an MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEncoder {
    pub fourier: FourierConfig,
    pub range: WavelengthRange,
    pub mlp: Mlp,
}

impl SpectralEncoder {
    pub fn new(
        store: &mut ParamStore,
        fourier: FourierConfig,
        range: WavelengthRange,
        hidden: usize,
        hidden_layers: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, SpectralError> {
        fourier.validate()?;
        let mut widths = vec![fourier.dim()];
        widths.extend(std::iter::repeat_n(hidden, hidden_layers));
        widths.push(output);
        let mlp = Mlp::new(store, "spectral_encoder", &widths, rng);
        Ok(Self {
            fourier,
            range,
            mlp,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_width()
    }

    /// Fourier features for each wavelength as an `M×2T` matrix.
    pub fn features(&self, wavelengths: &[f64]) -> Result<Tensor, SpectralError> {
        let mut data = Vec::with_capacity(wavelengths.len() * self.fourier.dim());
        for &l in wavelengths {
            if !l.is_finite() {
                return Err(SpectralError::NonFinite(l));
            }
            data.extend(fourier_features(self.range.normalize(l), &self.fourier)?);
        }
        Ok(Tensor::from_vec(
            vec![wavelengths.len(), self.fourier.dim()],
            data,
        )?)
    }

    /// Embeddings of every wavelength as an `M×d` node.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        wavelengths: &[f64],
    ) -> Result<NodeId, SpectralError> {
        let features = g.constant(self.features(wavelengths)?);
        Ok(self.mlp.forward(g, store, features)?)
    }

    pub fn encode_wavelength(
        &self,
        store: &ParamStore,
        wavelength: f64,
    ) -> Result<Vec<f64>, SpectralError> {
        let mut g = Graph::new();
        let e = self.encode(&mut g, store, &[wavelength])?;
        Ok(g.value(e).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn interval_matrix_validation() {
        let m = WavelengthIntervalMatrix::validate(&[[400.0, 700.0]]).unwrap();
        assert_eq!(m.len(), 1);
        assert!(matches!(
            WavelengthIntervalMatrix::validate(&[[500.0, 500.0]]),
            Err(SpectralError::InvalidInterval { row: 0, .. })
        ));
        assert!(matches!(
            WavelengthIntervalMatrix::validate(&[[400.0, 450.0], [470.0, 460.0]]),
            Err(SpectralError::InvalidInterval { row: 1, .. })
        ));
        assert_eq!(
            WavelengthIntervalMatrix::validate(&[]),
            Err(SpectralError::EmptyMatrix)
        );
        // Overlapping, unequal widths are allowed.
        assert!(WavelengthIntervalMatrix::validate(&[[400.0, 500.0], [450.0, 470.0]]).is_ok());
    }

    #[test]
    fn hundred_and_two_bands_over_430_860() {
        let m = WavelengthIntervalMatrix::equal_width(430.0, 860.0, 102).unwrap();
        assert_eq!(m.len(), 102);
        let w = (860.0 - 430.0) / 102.0;
        assert!(m.rows().iter().all(|r| close(r.width(), w, 1e-9)));
        assert_eq!(m.row(0).start, 430.0);
        assert_eq!(m.row(101).end, 860.0);
    }

    #[test]
    fn response_parameters() {
        let g = ResponseSpec::new(ResponseKind::Gaussian, Interval::new(400.0, 700.0).unwrap());
        assert_eq!(g.mu(), 550.0);
        assert_eq!(g.sigma(), 50.0);
        let g6 = ResponseSpec::new(ResponseKind::Gaussian, Interval::new(123.0, 129.0).unwrap());
        assert_eq!(g6.sigma(), 1.0);
        let u = ResponseSpec::new(ResponseKind::Uniform, Interval::new(430.0, 860.0).unwrap());
        assert_eq!(u.density(500.0), 1.0 / 430.0);
        assert_eq!(u.density(429.0), 0.0);
        assert_eq!(u.density(861.0), 0.0);
    }

    #[test]
    fn fixed_grid_and_midpoint_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = ResponseSpec::new(ResponseKind::Gaussian, Interval::new(400.0, 700.0).unwrap());
        assert_eq!(
            sample_wavelengths(&spec, SamplingMode::FixedGrid { k: 3 }, &mut rng),
            vec![450.0, 550.0, 650.0]
        );
        assert_eq!(
            sample_wavelengths(&spec, SamplingMode::Midpoint, &mut rng),
            vec![550.0]
        );
    }

    #[test]
    fn stochastic_gaussian_mean_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let spec = ResponseSpec::new(ResponseKind::Gaussian, Interval::new(400.0, 700.0).unwrap());
        let draws = sample_wavelengths(&spec, SamplingMode::Stochastic { k: 10_000 }, &mut rng);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(close(mean, 550.0, 2.0), "mean {mean}");
        assert!(draws.iter().all(|&l| spec.interval.contains(l)));
    }

    #[test]
    fn weights_for_each_mode() {
        let iv = Interval::new(400.0, 700.0).unwrap();
        let g = ResponseSpec::new(ResponseKind::Gaussian, iv);
        let u = ResponseSpec::new(ResponseKind::Uniform, iv);
        assert_eq!(
            quadrature_weights(&g, &[550.0], SamplingMode::Midpoint).unwrap(),
            vec![1.0]
        );

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ls = sample_wavelengths(&u, SamplingMode::FixedGrid { k: 4 }, &mut rng);
        assert_eq!(
            quadrature_weights(&u, &ls, SamplingMode::FixedGrid { k: 4 }).unwrap(),
            vec![0.25; 4]
        );

        let ls = sample_wavelengths(&g, SamplingMode::FixedGrid { k: 3 }, &mut rng);
        let w = quadrature_weights(&g, &ls, SamplingMode::FixedGrid { k: 3 }).unwrap();
        // Grid points 450 and 650 sit at ±2σ: density ratio exp(−2).
        let side = (-2.0f64).exp();
        let center = 1.0 / (2.0 * side + 1.0);
        assert!(close(w[1], center, 1e-12));
        assert!(close(w[0], w[2], 1e-15));
        assert!(close(w.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn degenerate_weights_are_reported() {
        let u = ResponseSpec::new(ResponseKind::Uniform, Interval::new(400.0, 500.0).unwrap());
        assert_eq!(
            quadrature_weights(&u, &[600.0, 650.0], SamplingMode::FixedGrid { k: 2 }),
            Err(SpectralError::DegenerateWeights)
        );
    }

    #[test]
    fn fourier_feature_values() {
        let cfg = FourierConfig::default();
        let f = fourier_features(0.0, &cfg).unwrap();
        assert_eq!(f.len(), 32);
        for pair in f.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        let two = FourierConfig {
            scales: 2,
            lambda_min: 0.01,
            lambda_max: 1.0,
        };
        assert!(close(two.scale(0), 0.01, 1e-15) && close(two.scale(1), 1.0, 1e-15));
        let f = fourier_features(std::f64::consts::PI * 0.01, &two).unwrap();
        assert!(close(f[0], 0.0, 1e-12) && close(f[1], -1.0, 1e-12));
        let one = FourierConfig { scales: 1, ..two };
        assert!(matches!(
            fourier_features(0.3, &one),
            Err(SpectralError::Config(_))
        ));
    }

    #[test]
    fn encoder_shape_determinism_and_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let range = WavelengthRange::new(400.0, 700.0).unwrap();
        let enc = SpectralEncoder::new(
            &mut store,
            FourierConfig::default(),
            range,
            32,
            2,
            24,
            &mut rng,
        )
        .unwrap();
        let a = enc.encode_wavelength(&store, 512.0).unwrap();
        assert_eq!(a.len(), 24);
        assert_eq!(a, enc.encode_wavelength(&store, 512.0).unwrap());
        assert!(matches!(
            enc.encode_wavelength(&store, f64::NAN),
            Err(SpectralError::NonFinite(_))
        ));
        store.zero_prefix("spectral_encoder");
        assert!(enc
            .encode_wavelength(&store, 512.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    mod props {
        use proptest::prelude::*;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;

        use super::super::*;

        fn kinds() -> impl Strategy<Value = ResponseKind> {
            prop_oneof![Just(ResponseKind::Gaussian), Just(ResponseKind::Uniform)]
        }

        fn modes() -> impl Strategy<Value = SamplingMode> {
            prop_oneof![
                (1usize..40).prop_map(|k| SamplingMode::Stochastic { k }),
                (1usize..40).prop_map(|k| SamplingMode::FixedGrid { k }),
                Just(SamplingMode::Midpoint),
            ]
        }

        proptest! {
            #[test]
            fn weights_sum_to_one_and_samples_stay_inside(
                start in 300.0f64..900.0,
                width in 0.5f64..300.0,
                kind in kinds(),
                mode in modes(),
                seed in any::<u64>(),
            ) {
                let spec = ResponseSpec::new(kind, Interval::new(start, start + width).unwrap());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ls = sample_wavelengths(&spec, mode, &mut rng);
                prop_assert_eq!(ls.len(), mode.k());
                prop_assert!(ls.iter().all(|&l| spec.interval.contains(l)));
                let w = quadrature_weights(&spec, &ls, mode).unwrap();
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn fourier_features_are_bounded(l in -10.0f64..10.0, scales in 2usize..24) {
                let cfg = FourierConfig { scales, ..FourierConfig::default() };
                prop_assert!(fourier_features(l, &cfg).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
