//! Acceptance criteria as runnable checks, shared by the `acceptance` test
//! target and the CLI `selftest` subcommand.

pub mod reference;

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{
    decode_cube, encode_cube, integrate_band_exact, DataError, HyperCube, PairConfig, SceneSet,
    SceneSetConfig,
};
use crate::eval::{psnr, sam, ssim, sweep_eval, EvalConfig, EvalError, EvalReport, SsimConfig};
use crate::model::{
    encode_checkpoint, quadrature_band, DecoderKind, ModelConfig, ModelError, SsifModel, Variant,
};
use crate::numerics::{grad_check, GradCheckConfig, NumericsError};
use crate::numerics::{AdamState, Tensor};
use crate::spectral::{
    Interval, ResponseKind, ResponseSpec, SamplingMode, SpectralError, WavelengthIntervalMatrix,
    WavelengthRange,
};
use crate::train::{
    batch_gradients, l1_loss_node, pair_rng, prepare_pair, train_step, PreparedPair, TrainConfig,
    TrainError, Trainer,
};

#[derive(Debug, Error)]
pub enum AcceptanceError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Result of one criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(
    id: u32,
    name: &'static str,
    check: impl FnOnce() -> Result<(bool, String), AcceptanceError>,
) -> Outcome {
    let start = Instant::now();
    let (passed, detail) = match check() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn range() -> WavelengthRange {
    WavelengthRange::new(400.0, 700.0).expect("valid range")
}

fn random_interval(rng: &mut impl Rng, range: WavelengthRange) -> Interval {
    let width = rng.random_range(5.0..100.0);
    let start = rng.random_range(range.lo..range.hi - width);
    Interval::new(start, start + width).expect("positive width")
}

/// FixedGrid K=64 quadrature of the true radiance against the exact band
/// integral, and the 1000-trial mean of stochastic quadrature.
pub fn quadrature_oracle() -> Outcome {
    timed(1, "quadrature oracle", || {
        let range = range();
        let scenes = SceneSet::generate(
            SceneSetConfig {
                count: 5,
                components: 5,
                seed: 7000,
            },
            range,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst_rel = 0.0f64;
        let kinds = [ResponseKind::Uniform, ResponseKind::Gaussian];
        for probe in 0..100 {
            let scene = scenes.scene(probe % 5);
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let iv = random_interval(&mut rng, range);
            let kind = kinds[probe % 2];
            let exact = integrate_band_exact(scene, x, iv, kind);
            let spec = ResponseSpec::new(kind, iv);
            let q = quadrature_band(
                |l| crate::data::RadianceField::radiance(scene, x, l),
                &spec,
                SamplingMode::FixedGrid { k: 64 },
                &mut rng,
            )?;
            worst_rel = worst_rel.max((q.value - exact).abs() / exact.abs());
        }

        let mut worst_z = 0.0f64;
        for probe in 0..10 {
            let scene = scenes.scene(probe % 5);
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let iv = random_interval(&mut rng, range);
            let kind = kinds[probe % 2];
            let exact = integrate_band_exact(scene, x, iv, kind);
            let spec = ResponseSpec::new(kind, iv);
            let trials = (0..1000)
                .map(|_| {
                    quadrature_band(
                        |l| crate::data::RadianceField::radiance(scene, x, l),
                        &spec,
                        SamplingMode::Stochastic { k: 16 },
                        &mut rng,
                    )
                    .map(|b| b.value)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let n = trials.len() as f64;
            let mean = trials.iter().sum::<f64>() / n;
            let var = trials.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            worst_z = worst_z.max((mean - exact).abs() / se);
        }
        Ok((
            worst_rel < 1e-3 && worst_z < 3.0,
            format!(
                "FixedGrid K=64 max rel err {worst_rel:.2e} (< 1e-3); stochastic max |mean - exact|/SE {worst_z:.2} (< 3)"
            ),
        ))
    })
}

/// Tiny full model: d_I=8, d=16, K=4, one 8×8 training input.
pub fn tiny_model_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        k: 4,
        encoder_width: 8,
        res_blocks: 1,
        pixel_hidden: 16,
        pixel_layers: 1,
        feature_dim: 16,
        spectral_hidden: 16,
        spectral_layers: 1,
        head_hidden: 8,
        head_layers: 1,
        ..ModelConfig::compact(variant, 4, range())
    }
}

/// Finite differences against the tape on the full L1 objective.
pub fn gradient_fidelity() -> Outcome {
    timed(2, "gradient fidelity", || {
        let mut worst = 0.0f64;
        for (variant, kind) in [
            (Variant::RfUf, DecoderKind::Modulated),
            (Variant::RfGs, DecoderKind::Concatenated),
        ] {
            let mut config = tiny_model_config(variant);
            config.decoder_kind = kind;
            let model = SsifModel::new(config.clone(), 3)?;
            let mut scenes = SceneSet::generate(
                SceneSetConfig {
                    count: 1,
                    components: 4,
                    seed: 12,
                },
                range(),
            )?;
            let pairs = PairConfig {
                p_min: 1.3,
                p_max: 1.9,
                c_min: 3,
                c_max: 3,
                queries: 6,
                ..PairConfig::new(range())
            };
            let (mut rng, _) = pair_rng(9, 0, 0);
            let (sample, plan, _) = prepare_pair(&config, &mut scenes, &pairs, 8, &mut rng)?;
            let target = Tensor::from_vec(
                vec![sample.queries.len(), sample.band_count()],
                sample.targets.clone(),
            )?;
            let err = grad_check(
                |g, store| {
                    let pred = model
                        .forward(g, store, &sample.input, &sample.queries, &plan)
                        .map_err(|e| match e {
                            ModelError::Numerics(n) => n,
                            other => NumericsError::Contract(other.to_string()),
                        })?;
                    l1_loss_node(g, pred, target.clone())
                },
                &model.params,
                GradCheckConfig::default(),
            )?;
            worst = worst.max(err);
        }
        Ok((
            worst < 1e-4,
            format!("max relative error {worst:.2e} (< 1e-4)"),
        ))
    })
}

/// Settings shared by the overfit run and the trend protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub steps: u64,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    pub overfit_steps: u64,
    pub overfit_learning_rate: f64,
    pub train_scenes: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 1e-3,
            seeds: vec![0, 1, 2],
            overfit_steps: 200,
            overfit_learning_rate: 1e-3,
            train_scenes: 64,
        }
    }
}

impl Protocol {
    /// Compact model, `p ∈ [1, 4]`, `C ∈ [8, 31]`, default scenes and batch.
    pub fn train_config(
        &self,
        variant: Variant,
        decoder: DecoderKind,
        k: usize,
        seed: u64,
    ) -> TrainConfig {
        let mut cfg = TrainConfig::standard(variant, range());
        cfg.model = ModelConfig::compact(variant, 4, range());
        cfg.model.decoder_kind = decoder;
        cfg.model.k = k;
        cfg.learning_rate = self.learning_rate;
        cfg.steps = self.steps;
        cfg.seed = seed;
        cfg.scenes.count = self.train_scenes;
        cfg
    }

    /// Scales {2, 4, 6} × band counts {8, 16, 31, 62} on held-out scenes.
    pub fn eval_config(&self, train: &TrainConfig) -> EvalConfig {
        EvalConfig::for_training(train)
    }
}

/// 200 steps on one fixed pair; the final loss must be under 10% of the first.
pub fn overfit_run(protocol: &Protocol) -> Outcome {
    timed(3, "overfit run", || {
        let mut ratios = Vec::new();
        for &seed in &protocol.seeds {
            let mut cfg = protocol.train_config(Variant::RfUf, DecoderKind::Modulated, 16, seed);
            cfg.learning_rate = protocol.overfit_learning_rate;
            cfg.batch = 1;
            let mut trainer = Trainer::new(cfg)?;
            let pair: Vec<PreparedPair> = trainer.next_batch()?;
            let mut model = trainer.model.clone();
            let mut adam = AdamState::new(&model.params, trainer.config.adam());
            let first = train_step(&mut model, &mut adam, &pair)?;
            for _ in 1..protocol.overfit_steps {
                train_step(&mut model, &mut adam, &pair)?;
            }
            let (last, _) = batch_gradients(&model, &pair)?;
            ratios.push(last[0] / first);
        }
        let m = median(&ratios);
        Ok((
            m < 0.1,
            format!(
                "median final/first loss {m:.4} over seeds (< 0.1); per seed {:?}",
                ratios.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>()
            ),
        ))
    })
}

fn random_cube(
    rng: &mut impl Rng,
    bands: WavelengthIntervalMatrix,
) -> Result<HyperCube, DataError> {
    let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
    let values = (0..h * w * bands.len())
        .map(|_| rng.random_range(0.0f32..=1.0))
        .collect();
    HyperCube::new(h, w, bands, range(), values)
}

/// Metrics against loop references on 50 random pairs, plus the closed-form examples.
pub fn metric_oracles() -> Outcome {
    timed(8, "metric oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = SsimConfig::default();
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let (h, w, c) = (
                rng.random_range(11..18),
                rng.random_range(11..18),
                rng.random_range(2..6),
            );
            let bands = WavelengthIntervalMatrix::equal_width(400.0, 700.0, c)?;
            let mk = |rng: &mut ChaCha8Rng| {
                let v = (0..h * w * c)
                    .map(|_| rng.random_range(0.0f32..1.0))
                    .collect();
                HyperCube::new(h, w, bands.clone(), range(), v)
            };
            let (a, b) = (mk(&mut rng)?, mk(&mut rng)?);
            worst = worst
                .max((psnr(&a, &b, 1.0)? - reference::psnr_loop(&a, &b, 1.0)).abs())
                .max((ssim(&a, &b)? - reference::ssim_loop(&a, &b, &cfg)).abs())
                .max((sam(&a, &b)? - reference::sam_loop(&a, &b)).abs());
        }

        let two = WavelengthIntervalMatrix::equal_width(400.0, 700.0, 2)?;
        let cube = |v: [f32; 2]| HyperCube::new(2, 2, two.clone(), range(), v.repeat(4));
        let (e1, e2, e11) = (cube([1.0, 0.0])?, cube([0.0, 1.0])?, cube([1.0, 1.0])?);
        let flat = |v: f32| HyperCube::constant(11, 11, two.clone(), range(), v);
        let (ca, cb) = (flat(0.25)?, flat(0.75)?);
        let closed = (2.0 * 0.25 * 0.75 + cfg.c1) / (0.25f64.powi(2) + 0.75f64.powi(2) + cfg.c1);
        let zero = HyperCube::constant(2, 2, two.clone(), range(), 0.0)?;
        let tenth = HyperCube::constant(2, 2, two.clone(), range(), 0.1)?;
        let examples = [
            psnr(&e1, &e1, 1.0)? == 100.0,
            (psnr(&zero, &tenth, 1.0)? - 20.0).abs() < 1e-6,
            (ssim(&ca, &ca)? - 1.0).abs() < 1e-12,
            (ssim(&ca, &cb)? - closed).abs() < 1e-12,
            sam(&e1, &e1)? == 0.0,
            (sam(&e1, &e2)? - 90.0).abs() < 1e-12,
            (sam(&e11, &e1)? - 45.0).abs() < 1e-12,
        ];
        let passed_examples = examples.iter().filter(|&&b| b).count();
        Ok((
            worst < 1e-9 && passed_examples == examples.len(),
            format!(
                "max |metric - loop| {worst:.2e} over 50 pairs (< 1e-9); closed-form examples {passed_examples}/{}",
                examples.len()
            ),
        ))
    })
}

/// 100 random cubes round-trip bit-exactly; corrupted files name the offset.
pub fn format_round_trip() -> Outcome {
    timed(9, "format round-trip", || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut exact = 0;
        let dir = std::env::temp_dir().join(format!("ssif-acceptance-{}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| DataError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        for i in 0..100 {
            let bands = if i == 0 {
                WavelengthIntervalMatrix::validate(&[
                    [400.0, 480.0],
                    [450.0, 470.0],
                    [460.0, 700.0],
                ])?
            } else {
                let c = rng.random_range(1..7);
                WavelengthIntervalMatrix::equal_width(400.0, 700.0, c)?
            };
            let cube = random_cube(&mut rng, bands)?;
            let path = dir.join(format!("{i}.hsc1"));
            crate::data::write_cube(&cube, &path)?;
            let back = crate::data::read_cube(&path)?;
            let same_bits = back == cube
                && back
                    .values()
                    .iter()
                    .zip(cube.values())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
                && encode_cube(&back) == encode_cube(&cube);
            exact += same_bits as usize;
        }
        let _ = std::fs::remove_dir_all(&dir);

        let bands = WavelengthIntervalMatrix::equal_width(400.0, 700.0, 2)?;
        let good = encode_cube(&HyperCube::constant(2, 2, bands, range(), 0.5)?);
        let offset = |bytes: &[u8]| match decode_cube(bytes) {
            Err(DataError::Format { offset, .. }) => Some(offset),
            _ => None,
        };
        let mut magic = good.clone();
        magic[..4].copy_from_slice(b"HSCX");
        let mut zero_w = good.clone();
        zero_w[8..12].copy_from_slice(&0u32.to_le_bytes());
        let mut interval = good.clone();
        interval[40..48].copy_from_slice(&100.0f64.to_le_bytes());
        let value_at = 32 + 32 + 4 * 3;
        let mut value = good.clone();
        value[value_at..value_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let corrupt = [
            (offset(&magic), Some(0)),
            (offset(&zero_w), Some(8)),
            (offset(&interval), Some(32)),
            (offset(&value), Some(value_at)),
            (offset(&good[..good.len() - 1]), Some(16)),
        ];
        let rejected = corrupt.iter().filter(|(got, want)| got == want).count();
        Ok((
            exact == 100 && rejected == corrupt.len(),
            format!(
                "{exact}/100 cubes bit-exact; {rejected}/{} corruptions rejected at the expected offset",
                corrupt.len()
            ),
        ))
    })
}

/// Identifies one trained-and-evaluated run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RunKey {
    pub variant: Variant,
    pub decoder: DecoderKind,
    pub k: usize,
    pub seed: u64,
}

impl RunKey {
    pub fn new(variant: Variant, seed: u64) -> Self {
        Self {
            variant,
            decoder: DecoderKind::Modulated,
            k: 16,
            seed,
        }
    }
}

/// Mean PSNR over in-distribution cells.
pub fn in_distribution_psnr(report: &EvalReport) -> f64 {
    let rows: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| !r.ood)
        .map(|r| r.metrics.psnr_db)
        .collect();
    rows.iter().sum::<f64>() / rows.len() as f64
}

/// PSNR lost from `from` to `to` bands, averaged over the in-distribution scales.
pub fn spectral_drop(report: &EvalReport, eval: &EvalConfig, from: usize, to: usize) -> f64 {
    let scales: Vec<f64> = eval
        .scales
        .iter()
        .copied()
        .filter(|&p| p <= eval.trained_p_max)
        .collect();
    let drops: Vec<f64> = scales
        .iter()
        .filter_map(|&p| {
            Some(report.row(p, from)?.metrics.psnr_db - report.row(p, to)?.metrics.psnr_db)
        })
        .collect();
    drops.iter().sum::<f64>() / drops.len() as f64
}

/// Trains protocol runs on demand and caches their sweep reports.
pub struct TrendSuite {
    pub protocol: Protocol,
    reports: HashMap<RunKey, EvalReport>,
    log: Box<dyn FnMut(&str)>,
}

impl TrendSuite {
    pub fn new(protocol: Protocol, log: impl FnMut(&str) + 'static) -> Self {
        Self {
            protocol,
            reports: HashMap::new(),
            log: Box::new(log),
        }
    }

    pub fn report(&mut self, key: RunKey) -> Result<&EvalReport, AcceptanceError> {
        if !self.reports.contains_key(&key) {
            let start = Instant::now();
            let cfg = self
                .protocol
                .train_config(key.variant, key.decoder, key.k, key.seed);
            let eval = self.protocol.eval_config(&cfg);
            let mut trainer = Trainer::new(cfg)?;
            let curve = trainer.run(|_, _| Ok(()))?;
            let report = sweep_eval(&trainer.model, &eval)?;
            (self.log)(&format!(
                "    trained {} {:?} K={} seed {}: final loss {:.4}, in-dist PSNR {:.2} dB ({:.0} s)",
                key.variant,
                key.decoder,
                key.k,
                key.seed,
                curve.last().map_or(f64::NAN, |r| r.loss),
                in_distribution_psnr(&report),
                start.elapsed().as_secs_f64()
            ));
            self.reports.insert(key, report);
        }
        Ok(&self.reports[&key])
    }

    fn eval_config(&self) -> EvalConfig {
        let cfg = self
            .protocol
            .train_config(Variant::RfUf, DecoderKind::Modulated, 16, 0);
        self.protocol.eval_config(&cfg)
    }

    /// One RF-UF model across p and C: in-distribution PSNR and monotone decay in p.
    pub fn continuous_scale(&mut self) -> Outcome {
        let start = Instant::now();
        let seed = self.protocol.seeds[0];
        let eval = self.eval_config();
        let report = match self.report(RunKey::new(Variant::RfUf, seed)) {
            Ok(r) => r.clone(),
            Err(e) => return failed(4, "continuous-scale generalization", e),
        };
        let out = timed(4, "continuous-scale generalization", || {
            let worst_in = report
                .rows
                .iter()
                .filter(|r| !r.ood)
                .map(|r| r.metrics.psnr_db)
                .fold(f64::INFINITY, f64::min);
            let mut monotone = true;
            let mut table = Vec::new();
            for &c in &eval.band_counts {
                let col: Vec<f64> = eval
                    .scales
                    .iter()
                    .filter_map(|&p| report.row(p, c).map(|r| r.metrics.psnr_db))
                    .collect();
                monotone &= col.windows(2).all(|w| w[1] <= w[0] + 0.5);
                table.push(format!(
                    "C={c}: {}",
                    col.iter()
                        .map(|v| format!("{v:.2}"))
                        .collect::<Vec<_>>()
                        .join("/")
                ));
            }
            Ok((
                worst_in >= 25.0 && monotone,
                format!(
                    "min in-dist PSNR {worst_in:.2} dB (>= 25); monotone in p within 0.5 dB: {monotone}; PSNR at p=2/4/6 {}",
                    table.join(", ")
                ),
            ))
        });
        Outcome {
            seconds: start.elapsed().as_secs_f64(),
            ..out
        }
    }

    /// PSNR lost from C=31 to C=62, per variant, median over seeds.
    pub fn stochastic_generalization(&mut self) -> Outcome {
        let start = Instant::now();
        let eval = self.eval_config();
        let seeds = self.protocol.seeds.clone();
        let mut drops = Vec::new();
        for v in Variant::ALL {
            let mut per_seed = Vec::new();
            for &s in &seeds {
                match self.report(RunKey::new(v, s)) {
                    Ok(r) => per_seed.push(spectral_drop(r, &eval, 31, 62)),
                    Err(e) => return failed(5, "stochastic-sampling spectral generalization", e),
                }
            }
            drops.push((v, median(&per_seed)));
        }
        let out = timed(5, "stochastic-sampling spectral generalization", || {
            let get = |v: Variant| {
                drops
                    .iter()
                    .find(|(x, _)| *x == v)
                    .map_or(f64::NAN, |d| d.1)
            };
            let stochastic = [Variant::RfUs, Variant::RfGs];
            let fixed = [Variant::RfUf, Variant::RfGf, Variant::M];
            let small = stochastic.iter().all(|&v| get(v) <= 1.0);
            let worst_stochastic = stochastic.iter().map(|&v| get(v)).fold(f64::MIN, f64::max);
            let larger = fixed.iter().all(|&v| get(v) > worst_stochastic);
            Ok((
                small && larger,
                format!(
                    "median PSNR drop C=31 -> 62: {}; stochastic <= 1 dB: {small}; fixed/midpoint strictly larger: {larger}",
                    drops
                        .iter()
                        .map(|(v, d)| format!("{v} {d:.2} dB"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            ))
        });
        Outcome {
            seconds: start.elapsed().as_secs_f64(),
            ..out
        }
    }

    /// RF-US at K=16 against K=2 under the same budget.
    pub fn k_ablation(&mut self) -> Outcome {
        let start = Instant::now();
        let seeds = self.protocol.seeds.clone();
        let mut by_k = Vec::new();
        for k in [2, 16] {
            let mut per_seed = Vec::new();
            for &s in &seeds {
                let key = RunKey {
                    k,
                    ..RunKey::new(Variant::RfUs, s)
                };
                match self.report(key) {
                    Ok(r) => per_seed.push(in_distribution_psnr(r)),
                    Err(e) => return failed(6, "K-ablation trend", e),
                }
            }
            by_k.push(median(&per_seed));
        }
        let out = timed(6, "K-ablation trend", || {
            Ok((
                by_k[1] >= by_k[0],
                format!(
                    "median in-dist PSNR K=16 {:.2} dB vs K=2 {:.2} dB",
                    by_k[1], by_k[0]
                ),
            ))
        });
        Outcome {
            seconds: start.elapsed().as_secs_f64(),
            ..out
        }
    }

    /// Modulated against concatenated radiance heads on RF-UF.
    pub fn decoder_variant(&mut self) -> Outcome {
        let start = Instant::now();
        let seeds = self.protocol.seeds.clone();
        let mut by_kind = Vec::new();
        for decoder in [DecoderKind::Modulated, DecoderKind::Concatenated] {
            let mut per_seed = Vec::new();
            for &s in &seeds {
                let key = RunKey {
                    decoder,
                    ..RunKey::new(Variant::RfUf, s)
                };
                match self.report(key) {
                    Ok(r) => per_seed.push(in_distribution_psnr(r)),
                    Err(e) => return failed(7, "decoder-variant trend", e),
                }
            }
            by_kind.push(median(&per_seed));
        }
        let out = timed(7, "decoder-variant trend", || {
            Ok((
                by_kind[0] >= by_kind[1] - 0.2,
                format!(
                    "median in-dist PSNR modulated (D) {:.2} dB, concatenated (C) {:.2} dB; D >= C - 0.2",
                    by_kind[0], by_kind[1]
                ),
            ))
        });
        Outcome {
            seconds: start.elapsed().as_secs_f64(),
            ..out
        }
    }
}

fn failed(id: u32, name: &'static str, e: AcceptanceError) -> Outcome {
    Outcome {
        id,
        name,
        passed: false,
        detail: format!("error: {e}"),
        seconds: 0.0,
    }
}

/// Two identical training runs and two identical sweeps must agree byte for byte.
pub fn determinism(protocol: &Protocol) -> Outcome {
    timed(10, "determinism", || {
        let mut cfg = protocol.train_config(Variant::RfGs, DecoderKind::Modulated, 16, 4);
        cfg.steps = 50;
        let mut eval = protocol.eval_config(&cfg);
        eval.scales = vec![2.0, 6.0];
        eval.band_counts = vec![16, 62];
        let run = || -> Result<[Vec<u8>; 3], AcceptanceError> {
            let mut t = Trainer::new(cfg.clone())?;
            let curve = t.run(|_, _| Ok(()))?;
            let mut loss = Vec::new();
            crate::train::write_loss_csv(&mut loss, &curve, false).expect("in-memory write");
            let report = sweep_eval(&t.model, &eval)?;
            let mut csv = Vec::new();
            crate::eval::write_report_csv(&mut csv, &report, false).expect("in-memory write");
            Ok([encode_checkpoint(&t.checkpoint()), loss, csv])
        };
        let a = run()?;
        let b = run()?;
        Ok((
            a == b,
            format!(
                "checkpoints identical: {}; loss curves identical: {}; reports identical: {} ({} checkpoint bytes)",
                a[0] == b[0],
                a[1] == b[1],
                a[2] == b[2],
                a[0].len()
            ),
        ))
    })
}

/// Criteria that need no long training: 1, 2, 3, 8, 9.
pub fn run_quick(protocol: &Protocol, mut report: impl FnMut(&Outcome)) -> Vec<Outcome> {
    let checks: Vec<Box<dyn Fn() -> Outcome + '_>> = vec![
        Box::new(quadrature_oracle),
        Box::new(gradient_fidelity),
        Box::new(move || overfit_run(protocol)),
        Box::new(metric_oracles),
        Box::new(format_round_trip),
    ];
    checks
        .into_iter()
        .map(|c| {
            let o = c();
            report(&o);
            o
        })
        .collect()
}

/// Every criterion, in order.
pub fn run_all(
    protocol: &Protocol,
    mut report: impl FnMut(&Outcome),
    log: impl FnMut(&str) + 'static,
) -> Vec<Outcome> {
    let mut out = run_quick(protocol, &mut report);
    let mut suite = TrendSuite::new(protocol.clone(), log);
    for o in [
        suite.continuous_scale(),
        suite.stochastic_generalization(),
        suite.k_ablation(),
        suite.decoder_variant(),
        determinism(protocol),
    ] {
        report(&o);
        out.push(o);
    }
    out.sort_by_key(|o| o.id);
    out
}
