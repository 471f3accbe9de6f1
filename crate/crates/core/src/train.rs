//! The L1 objective over randomly scaled pairs and the seeded training loop.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    make_training_pair, DataError, PairConfig, SceneSet, SceneSetConfig, TrainingSample,
};
use crate::model::{Checkpoint, ModelConfig, ModelError, SpectralPlan, SsifModel, Variant};
use crate::numerics::{AdamConfig, AdamState, Gradients, Graph, NodeId, NumericsError, Tensor};
use crate::spectral::WavelengthRange;

/// Pairs per step are limited so `(step, index)` maps to a unique RNG stream.
pub const MAX_BATCH: usize = 1024;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),
    #[error("{0}")]
    Argument(String),
    #[error("non-finite loss at step {step} (run seed {seed}, pair streams {streams:?})")]
    NonFinite {
        step: u64,
        seed: u64,
        streams: Vec<u64>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub pairs: PairConfig,
    pub scenes: SceneSetConfig,
    pub learning_rate: f64,
    pub steps: u64,
    /// Pairs per step.
    pub batch: usize,
    /// Low-resolution input extent; HR targets live on `round(base·p)`.
    pub base_extent: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables intermediate ones).
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Documented defaults with the full-size model.
    pub fn standard(variant: Variant, range: WavelengthRange) -> Self {
        Self {
            model: ModelConfig::standard(variant, 4, range),
            pairs: PairConfig::new(range),
            scenes: SceneSetConfig::default(),
            learning_rate: 1e-4,
            steps: 2000,
            batch: 4,
            base_extent: 16,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let input = self.pairs.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch == 0 || self.batch > MAX_BATCH {
            return Err(TrainError::Config(format!(
                "batch must be in 1..={MAX_BATCH}, got {}",
                self.batch
            )));
        }
        if self.base_extent == 0 {
            return Err(TrainError::Config("base_extent must be positive".into()));
        }
        if input.len() != self.model.input_bands {
            return Err(TrainError::Config(format!(
                "model.input_bands is {} but pairs.input_bands has {} rows",
                self.model.input_bands,
                input.len()
            )));
        }
        if self.scenes.count == 0 || self.scenes.components == 0 {
            return Err(TrainError::Config(
                "scenes.count and scenes.components must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Mean absolute difference.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<f64, TrainError> {
    if pred.len() != target.len() {
        return Err(TrainError::Argument(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Graph form of [`l1_loss`].
pub fn l1_loss_node(g: &mut Graph, pred: NodeId, target: Tensor) -> Result<NodeId, NumericsError> {
    if g.shape(pred) != target.shape() {
        return Err(NumericsError::Dimension {
            op: "l1_loss",
            detail: format!(
                "prediction {:?} vs target {:?}",
                g.shape(pred),
                target.shape()
            ),
        });
    }
    let t = g.constant(target);
    let d = g.sub(pred, t)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

/// A training pair with the wavelength plan it is evaluated under.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPair {
    pub sample: TrainingSample,
    pub plan: SpectralPlan,
    pub scene: usize,
    /// RNG stream that produced the pair.
    pub stream: u64,
}

/// RNG for pair `index` of `step`: the run seed on a dedicated stream.
pub fn pair_rng(seed: u64, step: u64, index: usize) -> (ChaCha8Rng, u64) {
    let stream = 1 + step * MAX_BATCH as u64 + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (rng, stream)
}

pub fn prepare_pair<R: Rng + ?Sized>(
    model: &ModelConfig,
    scenes: &mut SceneSet,
    pairs: &PairConfig,
    base_extent: usize,
    rng: &mut R,
) -> Result<(TrainingSample, SpectralPlan, usize), TrainError> {
    let scene = rng.random_range(0..scenes.len());
    let sample = make_training_pair(scenes.renderer(scene), base_extent, pairs, rng)?;
    let plan = SpectralPlan::new(model, &sample.target_bands, rng)?;
    Ok((sample, plan, scene))
}

/// Per-pair L1 losses and gradients of their sum.
pub fn batch_gradients(
    model: &SsifModel,
    batch: &[PreparedPair],
) -> Result<(Vec<f64>, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Argument("empty batch".into()));
    }
    let mut g = Graph::new();
    let mut losses = Vec::with_capacity(batch.len());
    for pair in batch {
        let s = &pair.sample;
        let pred = model.forward(&mut g, &model.params, &s.input, &s.queries, &pair.plan)?;
        let target = Tensor::from_vec(vec![s.queries.len(), s.band_count()], s.targets.clone())?;
        losses.push(l1_loss_node(&mut g, pred, target)?);
    }
    let mut objective = losses[0];
    for &l in &losses[1..] {
        objective = g.add(objective, l)?;
    }
    let grads = g.backward(objective, &model.params)?;
    Ok((
        losses.iter().map(|&l| g.value(l).data()[0]).collect(),
        grads,
    ))
}

/// Mean of per-pair losses, summed in sorted order so it does not depend on batch order.
pub fn reported_loss(losses: &[f64]) -> f64 {
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// One Adam step on the batch; returns the pre-update loss.
pub fn train_step(
    model: &mut SsifModel,
    adam: &mut AdamState,
    batch: &[PreparedPair],
) -> Result<f64, TrainError> {
    let (losses, grads) = batch_gradients(model, batch)?;
    let loss = reported_loss(&losses);
    if !loss.is_finite() || !grads.is_finite() {
        return Err(TrainError::NonFinite {
            step: adam.step,
            seed: 0,
            streams: batch.iter().map(|p| p.stream).collect(),
        });
    }
    adam.step(&mut model.params, &grads)?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    /// Mean scale and band count over the batch.
    pub p: f64,
    pub c: f64,
    pub wall_ms: f64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: SsifModel,
    pub adam: AdamState,
    pub step: u64,
    pub scenes: SceneSet,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = SsifModel::new(config.model.clone(), config.seed)?;
        let adam = AdamState::new(&model.params, config.adam());
        let scenes = SceneSet::generate(config.scenes, config.model.range)?;
        Ok(Self {
            config,
            model,
            adam,
            step: 0,
            scenes,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, checkpoint: &Checkpoint) -> Result<Self, TrainError> {
        if checkpoint.config != config.model || checkpoint.seed != config.seed {
            return Err(TrainError::Config(
                "checkpoint model config or seed differs from the run config".into(),
            ));
        }
        let mut t = Self::new(config)?;
        t.model = checkpoint.model()?;
        t.step = checkpoint.step;
        t.adam = match &checkpoint.adam {
            Some(a) => a.clone(),
            None => {
                return Err(TrainError::Config(
                    "checkpoint has no optimizer state".into(),
                ))
            }
        };
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            seed: self.config.seed,
            step: self.step,
            params: self.model.params.clone(),
            adam: Some(self.adam.clone()),
        }
    }

    /// Fresh pairs for the current step.
    pub fn next_batch(&mut self) -> Result<Vec<PreparedPair>, TrainError> {
        (0..self.config.batch)
            .map(|i| {
                let (mut rng, stream) = pair_rng(self.config.seed, self.step, i);
                let (sample, plan, scene) = prepare_pair(
                    &self.config.model,
                    &mut self.scenes,
                    &self.config.pairs,
                    self.config.base_extent,
                    &mut rng,
                )?;
                Ok(PreparedPair {
                    sample,
                    plan,
                    scene,
                    stream,
                })
            })
            .collect()
    }

    /// One step on the given pairs.
    pub fn step_on(&mut self, batch: &[PreparedPair]) -> Result<LossRecord, TrainError> {
        let start = Instant::now();
        let loss = train_step(&mut self.model, &mut self.adam, batch).map_err(|e| match e {
            TrainError::NonFinite { streams, .. } => TrainError::NonFinite {
                step: self.step,
                seed: self.config.seed,
                streams,
            },
            other => other,
        })?;
        let n = batch.len() as f64;
        let record = LossRecord {
            step: self.step,
            loss,
            p: batch.iter().map(|b| b.sample.scale).sum::<f64>() / n,
            c: batch
                .iter()
                .map(|b| b.sample.band_count() as f64)
                .sum::<f64>()
                / n,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.step += 1;
        Ok(record)
    }

    pub fn step(&mut self) -> Result<LossRecord, TrainError> {
        let start = Instant::now();
        let batch = self.next_batch()?;
        let mut record = self.step_on(&batch)?;
        record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(record)
    }

    /// Run until `config.steps`, calling `after_step` after every step.
    pub fn run(
        &mut self,
        mut after_step: impl FnMut(&Trainer, &LossRecord) -> Result<(), TrainError>,
    ) -> Result<Vec<LossRecord>, TrainError> {
        let mut curve = Vec::new();
        while self.step < self.config.steps {
            let record = self.step()?;
            after_step(self, &record)?;
            curve.push(record);
        }
        Ok(curve)
    }
}

/// Loss curve CSV. With `timing` off the wall-clock column is written as 0
/// so reruns are byte-identical.
pub fn write_loss_csv(
    out: &mut impl Write,
    curve: &[LossRecord],
    timing: bool,
) -> std::io::Result<()> {
    writeln!(out, "step,loss,p,C,wall_ms")?;
    for r in curve {
        let ms = if timing { r.wall_ms } else { 0.0 };
        writeln!(
            out,
            "{},{:.9e},{:.4},{:.2},{:.3}",
            r.step, r.loss, r.p, r.c, ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
