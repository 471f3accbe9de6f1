use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use ssif::data::SceneSetConfig;
use ssif::eval::EvalConfig;
use ssif::model::Variant;
use ssif::spectral::{ResponseKind, WavelengthRange};
use ssif::train::TrainConfig;
use std::path::Path;

/// Synthetic dataset written by `gen-data`: one LR/HR cube pair per scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub range: WavelengthRange,
    pub scenes: SceneSetConfig,
    pub base_extent: usize,
    pub scale: f64,
    pub bands: usize,
    pub input_bands: Vec<[f64; 2]>,
    pub input_response: ResponseKind,
    pub target_response: ResponseKind,
}

impl GenDataConfig {
    pub fn for_training(train: &TrainConfig) -> Self {
        Self {
            range: train.model.range,
            scenes: SceneSetConfig {
                count: 4,
                components: train.scenes.components,
                seed: 5000,
            },
            base_extent: train.base_extent,
            scale: 4.0,
            bands: 31,
            input_bands: train.pairs.input_bands.clone(),
            input_response: train.pairs.input_response,
            target_response: train.pairs.target_response,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes.count == 0 || self.scenes.components == 0 {
            bail!("gen_data.scenes.count and gen_data.scenes.components must be positive");
        }
        if self.base_extent == 0 {
            bail!("gen_data.base_extent must be positive");
        }
        if !(self.scale >= 1.0 && self.scale.is_finite()) {
            bail!("gen_data.scale must be >= 1, got {}", self.scale);
        }
        if self.bands == 0 {
            bail!("gen_data.bands must be positive");
        }
        Ok(())
    }
}

/// Every knob of a run, with defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gen_data: GenDataConfig,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    train: Option<Value>,
    #[serde(default)]
    eval: Option<Value>,
    #[serde(default)]
    gen_data: Option<Value>,
}

pub fn default_range() -> WavelengthRange {
    WavelengthRange::new(400.0, 700.0).expect("valid range")
}

pub fn default_train() -> TrainConfig {
    TrainConfig::standard(Variant::RfUf, default_range())
}

/// Objects merge key by key; anything else in `patch` replaces `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn layer<T: Serialize + DeserializeOwned>(
    default: &T,
    patch: Option<Value>,
    section: &str,
) -> Result<T> {
    let mut value = serde_json::to_value(default)?;
    if let Some(p) = patch {
        merge(&mut value, p);
    }
    serde_json::from_value(value).with_context(|| format!("config section `{section}`"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawRunConfig = serde_json::from_str(text).context("config")?;
        let train = layer(&default_train(), raw.train, "train")?;
        let eval = layer(&EvalConfig::for_training(&train), raw.eval, "eval")?;
        let gen_data = layer(
            &GenDataConfig::for_training(&train),
            raw.gen_data,
            "gen_data",
        )?;
        let cfg = Self {
            train,
            eval,
            gen_data,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::from_json(&text).with_context(|| format!("config {}", p.display()))
            }
            None => Self::from_json("{}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        self.gen_data.validate()
    }
}
