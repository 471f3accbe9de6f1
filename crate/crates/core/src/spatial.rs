//! Convolutional image encoder and the local implicit pixel-feature decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{pixel_center, HyperCube};
use crate::numerics::nn::{uniform_init, Mlp};
use crate::numerics::{Graph, NodeId, NumericsError, ParamId, ParamStore, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("spatial config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Continuous query location in `[−1, 1]²` with the target pixel size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelQuery {
    pub coord: [f64; 2],
    pub cell: [f64; 2],
}

impl PixelQuery {
    /// Queries at every pixel centre of an `h×w` grid, row-major.
    pub fn grid(h: usize, w: usize) -> Vec<PixelQuery> {
        let cell = [2.0 / h as f64, 2.0 / w as f64];
        (0..h)
            .flat_map(|i| {
                (0..w).map(move |j| PixelQuery {
                    coord: pixel_center(i, j, h, w),
                    cell,
                })
            })
            .collect()
    }
}

/// Encoder output: a `channels×height×width` node on a graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureMap {
    pub node: NodeId,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub width: usize,
    pub res_blocks: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    kernel: ParamId,
    bias: ParamId,
}

impl Conv {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * 9;
        let kernel = store.insert(
            format!("{name}.kernel"),
            uniform_init(rng, &[cout, cin, 3, 3], fan_in),
        );
        let bias = store.insert(format!("{name}.bias"), uniform_init(rng, &[cout], fan_in));
        Self { kernel, bias }
    }

    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv2d(x, k, Some(b), 1)
    }
}

/// Stem conv, residual blocks of two 3×3 convs, and a tail conv with a long skip.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoder {
    pub config: EncoderConfig,
    stem: Conv,
    blocks: Vec<(Conv, Conv)>,
    tail: Conv,
}

impl ImageEncoder {
    pub fn new(
        store: &mut ParamStore,
        config: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, SpatialError> {
        if config.in_channels == 0 || config.width == 0 {
            return Err(SpatialError::Config(
                "encoder channel counts must be positive".into(),
            ));
        }
        let d = config.width;
        let stem = Conv::new(store, "encoder.stem", config.in_channels, d, rng);
        let blocks = (0..config.res_blocks)
            .map(|i| {
                (
                    Conv::new(store, &format!("encoder.block{i}.conv1"), d, d, rng),
                    Conv::new(store, &format!("encoder.block{i}.conv2"), d, d, rng),
                )
            })
            .collect();
        let tail = Conv::new(store, "encoder.tail", d, d, rng);
        Ok(Self {
            config,
            stem,
            blocks,
            tail,
        })
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        image: &HyperCube,
    ) -> Result<FeatureMap, SpatialError> {
        if image.band_count() != self.config.in_channels {
            return Err(SpatialError::Config(format!(
                "encoder expects {} input bands, image has {}",
                self.config.in_channels,
                image.band_count()
            )));
        }
        let (h, w) = (image.height(), image.width());
        let x = g.constant(Tensor::from_vec(
            vec![image.band_count(), h, w],
            image.channels_first(),
        )?);
        let stem = self.stem.forward(g, store, x)?;
        let mut f = stem;
        for (c1, c2) in &self.blocks {
            let t = c1.forward(g, store, f)?;
            let t = g.relu(t);
            let t = c2.forward(g, store, t)?;
            f = g.add(f, t)?;
        }
        let t = self.tail.forward(g, store, f)?;
        let node = g.add(t, stem)?;
        Ok(FeatureMap {
            node,
            height: h,
            width: w,
            channels: self.config.width,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub feature_unfolding: bool,
    pub local_ensemble: bool,
    pub cell_decode: bool,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub output: usize,
}

/// One latent contributing to a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentTap {
    /// Row-major latent index.
    pub index: usize,
    /// `(x − latent centre)` scaled by the feature-map extents.
    pub rel: [f64; 2],
    pub weight: f64,
}

fn nearest_latent(c: f64, extent: usize) -> usize {
    (((c + 1.0) * 0.5 * extent as f64).floor().max(0.0) as usize).min(extent - 1)
}

/// Latents feeding a query. With the ensemble on these are the four nearest
/// latents, each weighted by the area of the rectangle spanned between the
/// query and the diagonally opposite latent.
pub fn latent_taps(coord: [f64; 2], h: usize, w: usize, local_ensemble: bool) -> Vec<LatentTap> {
    let rel_of = |i: usize, j: usize| {
        let c = pixel_center(i, j, h, w);
        [(coord[0] - c[0]) * h as f64, (coord[1] - c[1]) * w as f64]
    };
    if !local_ensemble {
        let (i, j) = (nearest_latent(coord[0], h), nearest_latent(coord[1], w));
        return vec![LatentTap {
            index: i * w + j,
            rel: rel_of(i, j),
            weight: 1.0,
        }];
    }
    const EPS_SHIFT: f64 = 1e-6;
    let (rx, ry) = (1.0 / h as f64, 1.0 / w as f64);
    let mut taps = Vec::with_capacity(4);
    let mut areas = [0.0; 4];
    for (k, (vx, vy)) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
        .into_iter()
        .enumerate()
    {
        let cx = (coord[0] + vx * rx + EPS_SHIFT).clamp(-1.0 + 1e-6, 1.0 - 1e-6);
        let cy = (coord[1] + vy * ry + EPS_SHIFT).clamp(-1.0 + 1e-6, 1.0 - 1e-6);
        let (i, j) = (nearest_latent(cx, h), nearest_latent(cy, w));
        let rel = rel_of(i, j);
        areas[k] = (rel[0] * rel[1]).abs() + 1e-9;
        taps.push(LatentTap {
            index: i * w + j,
            rel,
            weight: 0.0,
        });
    }
    let total: f64 = areas.iter().sum();
    for (k, tap) in taps.iter_mut().enumerate() {
        tap.weight = areas[3 - k] / total;
    }
    taps
}

/// MLP over (latent feature, relative coordinate, relative cell).
#[derive(Clone, Debug, PartialEq)]
pub struct PixelDecoder {
    pub config: DecoderConfig,
    pub feature_channels: usize,
    pub mlp: Mlp,
}

impl PixelDecoder {
    pub fn new(
        store: &mut ParamStore,
        feature_channels: usize,
        config: DecoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, SpatialError> {
        if config.output == 0 || config.hidden == 0 {
            return Err(SpatialError::Config(
                "decoder widths must be positive".into(),
            ));
        }
        let mut widths = vec![Self::input_width(feature_channels, &config)];
        widths.extend(std::iter::repeat_n(config.hidden, config.hidden_layers));
        widths.push(config.output);
        let mlp = Mlp::new(store, "pixel_decoder", &widths, rng);
        Ok(Self {
            config,
            feature_channels,
            mlp,
        })
    }

    fn input_width(channels: usize, config: &DecoderConfig) -> usize {
        let feat = if config.feature_unfolding {
            9 * channels
        } else {
            channels
        };
        feat + 2 + if config.cell_decode { 2 } else { 0 }
    }

    pub fn output_dim(&self) -> usize {
        self.config.output
    }

    /// Pixel features `h` for every query as an `N×d` node.
    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fmap: &FeatureMap,
        queries: &[PixelQuery],
    ) -> Result<NodeId, SpatialError> {
        if fmap.channels != self.feature_channels {
            return Err(SpatialError::Config(format!(
                "decoder expects {} feature channels, map has {}",
                self.feature_channels, fmap.channels
            )));
        }
        if queries.is_empty() {
            return Err(SpatialError::Config("no queries".into()));
        }
        let (h, w) = (fmap.height, fmap.width);
        let latents = if self.config.feature_unfolding {
            g.unfold3x3(fmap.node)?
        } else {
            let flat = g.reshape(fmap.node, &[fmap.channels, h * w])?;
            g.transpose(flat)?
        };

        let per_query = if self.config.local_ensemble { 4 } else { 1 };
        let n = queries.len();
        let extra = if self.config.cell_decode { 4 } else { 2 };
        // Rows are grouped by tap: row `t·N + q` is tap `t` of query `q`.
        let mut indices = vec![0; per_query * n];
        let mut weights = vec![0.0; per_query * n];
        let mut extras = vec![0.0; per_query * n * extra];
        for (q, query) in queries.iter().enumerate() {
            for (t, tap) in latent_taps(query.coord, h, w, self.config.local_ensemble)
                .into_iter()
                .enumerate()
            {
                let row = t * n + q;
                indices[row] = tap.index;
                weights[row] = tap.weight;
                let e = &mut extras[row * extra..(row + 1) * extra];
                e[0] = tap.rel[0];
                e[1] = tap.rel[1];
                if self.config.cell_decode {
                    e[2] = query.cell[0] * h as f64;
                    e[3] = query.cell[1] * w as f64;
                }
            }
        }
        let feats = g.gather_rows(latents, &indices)?;
        let extras = g.constant(Tensor::from_vec(vec![per_query * n, extra], extras)?);
        let input = g.concat_cols(&[feats, extras])?;
        let out = self.mlp.forward(g, store, input)?;
        if per_query == 1 {
            return Ok(out);
        }
        let weighted = g.scale_rows(out, &weights)?;
        let d = self.config.output;
        let stacked = g.reshape(weighted, &[per_query, n * d])?;
        let ones = g.constant(Tensor::ones(&[1, per_query]));
        let summed = g.matmul(ones, stacked)?;
        Ok(g.reshape(summed, &[n, d])?)
    }
}
