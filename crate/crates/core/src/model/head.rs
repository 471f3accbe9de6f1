use rand::Rng;

use super::DecoderKind;
use crate::numerics::nn::{uniform_init, Linear, Mlp};
use crate::numerics::{Graph, NodeId, NumericsError, ParamId, ParamStore};

/// Spectral decoder turning pixel features `h` (`N×d`) and wavelength
/// embeddings `e` (`M×d`) into an `N×M` radiance matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum RadianceHead {
    /// `s = MLP(e)`, radiance `= h·sᵀ`.
    Modulated { mlp: Mlp },
    /// `MLP([e, h])`; the first layer is split so each half is applied once
    /// per row and the halves are broadcast-added over all pairs.
    Concatenated {
        pixel: Linear,
        spectral: ParamId,
        rest: Option<Mlp>,
    },
}

impl RadianceHead {
    pub fn new(
        store: &mut ParamStore,
        kind: DecoderKind,
        d: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        match kind {
            DecoderKind::Modulated => {
                let mut widths = vec![d];
                widths.extend(std::iter::repeat_n(hidden, layers));
                widths.push(d);
                RadianceHead::Modulated {
                    mlp: Mlp::new(store, "radiance_head", &widths, rng),
                }
            }
            DecoderKind::Concatenated => {
                let first = if layers == 0 { 1 } else { hidden };
                let fan_in = 2 * d;
                let pixel = Linear::new(store, "radiance_head.pixel", d, first, rng);
                // Match the fan-in of the unsplit layer.
                for id in [pixel.weight, pixel.bias] {
                    let shape = store.get(id).shape().to_vec();
                    let fresh = uniform_init(rng, &shape, fan_in);
                    store.get_mut(id).data_mut().copy_from_slice(fresh.data());
                }
                let spectral = store.insert(
                    "radiance_head.spectral.weight",
                    uniform_init(rng, &[d, first], fan_in),
                );
                let rest = (layers > 0).then(|| {
                    let mut widths = vec![hidden; layers];
                    widths.push(1);
                    Mlp::new(store, "radiance_head.rest", &widths, rng)
                });
                RadianceHead::Concatenated {
                    pixel,
                    spectral,
                    rest,
                }
            }
        }
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            RadianceHead::Modulated { .. } => DecoderKind::Modulated,
            RadianceHead::Concatenated { .. } => DecoderKind::Concatenated,
        }
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: NodeId,
        e: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let (n, dh) = (g.shape(h)[0], g.shape(h)[1]);
        let (m, de) = (g.shape(e)[0], g.shape(e)[1]);
        if dh != de {
            return Err(NumericsError::dimension(
                "radiance_head",
                format!("pixel features have width {dh}, wavelength embeddings {de}"),
            ));
        }
        match self {
            RadianceHead::Modulated { mlp } => {
                let s = mlp.forward(g, store, e)?;
                let st = g.transpose(s)?;
                g.matmul(h, st)
            }
            RadianceHead::Concatenated {
                pixel,
                spectral,
                rest,
            } => {
                let a = pixel.forward(g, store, h)?;
                let w = g.param(store, *spectral);
                let b = g.matmul(e, w)?;
                let mut z = g.outer_add_rows(a, b)?;
                if let Some(mlp) = rest {
                    z = g.relu(z);
                    z = mlp.forward(g, store, z)?;
                }
                g.reshape(z, &[n, m])
            }
        }
    }

    /// Per-wavelength basis vectors paired with the pixel feature.
    pub fn basis(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        e: NodeId,
    ) -> Result<NodeId, NumericsError> {
        match self {
            RadianceHead::Modulated { mlp } => mlp.forward(g, store, e),
            RadianceHead::Concatenated { .. } => Ok(e),
        }
    }
}
