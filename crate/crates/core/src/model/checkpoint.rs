//! `HSP1` checkpoints in the cube file's little-endian framing:
//!
//! ```text
//! "HSP1"
//! u32 len, config JSON
//! u64 seed, u64 step
//! u32 tensor count, then per tensor: u32 len, name; u32 ndim; ndim × u32 dims; f64 values
//! u8 optimizer flag; if 1: u32 len, Adam config JSON; u64 Adam step;
//!     first moments then second moments, f64 values in tensor order
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelError, SsifModel};
use crate::data::io::{ByteReader, ByteWriter};
use crate::data::DataError;
use crate::numerics::{AdamConfig, AdamState, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSP1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<SsifModel, ModelError> {
        let mut model = SsifModel::new(self.config.clone(), self.seed)?;
        model.params.load_from(&self.params)?;
        Ok(model)
    }
}

fn write_values(w: &mut ByteWriter, t: &Tensor) {
    for &v in t.data() {
        w.f64(v);
    }
}

fn read_values(r: &mut ByteReader, shape: &[usize], what: &str) -> Result<Tensor, DataError> {
    let n: usize = shape.iter().product();
    let at = r.offset();
    if r.remaining() < 8 * n {
        return Err(DataError::format(
            at,
            format!("truncated: {what} needs {} bytes", 8 * n),
        ));
    }
    let data = (0..n).map(|_| r.f64(what)).collect::<Result<Vec<_>, _>>()?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(DataError::format(
            at + 8 * i,
            format!("{what} holds a non-finite value"),
        ));
    }
    Tensor::from_vec(shape.to_vec(), data).map_err(|e| DataError::format(at, e.to_string()))
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.string(&serde_json::to_string(&ck.config).expect("config serializes"));
    w.u64(ck.seed);
    w.u64(ck.step);
    w.u32(ck.params.len() as u32);
    for (_, name, t) in ck.params.iter() {
        w.string(name);
        w.u32(t.shape().len() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        write_values(&mut w, t);
    }
    match &ck.adam {
        None => w.bytes(&[0]),
        Some(adam) => {
            w.bytes(&[1]);
            w.string(&serde_json::to_string(&adam.config).expect("config serializes"));
            w.u64(adam.step);
            for t in adam.first_moment.iter().chain(&adam.second_moment) {
                write_values(&mut w, t);
            }
        }
    }
    w.into_inner()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, DataError> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let json = r.string("config")?;
    let config: ModelConfig =
        serde_json::from_str(&json).map_err(|e| DataError::format(at, format!("config: {e}")))?;
    let seed = r.u64("seed")?;
    let step = r.u64("step")?;
    let count = r.u32("tensor count")? as usize;
    let mut params = ParamStore::new();
    for i in 0..count {
        let name = r.string("tensor name")?;
        let at = r.offset();
        let ndim = r.u32("tensor rank")? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(DataError::format(
                at,
                format!("tensor {i} ({name}) has rank {ndim}"),
            ));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let at = r.offset();
            match r.u32("tensor extent")? {
                0 => {
                    return Err(DataError::format(
                        at,
                        format!("tensor {name} has a zero extent"),
                    ))
                }
                d => shape.push(d as usize),
            }
        }
        let t = read_values(&mut r, &shape, &name)?;
        params.insert(name, t);
    }
    let at = r.offset();
    let adam = match r.take(1, "optimizer flag")?[0] {
        0 => None,
        1 => {
            let at = r.offset();
            let json = r.string("optimizer config")?;
            let config: AdamConfig = serde_json::from_str(&json)
                .map_err(|e| DataError::format(at, format!("optimizer config: {e}")))?;
            let step = r.u64("optimizer step")?;
            let shapes: Vec<Vec<usize>> =
                params.iter().map(|(_, _, t)| t.shape().to_vec()).collect();
            let mut moments = Vec::with_capacity(2 * shapes.len());
            for shape in shapes.iter().chain(&shapes) {
                moments.push(read_values(&mut r, shape, "optimizer moment")?);
            }
            let second_moment = moments.split_off(shapes.len());
            Some(AdamState {
                config,
                step,
                first_moment: moments,
                second_moment,
            })
        }
        f => {
            return Err(DataError::format(
                at,
                format!("optimizer flag {f} is not 0 or 1"),
            ))
        }
    };
    r.finish()?;
    Ok(Checkpoint {
        config,
        seed,
        step,
        params,
        adam,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode_checkpoint(ck)).map_err(|e| DataError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_checkpoint(&bytes)
}
