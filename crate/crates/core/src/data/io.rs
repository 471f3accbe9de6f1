//! Little-endian binary framing shared by cube (`HSC1`) and checkpoint (`HSP1`) files.
//!
//! Cube layout:
//!
//! | offset        | field                                   |
//! |---------------|-----------------------------------------|
//! | 0             | magic `HSC1`                            |
//! | 4, 8, 12      | `u32` H, W, C                           |
//! | 16, 24        | `f64` global range lo, hi               |
//! | 32            | `C×2` `f64` interval matrix             |
//! | 32 + 16·C     | `H·W·C` `f32` values, `((i·W)+j)·C + b` |
//!
//! There is no padding; a file is exactly `32 + 16·C + 4·H·W·C` bytes.

use std::fs;
use std::path::Path;

use super::{DataError, HyperCube};
use crate::spectral::{WavelengthIntervalMatrix, WavelengthRange};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const CUBE_HEADER_BYTES: usize = 32;

pub fn cube_file_size(height: usize, width: usize, bands: usize) -> usize {
    CUBE_HEADER_BYTES + 16 * bands + 4 * height * width * bands
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// `u32` length followed by the bytes.
    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor that reports the byte offset of every failure.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        if self.remaining() < n {
            return Err(DataError::format(
                self.pos,
                format!(
                    "truncated: {what} needs {n} bytes, {} left",
                    self.remaining()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<(), DataError> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(DataError::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn string(&mut self, what: &str) -> Result<String, DataError> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| DataError::format(at, format!("{what} is not UTF-8")))
    }

    pub fn finish(&self) -> Result<(), DataError> {
        if self.remaining() != 0 {
            return Err(DataError::format(
                self.pos,
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub fn encode_cube(cube: &HyperCube) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CUBE_MAGIC);
    w.u32(cube.height() as u32);
    w.u32(cube.width() as u32);
    w.u32(cube.band_count() as u32);
    w.f64(cube.range().lo);
    w.f64(cube.range().hi);
    for iv in cube.bands().rows() {
        w.f64(iv.start);
        w.f64(iv.end);
    }
    for &v in cube.values() {
        w.f32(v);
    }
    w.into_inner()
}

pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube, DataError> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CUBE_MAGIC)?;
    let mut extent = |what: &str| -> Result<usize, DataError> {
        let at = r.offset();
        match r.u32(what)? {
            0 => Err(DataError::format(at, format!("{what} must be positive"))),
            v => Ok(v as usize),
        }
    };
    let (h, w, c) = (extent("height")?, extent("width")?, extent("band count")?);
    let at = r.offset();
    let needed = 16 + 16 * c + 4 * h * w * c;
    if r.remaining() != needed {
        return Err(DataError::format(
            at,
            format!(
                "{h}x{w}x{c} cube needs {needed} bytes after the extents, file has {}",
                r.remaining()
            ),
        ));
    }
    let lo = r.f64("range lo")?;
    let hi = r.f64("range hi")?;
    let range = WavelengthRange::new(lo, hi)
        .map_err(|_| DataError::format(at, format!("invalid range [{lo}, {hi}]")))?;
    let mut rows = Vec::with_capacity(c);
    for i in 0..c {
        let at = r.offset();
        let (s, e) = (r.f64("interval start")?, r.f64("interval end")?);
        if !(s.is_finite() && e.is_finite() && s < e) {
            return Err(DataError::format(
                at,
                format!("interval row {i} [{s}, {e}] is invalid"),
            ));
        }
        rows.push([s, e]);
    }
    let bands = WavelengthIntervalMatrix::validate(&rows)
        .map_err(|e| DataError::format(CUBE_HEADER_BYTES, e.to_string()))?;
    let mut values = Vec::with_capacity(h * w * c);
    for _ in 0..h * w * c {
        let at = r.offset();
        let v = r.f32("value")?;
        if !(0.0..=1.0).contains(&v) {
            return Err(DataError::format(at, format!("value {v} outside [0, 1]")));
        }
        values.push(v);
    }
    r.finish()?;
    HyperCube::new(h, w, bands, range, values)
}

pub fn write_cube(cube: &HyperCube, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode_cube(cube)).map_err(|e| DataError::io(path, e))
}

pub fn read_cube(path: &Path) -> Result<HyperCube, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_cube(&bytes)
}
