//! Binary weight file.
//!
//! Layout (little-endian): magic `DFOP-W\0`, `u16` version, the network
//! config as eight `u32` fields, then for each parameter a `u16` name length,
//! the UTF-8 name, a `u8` rank, `u32` extents, a `u8` frozen flag and the
//! row-major payload as `f32`.

use std::path::Path;

use super::{CanConfig, CanWeights, Head, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 7] = b"DFOP-W\0";
pub const WEIGHT_VERSION: u16 = 1;

/// Serialize weights to bytes.
pub fn write_weights(weights: &CanWeights) -> Vec<u8> {
    let c = &weights.config;
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    for field in [
        c.input_side,
        c.input_channels,
        c.conv_filters.0,
        c.conv_filters.1,
        c.kernel_size,
        c.pool_window,
        c.fc_size,
    ] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.head.code().to_le_bytes());
    for (name, p) in weights.named_params() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(u8::from(p.frozen));
        for x in p.value.to_f32() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(weights: &CanWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_weights(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<CanWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated file while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parse a weight file image. `path` is used for diagnostics only.
pub fn read_weights(bytes: &[u8], path: &Path) -> Result<CanWeights> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(WEIGHT_MAGIC.len(), "magic")? != WEIGHT_MAGIC {
        return Err(Error::format(path, "bad magic, not a weight file"));
    }
    let version = r.u16("version")?;
    if version != WEIGHT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let mut fields = [0usize; 7];
    for f in &mut fields {
        *f = r.u32("config")? as usize;
    }
    let head_code = r.u32("config")?;
    let head = Head::from_code(head_code)
        .ok_or_else(|| Error::format(path, format!("unknown head kind {head_code}")))?;
    let config = CanConfig {
        input_side: fields[0],
        input_channels: fields[1],
        conv_filters: (fields[2], fields[3]),
        kernel_size: fields[4],
        pool_window: fields[5],
        fc_size: fields[6],
        head,
    };
    let mut weights = CanWeights::zeros(config)
        .map_err(|e| Error::format(path, format!("embedded config invalid: {e}")))?;

    let mut seen = [false; PARAM_NAMES.len()];
    while !r.done() {
        let len = r.u16("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let idx = PARAM_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::format(path, format!("unknown parameter `{name}`")))?;
        if seen[idx] {
            return Err(Error::format(path, format!("duplicate parameter `{name}`")));
        }
        seen[idx] = true;

        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let frozen = match r.u8("frozen flag")? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::format(
                    path,
                    format!("frozen flag {other} for `{name}`"),
                ));
            }
        };
        let mut params = weights.params_mut();
        let param = &mut params[idx];
        if shape != param.value.shape() {
            return Err(Error::ParameterShape {
                name,
                detail: format!(
                    "file declares {shape:?}, config requires {:?}",
                    param.value.shape()
                ),
            });
        }
        let n = param.len();
        let payload = r.take(4 * n, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        param.value = Tensor::new(&shape, data)?;
        param.frozen = frozen;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::format(
            path,
            format!("truncated file: parameter `{}` missing", PARAM_NAMES[i]),
        ));
    }
    Ok(weights)
}
