//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!   magic `MEHP` | format version u16 | config length u32 + TOML bytes |
//!   per parameter: name length u32 + UTF-8 name, rank u32, extents u32 each,
//!   raw f32 data.
//! Parameters run to end of file; the loader requires the name set to match
//! the embedded config's model exactly, so truncated files never yield a
//! partial model.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::data;
use crate::layers::ParamVisitor;

use super::{MehpanModel, ModelConfig, ModelError};

const MAGIC: &[u8; 4] = b"MEHP";
const VERSION: u16 = 1;

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::CheckpointIo {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(message: impl Into<String>) -> ModelError {
    ModelError::CheckpointFormat {
        message: message.into(),
    }
}

/// Writes the model atomically; loading reproduces bit-identical parameters.
pub fn save_checkpoint(model: &MehpanModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let config_text =
        toml::to_string(&model.cfg).map_err(|e| format_err(format!("config encode: {e}")))?;

    data::atomic_write(path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(config_text.len() as u32).to_le_bytes())?;
        w.write_all(config_text.as_bytes())?;
        let mut result = Ok(());
        model.visit(&mut |name, tensor| {
            if result.is_err() {
                return;
            }
            result = write_param(w, name, tensor);
        });
        result
    })
    .map_err(|e| match e {
        data::DataError::Io { path, source } => ModelError::CheckpointIo { path, source },
        other => format_err(other.to_string()),
    })
}

fn write_param(w: &mut dyn Write, name: &str, tensor: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &e in tensor.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Rebuilds the model from the embedded config and restores every parameter
/// bitwise. Fails on magic/version mismatch, corrupt records, and any
/// missing, extra, or misshapen parameter.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MehpanModel, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Cursor { buf: &bytes, pos: 0 };

    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(format_err(format!("bad magic {:02x?}", magic)));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(format_err(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let config_len = r.take_u32()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|e| format_err(format!("config is not UTF-8: {e}")))?;
    let cfg: ModelConfig =
        toml::from_str(config_text).map_err(|e| format_err(format!("config decode: {e}")))?;

    let mut params = std::collections::HashMap::new();
    while !r.at_end() {
        let name_len = r.take_u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| format_err(format!("parameter name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.take_u32()? as usize;
        if rank == 0 || rank > 3 {
            return Err(format_err(format!("parameter {name}: bad rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.take_u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| format_err("overflow"))?)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)
            .map_err(|e| format_err(format!("parameter {name}: {e}")))?;
        if params.insert(name.clone(), tensor).is_some() {
            return Err(format_err(format!("duplicate parameter {name}")));
        }
    }

    let mut model = MehpanModel::new(cfg)?;
    let mut missing = Vec::new();
    let mut failure: Option<ModelError> = None;
    model.visit_mut(&mut |name, param| {
        if failure.is_some() {
            return;
        }
        match params.remove(name) {
            Some(stored) => {
                if stored.shape() != param.shape() {
                    failure = Some(format_err(format!(
                        "parameter {name}: stored shape {:?} does not match config shape {:?}",
                        stored.shape(),
                        param.shape()
                    )));
                } else {
                    *param = stored;
                }
            }
            None => missing.push(name.to_string()),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(format_err(format!("missing parameters: {}", missing.join(", "))));
    }
    if !params.is_empty() {
        let extra: Vec<_> = params.keys().cloned().collect();
        return Err(format_err(format!("unexpected parameters: {}", extra.join(", "))));
    }
    Ok(model)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(format_err(format!(
                "truncated file: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}
