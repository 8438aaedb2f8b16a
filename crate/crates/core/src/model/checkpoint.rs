//! Checkpoint container: `AVLT` magic, format version, the config as
//! key-value text, then every parameter tensor in declaration order
//! (name, dims as u32 LE, data as f32 LE). Saving a loaded checkpoint
//! reproduces the file byte for byte.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::net::Model;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;
use crate::params::ParamStore;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"AVLT";

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let config_text = model.config().to_kv_text();
    let store = model.params();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_text.as_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (def, tensor) in store.iter() {
        buf.extend_from_slice(&(def.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(def.name.as_bytes());
        buf.extend_from_slice(&(def.shape.len() as u32).to_le_bytes());
        for &d in &def.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.as_slice() {
            buf.extend_from_slice(&v.to_f32v().to_le_bytes());
        }
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(r.fail_at(0, "not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
        )));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_bytes = r.take(cfg_len, "config text")?;
    let cfg_text = std::str::from_utf8(cfg_bytes)
        .map_err(|e| Error::Checkpoint(format!("config text is not UTF-8: {e}")))?;
    let cfg = ModelConfig::from_kv_text(cfg_text, path)?;

    let defs = cfg.param_defs();
    let n_records = r.u32("record count")? as usize;
    if n_records != defs.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for this config, file has {n_records}",
            defs.len()
        )));
    }
    let mut values = Vec::with_capacity(defs.len());
    for def in &defs {
        let name_len = r.u32("name length")? as usize;
        let name_bytes = r.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?;
        if name != def.name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: expected {}, found {name}",
                def.name
            )));
        }
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dimension")? as usize);
        }
        if shape != def.shape {
            return Err(Error::Checkpoint(format!(
                "{name}: expected shape {:?}, file has {shape:?}",
                def.shape
            )));
        }
        let numel: usize = shape.iter().product();
        let data_bytes = r.take(numel * 4, "tensor data")?;
        let data: Vec<T> = data_bytes
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        values.push(Tensor::from_vec(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.fail_at(
            r.pos,
            format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        ));
    }
    let store = ParamStore::from_values(defs, values)?;
    Model::from_parts(cfg, store)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail_at(
                self.pos,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn fail_at(&self, offset: usize, detail: String) -> Error {
        Error::Parse {
            what: "checkpoint",
            offset: offset as u64,
            detail,
        }
    }
}
