//! Model checkpoints, all integers little-endian:
//!
//! | field                | encoding                                         |
//! |----------------------|--------------------------------------------------|
//! | magic                | 8 bytes `AFFCKPT\0`                              |
//! | version              | `u32` = 1                                        |
//! | config               | `u64` byte length, then UTF-8 TOML with `[model]` and `[train]` tables |
//! | parameter count      | `u32`                                            |
//! | per parameter        | `u32` name length, name bytes, `u32` rank, `rank × u64` extents, `f64` values in row-major order |
//!
//! Parameters appear in the model's creation order. Loading rebuilds the
//! model from the embedded config and requires every name and shape to match.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use affuse_core::model::{FusionModel, ModelConfig};
use affuse_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AFFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Embedded {
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub train: TrainConfig,
}

pub fn encode(model: &FusionModel, train: &TrainConfig) -> Result<Vec<u8>> {
    let embedded = Embedded {
        model: model.config().clone(),
        train: train.clone(),
    };
    let config = toml::to_string(&embedded).map_err(|e| Error::Failed(format!("serializing checkpoint config: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for p in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let dims = p.tensor.dims();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes through a temporary file so an interrupted save never leaves a torn checkpoint.
pub fn save(path: &Path, model: &FusionModel, train: &TrainConfig) -> Result<()> {
    let bytes = encode(model, train)?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64) > remaining {
            return Err(Error::format(self.path, format!("truncated while reading {what}")));
        }
        let mut buf = vec![0u8; n];
        self.cur.read_exact(&mut buf).map_err(|e| Error::io(self.path, e))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::format(self.path, format!("{what} does not fit in memory")))
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    if r.bytes(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let n = r.len("config length")?;
    let text = String::from_utf8(r.bytes(n, "config")?)
        .map_err(|_| Error::format(path, "embedded config is not UTF-8"))?;
    let embedded: Embedded =
        toml::from_str(&text).map_err(|e| Error::format(path, format!("embedded config: {}", e.message())))?;
    let mut model = FusionModel::new(embedded.model)?;
    let expected = model.param_shapes();
    let count = r.u32("parameter count")? as usize;
    if count != expected.len() {
        return Err(Error::format(
            path,
            format!("{count} parameters stored, the configured model has {}", expected.len()),
        ));
    }
    for (name, dims) in &expected {
        let len = r.u32("parameter name length")? as usize;
        let stored = String::from_utf8(r.bytes(len, "parameter name")?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?;
        if &stored != name {
            return Err(Error::format(path, format!("expected parameter `{name}`, found `{stored}`")));
        }
        let rank = r.u32("rank")? as usize;
        let stored_dims = (0..rank).map(|_| r.len("extent")).collect::<Result<Vec<_>>>()?;
        if &stored_dims != dims {
            return Err(Error::format(
                path,
                format!("parameter `{name}` has shape {stored_dims:?}, expected {dims:?}"),
            ));
        }
        let numel: usize = dims.iter().product();
        let raw = r.bytes(numel * 8, "parameter values")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.params_mut().set(name, &values)?;
    }
    if (r.cur.position() as usize) != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last parameter"));
    }
    Ok(Checkpoint {
        model,
        train: embedded.train,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use affuse_core::model::StreamSpec;

    fn model() -> FusionModel {
        FusionModel::new(ModelConfig {
            streams: vec![StreamSpec::new("a", 3), StreamSpec::new("b", 2)],
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 8,
            window: 2,
            max_len: 4,
            init_seed: 5,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode(&m, &TrainConfig::default()).unwrap();
        let back = decode(Path::new("x"), &bytes).unwrap();
        assert_eq!(back.model.params(), m.params());
        assert_eq!(back.model.config(), m.config());
        assert_eq!(back.train, TrainConfig::default());
        assert_eq!(encode(&back.model, &back.train).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let bytes = encode(&model(), &TrainConfig::default()).unwrap();
        assert!(matches!(decode(Path::new("x"), &bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(Path::new("x"), &bad), Err(Error::Format { .. })));
    }
}
