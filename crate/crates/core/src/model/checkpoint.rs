//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       4 bytes  "FNT1"
//! version     u32      currently 1
//! config      u32 byte length, UTF-8 `key = value` text (ModelConfig::to_kv_text)
//! count       u32      number of tensors
//! per tensor:
//!   name      u32 byte length, UTF-8
//!   dtype     u8       0 = f32, 1 = f64
//!   rank      u8
//!   dims      rank × u32
//!   data      product(dims) values of the dtype, row-major
//! ```
//!
//! Tensors appear in the model's construction order. Writers emit f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::codec::{put_len, put_str, put_u32, put_u8, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::config::ModelConfig;
use super::encoder::Model;
use super::params::{param_specs, Param, ParamStore};

pub const MAGIC: [u8; 4] = *b"FNT1";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

pub fn write_checkpoint(model: &Model, w: &mut impl Write) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(&MAGIC).map_err(io)?;
    put_u32(w, VERSION).map_err(io)?;
    put_str(w, &model.config().to_kv_text()).map_err(io)?;
    put_len(w, model.params().len()).map_err(io)?;
    for (_, p) in model.params().iter() {
        put_str(w, &p.spec.name).map_err(io)?;
        put_u8(w, DTYPE_F64).map_err(io)?;
        let rank = u8::try_from(p.value.rank())
            .map_err(|_| Error::InvalidArgument(format!("rank of `{}` exceeds 255", p.spec.name)))?;
        put_u8(w, rank).map_err(io)?;
        for &d in p.value.dims() {
            put_len(w, d).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(p.value.numel() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Raw checkpoint contents before they are matched against a config.
#[derive(Clone, Debug)]
pub struct CheckpointData {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn read_checkpoint(r: impl Read) -> Result<CheckpointData> {
    let mut r = Reader::new(r);
    let mut magic = [0u8; 4];
    r.bytes(&mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let config = ModelConfig::from_kv_text(&r.string("config")?)?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let dtype = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::InvalidArgument(format!("tensor `{name}` is too large")))?;
        let data: Vec<f64> = match dtype {
            DTYPE_F64 => r
                .vec(numel * 8, "tensor data")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DTYPE_F32 => r
                .vec(numel * 4, "tensor data")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown dtype code {other} for `{name}`"
                )))
            }
        };
        tensors.push((name, Tensor::new(dims, data)?));
    }
    if !r.at_end()? {
        return Err(Error::InvalidArgument("trailing bytes after the last tensor".into()));
    }
    Ok(CheckpointData { config, tensors })
}

/// Matches tensors against `cfg`'s parameter specs, in order.
pub fn model_from_checkpoint(data: CheckpointData, cfg: ModelConfig) -> Result<Model> {
    let (specs, _) = param_specs(&cfg);
    let mut store = ParamStore::default();
    let mut tensors = data.tensors.into_iter();
    for spec in specs {
        let Some((name, value)) = tensors.next() else {
            return Err(Error::CheckpointDims {
                name: spec.name,
                expected: spec.dims,
                found: vec![],
            });
        };
        if name != spec.name {
            return Err(Error::Unknown {
                what: "checkpoint tensor",
                name,
            });
        }
        if value.dims() != spec.dims {
            return Err(Error::CheckpointDims {
                name,
                expected: spec.dims,
                found: value.dims().to_vec(),
            });
        }
        store.push(Param { spec, value })?;
    }
    if let Some((name, _)) = tensors.next() {
        return Err(Error::Unknown {
            what: "checkpoint tensor",
            name,
        });
    }
    Model::from_params(cfg, store)
}

fn open(path: &Path) -> Result<CheckpointData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

/// Loads a checkpoint with the config stored inside it.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let data = open(path.as_ref())?;
    let cfg = data.config.clone();
    model_from_checkpoint(data, cfg)
}

/// Loads a checkpoint into an explicit config; mismatched tensors are an error.
pub fn load_checkpoint_for(path: impl AsRef<Path>, cfg: ModelConfig) -> Result<Model> {
    model_from_checkpoint(open(path.as_ref())?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{Preset, Variant};

    fn bytes(model: &Model) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(model, &mut out).unwrap();
        out
    }

    fn tiny() -> Model {
        let mut cfg = ModelConfig::small(8, 16, 2, Variant::FnetHybrid);
        cfg.vocab_size = 40;
        cfg.seed = 9;
        Model::new(cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = tiny();
        let first = bytes(&model);
        let data = read_checkpoint(first.as_slice()).unwrap();
        assert_eq!(&data.config, model.config());
        let back = model_from_checkpoint(data, model.config().clone()).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(bytes(&back), first);
    }

    #[test]
    fn every_truncation_is_reported() {
        let full = bytes(&tiny());
        for cut in [0, 3, 4, 7, 20, full.len() / 2, full.len() - 1] {
            let err = read_checkpoint(&full[..cut]).unwrap_err();
            assert!(matches!(err, Error::Truncated(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = bytes(&tiny());
        b[4] = 7;
        assert!(matches!(
            read_checkpoint(b.as_slice()),
            Err(Error::CheckpointVersion { found: 7, expected: 1 })
        ));
        b[0] = b'X';
        assert!(matches!(read_checkpoint(b.as_slice()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn f32_tensors_load() {
        let mut w = Vec::new();
        w.extend_from_slice(&MAGIC);
        put_u32(&mut w, VERSION).unwrap();
        let mut cfg = ModelConfig::small(4, 8, 0, Variant::FnetFft);
        cfg.vocab_size = 6;
        put_str(&mut w, &cfg.to_kv_text()).unwrap();
        put_u32(&mut w, 1).unwrap();
        put_str(&mut w, "x").unwrap();
        put_u8(&mut w, DTYPE_F32).unwrap();
        put_u8(&mut w, 1).unwrap();
        put_u32(&mut w, 2).unwrap();
        w.extend_from_slice(&1.5f32.to_le_bytes());
        w.extend_from_slice(&(-2.0f32).to_le_bytes());
        let data = read_checkpoint(w.as_slice()).unwrap();
        assert_eq!(data.tensors[0].1.data(), &[1.5, -2.0]);
    }

    #[test]
    fn base_into_large_is_a_dim_error() {
        let mut base = ModelConfig::preset(Preset::Tiny, Variant::FnetFft);
        base.vocab_size = 50;
        let mut large = ModelConfig::preset(
            Preset::Sized {
                hidden_dim: 256,
                num_layers: 2,
            },
            Variant::FnetFft,
        );
        large.vocab_size = 50;
        let data = read_checkpoint(bytes(&Model::new(base).unwrap()).as_slice()).unwrap();
        assert!(matches!(
            model_from_checkpoint(data, large),
            Err(Error::CheckpointDims { .. })
        ));
    }
}
