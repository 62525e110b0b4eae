//! Binary example streams, framed like checkpoints (little-endian):
//!
//! ```text
//! magic    4 bytes "FNX1"
//! version  u32     1
//! kind     u8      0 = masked-LM/next-sentence, 1 = recall
//! count    u32     number of records
//! mlm record:
//!   n u32, input_ids n×u32, type_ids n×u8,
//!   masks u32, positions masks×u32, labels masks×u32,
//!   nsp_label u8, truncated u32
//! recall record:
//!   n u32, input_ids n×u32, target_id u32, target_class u32
//! ```

use std::io::{Read, Write};

use crate::codec::{put_len, put_u32, put_u8, Reader};
use crate::error::{Error, Result};

use super::mlm::MlmExample;
use super::recall::RecallExample;

pub const STREAM_MAGIC: [u8; 4] = *b"FNX1";
pub const STREAM_VERSION: u32 = 1;

const KIND_MLM: u8 = 0;
const KIND_RECALL: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Examples {
    Mlm(Vec<MlmExample>),
    Recall(Vec<RecallExample>),
}

fn put_ids(w: &mut impl Write, ids: &[usize]) -> std::io::Result<()> {
    for &i in ids {
        put_len(w, i)?;
    }
    Ok(())
}

pub fn write_examples(examples: &Examples, w: &mut impl Write) -> Result<()> {
    let io = |e| Error::io("<examples>", e);
    w.write_all(&STREAM_MAGIC).map_err(io)?;
    put_u32(w, STREAM_VERSION).map_err(io)?;
    match examples {
        Examples::Mlm(xs) => {
            put_u8(w, KIND_MLM).map_err(io)?;
            put_len(w, xs.len()).map_err(io)?;
            for x in xs {
                put_len(w, x.input_ids.len()).map_err(io)?;
                put_ids(w, &x.input_ids).map_err(io)?;
                for &t in &x.type_ids {
                    let t = u8::try_from(t).map_err(|_| Error::InvalidArgument(format!("type id {t} exceeds 255")))?;
                    put_u8(w, t).map_err(io)?;
                }
                put_len(w, x.mask_positions.len()).map_err(io)?;
                put_ids(w, &x.mask_positions).map_err(io)?;
                put_ids(w, &x.mask_labels).map_err(io)?;
                put_u8(w, x.nsp_label as u8).map_err(io)?;
                put_len(w, x.truncated).map_err(io)?;
            }
        }
        Examples::Recall(xs) => {
            put_u8(w, KIND_RECALL).map_err(io)?;
            put_len(w, xs.len()).map_err(io)?;
            for x in xs {
                put_len(w, x.input_ids.len()).map_err(io)?;
                put_ids(w, &x.input_ids).map_err(io)?;
                put_len(w, x.target_id).map_err(io)?;
                put_len(w, x.target_class).map_err(io)?;
            }
        }
    }
    Ok(())
}

fn ids<R: Read>(r: &mut Reader<R>, len: usize, what: &'static str) -> Result<Vec<usize>> {
    let bytes = r.vec(len * 4, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

pub fn read_examples(r: impl Read) -> Result<Examples> {
    let mut r = Reader::new(r);
    let mut magic = [0u8; 4];
    r.bytes(&mut magic, "magic")?;
    if magic != STREAM_MAGIC {
        return Err(Error::BadMagic {
            expected: STREAM_MAGIC,
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != STREAM_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: STREAM_VERSION,
        });
    }
    let kind = r.u8("kind")?;
    let count = r.u32("record count")? as usize;
    let out = match kind {
        KIND_MLM => {
            let mut xs = Vec::new();
            for _ in 0..count {
                let n = r.u32("length")? as usize;
                let input_ids = ids(&mut r, n, "input ids")?;
                let type_ids = r.vec(n, "type ids")?.into_iter().map(usize::from).collect();
                let m = r.u32("mask count")? as usize;
                let mask_positions = ids(&mut r, m, "mask positions")?;
                let mask_labels = ids(&mut r, m, "mask labels")?;
                let nsp_label = r.u8("nsp label")? as usize;
                let truncated = r.u32("truncated")? as usize;
                xs.push(MlmExample {
                    input_ids,
                    type_ids,
                    mask_positions,
                    mask_labels,
                    nsp_label,
                    truncated,
                });
            }
            Examples::Mlm(xs)
        }
        KIND_RECALL => {
            let mut xs = Vec::new();
            for _ in 0..count {
                let n = r.u32("length")? as usize;
                let input_ids = ids(&mut r, n, "input ids")?;
                let target_id = r.u32("target id")? as usize;
                let target_class = r.u32("target class")? as usize;
                xs.push(RecallExample {
                    input_ids,
                    target_id,
                    target_class,
                });
            }
            Examples::Recall(xs)
        }
        other => return Err(Error::InvalidArgument(format!("unknown example kind {other}"))),
    };
    if !r.at_end()? {
        return Err(Error::InvalidArgument("trailing bytes after the last record".into()));
    }
    Ok(out)
}
