//! `SGNF` weights files.
//!
//! ```text
//! "SGNF" | version u16 | spec_len u32 | spec JSON
//!        | count u32 | { name_len u16 | name | dtype u8 | rank u8 | dims u32.. | payload }..
//!        | crc32c u32 (over everything after the magic)
//! ```
//! All integers and payloads are little-endian. Batch-norm running statistics
//! are stored as ordinary entries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Model, ModelError, ModelResult, ModelSpec};
use crate::layers::Parameters;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SGNF";
pub const FORMAT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> ModelResult<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(ModelError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(ModelError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> ModelResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> ModelResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> ModelResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct RawEntry<'a> {
    name: &'a [u8],
    dtype: u8,
    dims: Vec<usize>,
    payload: &'a [u8],
}

impl Model<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let spec = serde_json::to_vec(&self.spec).expect("spec serializes");
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        let mut entries = Vec::new();
        self.visit(&mut |name, t, _| entries.push((name.to_owned(), t.clone())));
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in &entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32c::crc32c(&out[MAGIC.len()..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> ModelResult<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(bytes) {
                ModelError::Truncated
            } else {
                ModelError::BadMagic
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(ModelError::BadMagic);
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(ModelError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        // Structure first so a short file reads as truncation, then the checksum,
        // then interpretation of the (now trusted) contents.
        let spec_len = r.u32()? as usize;
        let spec_bytes = r.take(spec_len)?;
        let count = r.u32()? as usize;
        let mut raw = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = r.take(name_len)?;
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<ModelResult<Vec<_>>>()?;
            let elems = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(ModelError::Truncated)?;
            let payload = r.take(elems.checked_mul(4).ok_or(ModelError::Truncated)?)?;
            raw.push(RawEntry {
                name,
                dtype,
                dims,
                payload,
            });
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(ModelError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let computed = crc32c::crc32c(&bytes[4..body_end]);
        if stored != computed {
            return Err(ModelError::Checksum { stored, computed });
        }

        let spec: ModelSpec =
            serde_json::from_slice(spec_bytes).map_err(|e| ModelError::Format(format!("spec JSON: {e}")))?;
        let mut table = BTreeMap::new();
        for e in raw {
            let name = std::str::from_utf8(e.name)
                .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            if e.dtype != DTYPE_F32 {
                return Err(ModelError::Format(format!("{name}: unsupported dtype tag {}", e.dtype)));
            }
            let data = e
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.dims, data).map_err(|err| ModelError::Format(format!("{name}: {err}")))?;
            if table.insert(name.clone(), t).is_some() {
                return Err(ModelError::Format(format!("duplicate tensor {name}")));
            }
        }

        let mut model = Model::build(spec, 0)?;
        let mut problem = None;
        model.visit_mut(&mut |name, t, _| match table.remove(name) {
            Some(v) if v.shape() == t.shape() => *t = v,
            Some(v) => {
                problem.get_or_insert(format!("{name}: stored shape {:?}, model expects {:?}", v.shape(), t.shape()));
            }
            None => {
                problem.get_or_insert(format!("missing tensor {name}"));
            }
        });
        if let Some(p) = problem {
            return Err(ModelError::Format(p));
        }
        if let Some(extra) = table.keys().next() {
            return Err(ModelError::Format(format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> ModelResult<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> ModelResult<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
