//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u8        format version (= 1)
//! [u8; 4]   magic "RREC"
//! u32       section count
//! per section:
//!   str       section name            (u32 length + UTF-8)
//!   u64       Adam step counter
//!   u32       parameter count
//!   per parameter:
//!     str       name
//!     u32       rank, then u64 extent per axis
//!     f64 * n   value, then m, then v (row-major)
//! u64       metadata length, then metadata bytes (UTF-8 JSON)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::params::{ParamSlot, ParamStore};
use crate::numerics::tensor::Tensor;

pub const FORMAT_VERSION: u8 = 1;
pub const MAGIC: &[u8; 4] = b"RREC";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<(String, ParamStore)>,
    pub metadata: String,
}

impl Checkpoint {
    pub fn new(metadata: impl Into<String>) -> Self {
        Checkpoint {
            sections: Vec::new(),
            metadata: metadata.into(),
        }
    }

    pub fn with_section(mut self, name: &str, store: &ParamStore) -> Self {
        self.sections.push((name.to_string(), store.clone()));
        self
    }

    pub fn section(&self, name: &str) -> Result<&ParamStore> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![FORMAT_VERSION];
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, store) in &self.sections {
            put_str(&mut out, name);
            out.extend_from_slice(&store.step().to_le_bytes());
            out.extend_from_slice(&(store.len() as u32).to_le_bytes());
            for (pname, slot) in store.slots() {
                put_str(&mut out, pname);
                let shape = slot.value.shape();
                out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
                for d in shape {
                    out.extend_from_slice(&(*d as u64).to_le_bytes());
                }
                for t in [&slot.value, &slot.m, &slot.v] {
                    for x in t.data() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let n_sections = r.u32()? as usize;
        let mut sections = Vec::with_capacity(n_sections.min(64));
        for _ in 0..n_sections {
            let name = r.string()?;
            let step = r.u64()?;
            let n_params = r.u32()? as usize;
            let mut store = ParamStore::new();
            store.set_step(step);
            for _ in 0..n_params {
                let pname = r.string()?;
                let rank = r.u32()? as usize;
                if rank > 8 {
                    return Err(Error::Checkpoint(format!("implausible rank {rank} for `{pname}`")));
                }
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let n: usize = shape.iter().product();
                let mut read = || -> Result<Tensor> {
                    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    Tensor::new(shape.clone(), data).map_err(|e| Error::Checkpoint(e.to_string()))
                };
                let value = read()?;
                let m = read()?;
                let v = read()?;
                store
                    .insert_slot(pname, ParamSlot { value, m, v })
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
            }
            sections.push((name, store));
        }
        let meta_len = r.u64()? as usize;
        let metadata = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { sections, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}
