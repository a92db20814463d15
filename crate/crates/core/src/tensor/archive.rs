//! Keyed binary archive of float64 arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"GPRARCH1"
//! u64 metadata length, metadata as UTF-8 JSON
//! u64 entry count
//! per entry, sorted by key:
//!   u32 key length, key bytes
//!   u32 rank, rank × u64 dims
//!   u8 has_tokens; if 1: u32 count, count × (u32 length, bytes)
//!   numel × f64 payload
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;

const MAGIC: &[u8; 8] = b"GPRARCH1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive I/O: {0}")]
    Io(#[from] io::Error),
    #[error("malformed archive: {0}")]
    Format(String),
    #[error("archive metadata: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub tokens: Option<Vec<String>>,
}

impl ArchiveEntry {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
            tokens: None,
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor, ArchiveError> {
        Tensor::new(&self.shape, self.data.clone()).map_err(|e| ArchiveError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub metadata: serde_json::Map<String, serde_json::Value>,
    pub entries: BTreeMap<String, ArchiveEntry>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, entry: ArchiveEntry) {
        self.entries.insert(key.into(), entry);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ArchiveError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, e) in &self.entries {
            let n: usize = e.shape.iter().product();
            if n != e.data.len() {
                return Err(ArchiveError::Format(format!(
                    "entry `{key}` has shape {:?} but {} values",
                    e.shape,
                    e.data.len()
                )));
            }
            put_str(&mut out, key);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.tokens {
                Some(toks) => {
                    out.push(1);
                    out.extend_from_slice(&(toks.len() as u32).to_le_bytes());
                    for t in toks {
                        put_str(&mut out, t);
                    }
                }
                None => out.push(0),
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ArchiveError::Format("bad magic".into()));
        }
        let meta_len = get_u64(&mut r)? as usize;
        let meta_bytes = take(&mut r, meta_len)?;
        let metadata = serde_json::from_slice(meta_bytes)?;
        let count = get_u64(&mut r)?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let key = get_str(&mut r)?;
            let rank = get_u32(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| get_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let tokens = match flag[0] {
                0 => None,
                1 => {
                    let n = get_u32(&mut r)?;
                    Some((0..n).map(|_| get_str(&mut r)).collect::<Result<Vec<_>, _>>()?)
                }
                f => return Err(ArchiveError::Format(format!("bad token flag {f}"))),
            };
            let n: usize = shape.iter().product();
            let raw = take(&mut r, n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.insert(key, ArchiveEntry { shape, data, tokens });
        }
        if !r.is_empty() {
            return Err(ArchiveError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { metadata, entries })
    }

    /// Write via a temporary sibling and rename, so readers never see a
    /// partial file.
    pub fn save(&self, path: &Path) -> Result<(), ArchiveError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ArchiveError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8], ArchiveError> {
    if r.len() < n {
        return Err(ArchiveError::Format("truncated archive".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn get_u32(r: &mut &[u8]) -> Result<u32, ArchiveError> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().expect("4 bytes")))
}

fn get_u64(r: &mut &[u8]) -> Result<u64, ArchiveError> {
    Ok(u64::from_le_bytes(take(r, 8)?.try_into().expect("8 bytes")))
}

fn get_str(r: &mut &[u8]) -> Result<String, ArchiveError> {
    let n = get_u32(r)? as usize;
    String::from_utf8(take(r, n)?.to_vec()).map_err(|e| ArchiveError::Format(e.to_string()))
}
