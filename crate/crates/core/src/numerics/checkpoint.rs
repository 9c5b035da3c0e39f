//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SEEDCKPT"                      magic
//! u32                              format version (1)
//! u64                              entry count
//! per entry:
//!   u64 name length, UTF-8 name
//!   u64 rank, rank x u64 extents
//!   u8  frozen flag (0 or 1)
//! f64 payloads, entry by entry in manifest order
//! u64 trailer length, UTF-8 trailer (experiment config text)
//! ```

use std::io::{Read, Write};

use crate::error::{Result, SeedError};

pub const MAGIC: &[u8; 8] = b"SEEDCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
    pub trailer: String,
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u64).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.shape.len() as u64).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            w.write_all(&[e.frozen as u8])?;
        }
        for e in &self.entries {
            for v in &e.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.trailer.len() as u64).to_le_bytes())?;
        w.write_all(self.trailer.as_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let bad = |m: &str| SeedError::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("missing SEEDCKPT magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(SeedError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u64(&mut r)? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = read_u64(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, len)?.to_vec())
                .map_err(|_| bad("name is not UTF-8"))?;
            let rank = read_u64(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let frozen = match take(&mut r, 1)?[0] {
                0 => false,
                1 => true,
                _ => return Err(bad("frozen flag must be 0 or 1")),
            };
            manifest.push((name, shape, frozen));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape, frozen) in manifest {
            let n: usize = shape.iter().product();
            let raw = take(&mut r, n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry {
                name,
                shape,
                frozen,
                data,
            });
        }
        let tlen = read_u64(&mut r)? as usize;
        let trailer = String::from_utf8(take(&mut r, tlen)?.to_vec())
            .map_err(|_| bad("trailer is not UTF-8"))?;
        if !r.is_empty() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { entries, trailer })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| SeedError::io(format!("create {}", path.display()), e))?;
        self.write_to(&mut f)
            .map_err(|e| SeedError::io(format!("write {}", path.display()), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| SeedError::io(format!("read {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(SeedError::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r, 8)?.try_into().unwrap()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().unwrap()))
}
