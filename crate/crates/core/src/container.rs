//! Versioned binary container of named arrays.
//!
//! Layout (little-endian): magic `PHNT`, format version `u32`, entry count
//! `u32`, then per entry a `u32` name length, UTF-8 name, element tag `u8`,
//! rank `u8`, `u64` dimensions and row-major data. A SHA-256 digest of all
//! preceding bytes closes the file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PHNT";
pub const VERSION: u32 = 1;
pub const DIGEST_LEN: usize = 32;

/// Typed payload of one entry.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn tag(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 1,
            ArrayData::U64(_) => 2,
            ArrayData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

/// One named array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

/// An ordered collection of named arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    entries: BTreeMap<String, Array>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: ArrayData) -> Result<()> {
        let expected: usize = dims.iter().product();
        if expected != data.len() || dims.len() > u8::MAX as usize {
            return Err(Error::Malformed(format!(
                "dimensions {dims:?} do not describe {} elements",
                data.len()
            )));
        }
        self.entries.insert(name.into(), Array { dims, data });
        Ok(())
    }

    pub fn put_f64(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.insert(name, dims, ArrayData::F64(data))
    }

    pub fn put_u64(&mut self, name: impl Into<String>, data: Vec<u64>) -> Result<()> {
        let dims = vec![data.len()];
        self.insert(name, dims, ArrayData::U64(data))
    }

    pub fn put_bytes(&mut self, name: impl Into<String>, data: Vec<u8>) -> Result<()> {
        let dims = vec![data.len()];
        self.insert(name, dims, ArrayData::U8(data))
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.entries.get(name).ok_or_else(|| Error::MissingEntry(name.to_string()))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.get(name)?.data {
            ArrayData::F64(v) => Ok(v),
            _ => Err(Error::Malformed(format!("`{name}` is not a float array"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.get(name)?.data {
            ArrayData::U64(v) => Ok(v),
            _ => Err(Error::Malformed(format!("`{name}` is not an integer array"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.data {
            ArrayData::U8(v) => Ok(v),
            _ => Err(Error::Malformed(format!("`{name}` is not a byte array"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, array) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(array.data.tag());
            out.push(array.dims.len() as u8);
            for &d in &array.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &array.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U8(v) => out.extend_from_slice(v),
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 + DIGEST_LEN || &bytes[..4] != MAGIC {
            return Err(if bytes.starts_with(MAGIC) || bytes.len() < 4 {
                Error::Checksum
            } else {
                Error::Malformed("not a container file".into())
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let mut r = Reader { buf: body, pos: 8 };
        let count = r.u32()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Malformed("entry name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(usize::try_from(r.u64()?).map_err(|_| Error::Malformed("dimension overflow".into()))?);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Malformed("dimension overflow".into()))?;
            let data = match tag {
                1 => ArrayData::F64(
                    r.take(len.checked_mul(8).ok_or_else(|| Error::Malformed("size overflow".into()))?)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                2 => ArrayData::U64(
                    r.take(len.checked_mul(8).ok_or_else(|| Error::Malformed("size overflow".into()))?)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                3 => ArrayData::U8(r.take(len)?.to_vec()),
                t => return Err(Error::Malformed(format!("unknown element tag {t}"))),
            };
            entries.insert(name, Array { dims, data });
        }
        if r.pos != body.len() {
            return Err(Error::Malformed("trailing bytes after the last entry".into()));
        }
        Ok(Container { entries })
    }

    /// Writes to `path` through a temporary file in the same directory, so
    /// a failed write never leaves a partial file behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Container::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Malformed("entry runs past the end of the file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
