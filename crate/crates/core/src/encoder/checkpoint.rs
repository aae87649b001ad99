//! Named-array checkpoints.
//!
//! ```text
//! b"DAPTARR\0"  u32 LE version
//! u32 LE meta length, meta (UTF-8 JSON)
//! u32 LE array count, then per array in name order:
//!   u32 LE name length, name, u32 LE rank, rank × u64 LE extents, f64 LE values
//! ```
//! Writes go through a sibling temporary file and a rename.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DAPTARR\0";
const VERSION: u32 = 1;

pub fn encode_arrays(meta: &str, arrays: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let pos = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.path, format!("invalid UTF-8 at byte {pos}")))
    }
}

pub fn decode_arrays(path: &Path, bytes: &[u8]) -> Result<(String, BTreeMap<String, Tensor>)> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported version {version}, expected {VERSION}")));
    }
    let meta_len = r.u32()?;
    let meta = r.string(meta_len)?;
    let count = r.u32()?;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = r.string(name_len)?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::format(path, "array too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((meta, arrays))
}

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.partial"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_arrays(path: &Path, meta: &str, arrays: &BTreeMap<String, Tensor>) -> Result<()> {
    write_atomic(path, &encode_arrays(meta, arrays))
}

pub fn load_arrays(path: &Path) -> Result<(String, BTreeMap<String, Tensor>)> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_arrays(path, &bytes)
}
