//! Parameter checkpoints.
//!
//! Little-endian layout: magic `CPNW`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u32` rank, `u64` extents
//! and the `f64` values.

use std::fs;
use std::path::Path;

use cpn_core::autodiff::Tensor;
use cpn_core::model::Parameters;

use crate::FormatError;

pub const MAGIC: &[u8; 4] = b"CPNW";
pub const VERSION: u32 = 1;

pub fn encode(params: &Parameters) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> FormatError {
        FormatError::Parse {
            file: self.file.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], file: &Path) -> Result<Parameters, FormatError> {
    let mut r = Reader { bytes, pos: 0, file };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("not a CPNW checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        r.pos -= 4;
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?).map_err(|_| FormatError::Parse {
            file: file.to_path_buf(),
            offset: at,
            msg: "name is not UTF-8".into(),
        })?;
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| r.err(format!("{name}: extents overflow")))?;
        let raw = r.take(n * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| r.err(format!("{name}: {e}")))?;
        if !t.is_finite() {
            return Err(r.err(format!("{name}: non-finite values")));
        }
        entries.push((name.to_string(), t));
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok(Parameters::from_entries(entries))
}

pub fn save(path: &Path, params: &Parameters) -> Result<(), FormatError> {
    fs::write(path, encode(params)).map_err(|e| FormatError::io(path, e))
}

pub fn load(path: &Path) -> Result<Parameters, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode(&bytes, path)
}
