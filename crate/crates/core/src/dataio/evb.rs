//! EVB: a flat little-endian embedding blob.
//!
//! Layout: magic `EVB1`, `u32` dim, `u64` count, then `count` records of
//! `u16` id length, UTF-8 id bytes, and `dim` `f32` values.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EVB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EvbBlob {
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
}

/// Serializes rows as float32; values are rounded with `as f32`.
pub fn encode<'a, I>(dim: usize, rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidConfig(format!("dimension {dim} exceeds u32")))?;
    let mut body = Vec::new();
    let mut count = 0u64;
    for (id, values) in rows {
        if values.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: values.len() });
        }
        let len = u16::try_from(id.len()).map_err(|_| Error::InvalidConfig(format!("id `{id}` longer than 65535 bytes")))?;
        body.extend_from_slice(&len.to_le_bytes());
        body.extend_from_slice(id.as_bytes());
        for v in values {
            body.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        count += 1;
    }
    let mut out = Vec::with_capacity(16 + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse_byte(self.pos as u64, format!("truncated EVB while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice has length N"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EvbBlob> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::MagicMismatch { expected: "EVB1" });
    }
    c.pos = 4;
    let dim = u32::from_le_bytes(c.array("dim")?) as usize;
    let count = u64::from_le_bytes(c.array("count")?);
    let record_min = 2 + 4 * dim as u64;
    if count.saturating_mul(record_min) > (bytes.len() - c.pos) as u64 {
        return Err(Error::parse_byte(c.pos as u64, format!("truncated EVB: header declares {count} records")));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(c.array("id length")?) as usize;
        let at = c.pos as u64;
        let id = std::str::from_utf8(c.take(len, "id")?).map_err(|_| Error::parse_byte(at, "utterance id is not UTF-8"))?.to_string();
        let raw = c.take(4 * dim, "values")?;
        let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        records.push((id, values));
    }
    if c.pos != bytes.len() {
        return Err(Error::parse_byte(c.pos as u64, "trailing bytes after last EVB record"));
    }
    Ok(EvbBlob { dim, records })
}
