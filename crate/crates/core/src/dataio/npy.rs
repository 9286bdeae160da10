//! Minimal `.npy` support: version 1.0 headers, little-endian `f4`/`f8`,
//! C order, two dimensions.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

/// Row-major matrix decoded from an npy file, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

#[derive(Debug, PartialEq)]
struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 6 || &bytes[..6] != MAGIC {
        return Err(Error::MagicMismatch { expected: "\\x93NUMPY" });
    }
    if bytes.len() < 10 {
        return Err(Error::parse_byte(bytes.len() as u64, "truncated npy preamble"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::UnsupportedDtype(format!("npy format version {major}.{minor} (only 1.0)")));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(Error::parse_byte(10, "truncated npy header"));
    }
    let text = std::str::from_utf8(&bytes[10..data_start]).map_err(|_| Error::parse_byte(10, "npy header is not ASCII"))?;
    let header = parse_header(text)?;
    if header.fortran_order {
        return Err(Error::UnsupportedDtype("Fortran-ordered arrays".into()));
    }
    let [rows, cols] = header.shape[..] else {
        return Err(Error::UnsupportedDtype(format!("{}-D array (only 2-D)", header.shape.len())));
    };
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(header.dtype.size()))
        .ok_or_else(|| Error::parse_byte(10, "npy shape overflows"))?;
    let payload = &bytes[data_start..];
    if payload.len() != need {
        return Err(Error::parse_byte(data_start as u64, format!("npy payload has {} bytes, shape requires {need}", payload.len())));
    }
    let data = match header.dtype {
        Dtype::F4 => payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
        Dtype::F8 => payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
    };
    Ok(NpyArray { rows, cols, dtype: header.dtype, data })
}

fn header_err(msg: impl Into<String>) -> Error {
    Error::parse_byte(10, msg)
}

/// Parses the Python dict literal of an npy v1.0 header.
fn parse_header(text: &str) -> Result<Header> {
    let body = text
        .trim_end_matches(['\n', ' ', '\0'])
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| header_err("npy header is not a dict"))?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    let mut rest = body.trim();
    while !rest.is_empty() {
        let (key, after) = quoted(rest)?;
        let after = after.trim_start().strip_prefix(':').ok_or_else(|| header_err("expected `:`"))?.trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = quoted(after)?;
                descr = Some(v);
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else {
                    return Err(header_err("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let close = after.find(')').ok_or_else(|| header_err("unterminated shape tuple"))?;
                let inner = after.strip_prefix('(').ok_or_else(|| header_err("shape must be a tuple"))?;
                let dims = inner[..close - 1]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| header_err(format!("bad shape entry `{s}`"))))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                &after[close + 1..]
            }
            other => return Err(header_err(format!("unexpected header key `{other}`"))),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
    }
    let descr = descr.ok_or_else(|| header_err("missing descr"))?;
    let dtype = match descr {
        "<f4" => Dtype::F4,
        "<f8" => Dtype::F8,
        other => return Err(Error::UnsupportedDtype(format!("dtype `{other}` (only <f4, <f8)"))),
    };
    Ok(Header {
        dtype,
        fortran_order: fortran.ok_or_else(|| header_err("missing fortran_order"))?,
        shape: shape.ok_or_else(|| header_err("missing shape"))?,
    })
}

fn quoted(s: &str) -> Result<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"').ok_or_else(|| header_err("expected quoted string"))?;
    let end = s[1..].find(q).ok_or_else(|| header_err("unterminated string"))?;
    Ok((&s[1..1 + end], &s[2 + end..]))
}

/// Encodes a `rows x cols` float32 C-order array with a v1.0 header padded
/// to a 64-byte boundary.
pub fn encode_f32(rows: usize, cols: usize, values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({rows}, {cols}), }}");
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let header_len = dict.len() + pad + 1;
    let mut out = Vec::with_capacity(10 + header_len + 4 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}
