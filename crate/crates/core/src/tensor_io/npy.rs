//! Minimal reader/writer for the NumPy `.npy` container.
//!
//! Reading accepts format versions 1.0, 2.0 and 3.0, little-endian `<f4` or
//! `<f8` payloads in C order. Writing always emits version 1.0 with the header
//! padded so the payload starts on a 64-byte boundary, as numpy does.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor_io::raster::{FeatureGrid, Heatmap};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I32,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I32 => "<i4",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpyHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

/// Parses the preamble and header dict, returning the header and the
/// offset of the first payload byte.
pub fn parse_header(bytes: &[u8]) -> Result<(NpyHeader, usize)> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::MalformedHeader("missing \\x93NUMPY magic".into()));
    }
    let major = bytes[6];
    let (header_len, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::MalformedHeader("truncated preamble".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(Error::MalformedHeader(format!("unknown version {v}"))),
    };
    let end = start + header_len;
    if bytes.len() < end {
        return Err(Error::MalformedHeader("header runs past end of file".into()));
    }
    let text = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| Error::MalformedHeader("header is not valid text".into()))?;

    let descr = dict_value(text, "descr")?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    let dtype = match descr {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        "<i4" => Dtype::I32,
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    match dict_value(text, "fortran_order")? {
        "False" => {}
        "True" => {
            return Err(Error::MalformedHeader(
                "fortran_order=True is not supported".into(),
            ))
        }
        other => {
            return Err(Error::MalformedHeader(format!(
                "bad fortran_order value {other:?}"
            )))
        }
    }
    let shape = parse_shape(dict_value(text, "shape")?)?;
    Ok((NpyHeader { dtype, shape }, end))
}

/// Returns the raw text of the value for `key` in the header dict literal.
fn dict_value<'a>(text: &'a str, key: &str) -> Result<&'a str> {
    let needle_sq = format!("'{key}'");
    let needle_dq = format!("\"{key}\"");
    let pos = text
        .find(&needle_sq)
        .map(|p| p + needle_sq.len())
        .or_else(|| text.find(&needle_dq).map(|p| p + needle_dq.len()))
        .ok_or_else(|| Error::MalformedHeader(format!("missing key {key:?}")))?;
    let rest = text[pos..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::MalformedHeader(format!("expected ':' after {key:?}")))?
        .trim_start();
    let len = if rest.starts_with('(') {
        rest.find(')')
            .map(|i| i + 1)
            .ok_or_else(|| Error::MalformedHeader("unterminated shape tuple".into()))?
    } else {
        rest.find([',', '}']).unwrap_or(rest.len())
    };
    Ok(rest[..len].trim())
}

fn parse_shape(raw: &str) -> Result<Vec<usize>> {
    let inner = raw
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::MalformedHeader(format!("shape is not a tuple: {raw}")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("bad shape entry {s:?}")))
        })
        .collect()
}

/// Decodes a floating-point payload to f32 (f64 values are narrowed).
pub fn decode_f32(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let (header, offset) = parse_header(bytes)?;
    let count: usize = header.shape.iter().product();
    let size = header.dtype.size();
    let payload = &bytes[offset..];
    if payload.len() < count * size {
        return Err(Error::MalformedHeader(format!(
            "payload holds {} bytes, shape needs {}",
            payload.len(),
            count * size
        )));
    }
    let data = match header.dtype {
        Dtype::F32 => payload[..count * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        Dtype::F64 => payload[..count * 8]
            .chunks_exact(8)
            .map(|b| {
                f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]) as f32
            })
            .collect(),
        Dtype::I32 => return Err(Error::UnsupportedDtype(Dtype::I32.descr().into())),
    };
    Ok((header.shape, data))
}

/// Loads a `[Hf, Wf, D]` feature tensor.
pub fn load_npy_tensor(path: impl AsRef<Path>) -> Result<FeatureGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, data) = decode_f32(&bytes)?;
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected a 3-D [Hf, Wf, D] tensor, got shape {shape:?}"
        )));
    }
    FeatureGrid::new(shape[0], shape[1], shape[2], data)
}

fn encode_header(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_txt = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_txt
    );
    // preamble (10 bytes) + dict + padding + '\n' must be a multiple of 64
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

pub fn encode_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut out = encode_header(Dtype::F32, shape);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_i32(shape: &[usize], data: &[i32]) -> Vec<u8> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut out = encode_header(Dtype::I32, shape);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_feature_grid(path: impl AsRef<Path>, grid: &FeatureGrid) -> Result<()> {
    let bytes = encode_f32(&[grid.height(), grid.width(), grid.dim()], grid.data());
    write_bytes(path.as_ref(), &bytes)
}

pub fn save_heatmap(path: impl AsRef<Path>, map: &Heatmap) -> Result<()> {
    let bytes = encode_f32(&[map.height(), map.width()], map.data());
    write_bytes(path.as_ref(), &bytes)
}

pub fn save_i32(path: impl AsRef<Path>, shape: &[usize], data: &[i32]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_i32(shape, data))
}
