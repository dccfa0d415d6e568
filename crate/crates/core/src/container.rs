//! The `ATC1` binary tensor container.
//!
//! Layout, little-endian throughout:
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `ATC1`                  |
//! | 4            | version `u32` = 1             |
//! | 1            | dtype code (1 = f32, 2 = f64) |
//! | 1            | ndim                          |
//! | 8 × ndim     | dims as `u64`                 |
//! | rest         | row-major payload             |

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::{checked_len, DType, Tensor, DEFAULT_ELEMENT_CAP};

pub const MAGIC: [u8; 4] = *b"ATC1";
pub const VERSION: u32 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let width = t.dtype().width();
    let mut out = Vec::with_capacity(10 + 8 * t.rank() + width * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.dtype().code());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.dtype() {
        DType::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f64).to_le_bytes())),
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], FormatError> {
    let end = *at + n;
    if end > bytes.len() {
        return Err(FormatError::Truncated { needed: end, found: bytes.len() });
    }
    let s = &bytes[*at..end];
    *at = end;
    Ok(s)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, FormatError> {
    decode_capped(bytes, DEFAULT_ELEMENT_CAP)
}

pub fn decode_capped(bytes: &[u8], cap: usize) -> Result<Tensor, FormatError> {
    let mut at = 0;
    let magic: [u8; 4] = take(bytes, &mut at, 4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let code = take(bytes, &mut at, 1)?[0];
    let dtype = DType::from_code(code).ok_or(FormatError::UnsupportedDtype(code))?;
    let ndim = take(bytes, &mut at, 1)?[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap());
        let d = usize::try_from(d).map_err(|_| FormatError::Header(format!("extent {d} overflows usize")))?;
        dims.push(d);
    }
    let len = checked_len(&dims, cap).map_err(|e| FormatError::Header(e.to_string()))?;
    let width = dtype.width();
    let needed = len
        .checked_mul(width)
        .and_then(|n| n.checked_add(at))
        .ok_or_else(|| FormatError::Header("payload size overflows".into()))?;
    if bytes.len() < needed {
        return Err(FormatError::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(FormatError::TrailingBytes(bytes.len() - needed));
    }
    let payload = &bytes[at..];
    let data: Vec<f32> = match dtype {
        DType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(i));
    }
    Ok(Tensor::from_parts(dims, data, dtype))
}

pub fn write_container(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(path, e))
}
