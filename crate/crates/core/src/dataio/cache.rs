//! Binary chromagram cache.
//!
//! Layout, all little-endian: `"CHRM"`, `u16` version (1), `u32` rows,
//! `u32` cols, then `rows × cols` `f32` values in row-major order.

use std::io::Write;
use std::path::Path;

use crate::dsp::{Chromagram, HOP, N_CHROMA, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"CHRM";
pub const CACHE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub(crate) fn encode(rows: usize, cols: usize, values: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub(crate) fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!(
            "feature cache header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != CACHE_MAGIC {
        return Err(Error::Corrupt("bad feature cache magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CACHE_VERSION {
        return Err(Error::Version {
            expected: CACHE_VERSION,
            found: version,
        });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corrupt("feature cache dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "feature cache payload is {} bytes, header declares {rows}x{cols} ({expected} bytes)",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((rows, cols, values))
}

/// Write atomically: the payload goes to a sibling temp file that is then
/// renamed over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = match dir {
        Some(d) => d.join(format!(".{}.tmp", file_name.to_string_lossy())),
        None => format!(".{}.tmp", file_name.to_string_lossy()).into(),
    };
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_feature_cache(chroma: &Chromagram, path: &Path) -> Result<()> {
    if chroma.energy.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chromagram".into()));
    }
    write_atomic(path, &encode(chroma.frames, N_CHROMA, &chroma.energy))
}

/// Read a cached chromagram. The cache stores values only, so the frame
/// rate is taken to be the canonical one and the normalization flag is
/// left unset.
pub fn read_feature_cache(path: &Path) -> Result<Chromagram> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (rows, cols, values) = decode(&bytes)?;
    if cols != N_CHROMA {
        return Err(Error::shape(
            format!("{N_CHROMA} columns"),
            format!("{cols} columns"),
        ));
    }
    Chromagram::from_energy(values, rows, SAMPLE_RATE as f64 / HOP as f64)
}
