//! Binary (P5) PGM and (P6) PPM reading and writing, 8-bit only.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a binary PGM: {0}")]
    Format(String),
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| PgmError::Format("empty".into()))?;
    if magic != b"P5" {
        return Err(PgmError::Format("missing P5 magic".into()));
    }
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| PgmError::Format("truncated header".into()))?;
        *f = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::Format("bad header field".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(PgmError::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(PgmError::Format(format!(
            "raster holds {} bytes, expected {n}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, PgmError> {
    let bytes = fs::read(path).map_err(|source| PgmError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_pgm(&bytes)
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<(), PgmError> {
    fs::write(path, encode_pgm(image)).map_err(|source| PgmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes interleaved 8-bit RGB as P6.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), PgmError> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|source| PgmError::Io {
        path: path.to_path_buf(),
        source,
    })
}
