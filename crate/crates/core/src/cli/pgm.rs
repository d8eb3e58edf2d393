//! Binary PGM (P5, maxval 255).

use std::path::Path;

use super::CliError;
use crate::generators::Image;

/// `floor(255 v + 0.5)`: round half up.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(x: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", x.width(), x.height()).into_bytes();
    out.extend(x.pixels().iter().map(|&v| quantize(v)));
    out
}

fn malformed(msg: &str) -> CliError {
    CliError::Pgm(msg.to_string())
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], CliError> {
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
    if start == *pos {
        return Err(malformed("header ends early"));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, CliError> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(&format!("bad {what} in header")))
}

/// Byte `b` maps to `b / 255`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image, CliError> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != b"P5" {
        return Err(malformed("missing P5 magic"));
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(malformed("only maxval 255 is supported"));
    }
    if width == 0 || height == 0 {
        return Err(malformed("zero image size"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(CliError::PgmTruncated { expected: width * height, got: 0 });
    }
    let data = &bytes[pos + 1..];
    if data.len() < width * height {
        return Err(CliError::PgmTruncated { expected: width * height, got: data.len() });
    }
    let pixels = data[..width * height].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Image::new(height, width, pixels)?)
}

pub fn write_pgm(x: &Image, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, encode_pgm(x)).map_err(|e| CliError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_pgm(&bytes)
}
