//! Binary PGM (P5) and PPM (P6).

use std::path::Path;

use crate::error::{Error, Result};
use crate::header::write_atomic;

/// A decoded raster normalised to [0, 1] by the file's maxval.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() && self.pos - start < 10 {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start as u64, format!("bad {what}")))
    }
}

/// Decodes P5 (grey) or P6 (RGB), 8- or 16-bit (big-endian).
pub fn decode_pnm(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::format(0, "not a binary PGM/PPM (P5/P6) file")),
    };
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(c.pos as u64, format!("invalid header {width}x{height} maxval {maxval}")));
    }
    if width.saturating_mul(height) > 1 << 28 {
        return Err(Error::SizeLimit(format!("{width}x{height} image is too large")));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(Error::format(c.pos as u64, "missing whitespace before raster")),
    }
    let count = width * height * channels;
    let wide = maxval > 255;
    let need = count * if wide { 2 } else { 1 };
    let body = bytes
        .get(c.pos..c.pos + need)
        .ok_or_else(|| Error::format(bytes.len() as u64, format!("truncated raster: need {need} bytes")))?;
    let scale = 1.0 / maxval as f64;
    let samples = if wide {
        body.chunks_exact(2).map(|p| f64::from(u16::from_be_bytes([p[0], p[1]])) * scale).collect()
    } else {
        body.iter().map(|&p| f64::from(p) * scale).collect()
    };
    Ok(Raster { width, height, channels, maxval: maxval as u16, samples })
}

fn quantise(v: f64, maxval: u16) -> u16 {
    (v.clamp(0.0, 1.0) * f64::from(maxval)).round() as u16
}

fn encode(magic: &str, width: usize, height: usize, bits: u8, samples: &[f64]) -> Result<Vec<u8>> {
    let maxval: u16 = match bits {
        8 => 255,
        16 => 65535,
        _ => return Err(Error::invalid(format!("bit depth must be 8 or 16, got {bits}"))),
    };
    let mut out = format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes();
    for &s in samples {
        let q = quantise(s, maxval);
        if bits == 8 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

/// Grey samples in [0, 1] (clamped) as P5.
pub fn encode_pgm(width: usize, height: usize, samples: &[f64], bits: u8) -> Result<Vec<u8>> {
    if samples.len() != width * height {
        return Err(Error::invalid("sample count does not match width x height"));
    }
    encode("P5", width, height, bits, samples)
}

/// Interleaved RGB samples in [0, 1] (clamped) as P6.
pub fn encode_ppm(width: usize, height: usize, rgb: &[f64], bits: u8) -> Result<Vec<u8>> {
    if rgb.len() != 3 * width * height {
        return Err(Error::invalid("sample count does not match 3 x width x height"));
    }
    encode("P6", width, height, bits, rgb)
}

pub fn read_pnm(path: &Path) -> Result<Raster> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, samples: &[f64], bits: u8) -> Result<()> {
    write_atomic(path, &encode_pgm(width, height, samples, bits)?)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f64], bits: u8) -> Result<()> {
    write_atomic(path, &encode_ppm(width, height, rgb, bits)?)
}
