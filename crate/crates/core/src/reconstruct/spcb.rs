//! SPCB cube container.
//!
//! ```text
//! SPCB1
//! channels=<int>
//! side=<int>
//! wavelengths=<comma-separated reals>
//!
//! <channels * side^2 f32 LE, channel-major, row-major planes>
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::header::{format_wavelengths, push_f32_le, read_f32_le, write_atomic, Header};
use crate::imaging::{Image, SpectralCube};

const MAGIC: &str = "SPCB1";

pub fn to_bytes(cube: &SpectralCube) -> Vec<u8> {
    let mut out = format!(
        "{MAGIC}\nchannels={}\nside={}\nwavelengths={}\n\n",
        cube.channels(),
        cube.side(),
        format_wavelengths(Some(cube.wavelengths()))
    )
    .into_bytes();
    for p in cube.planes() {
        push_f32_le(&mut out, p.pixels().iter().map(|&v| v as f32));
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<SpectralCube> {
    let h = Header::parse(bytes, MAGIC)?;
    let c: usize = h.get("channels")?;
    let side: usize = h.get("side")?;
    let (_, off) = h.raw("side")?;
    if c == 0 || side == 0 || side > 4096 || c > 4096 {
        return Err(Error::format(off, format!("implausible cube size {c} x {side}x{side}")));
    }
    let wavelengths = h
        .wavelengths("wavelengths")?
        .ok_or_else(|| Error::format(h.raw("wavelengths").map(|r| r.1).unwrap_or(0), "cube needs wavelengths"))?;
    if wavelengths.len() != c {
        return Err(Error::format(off, format!("{} wavelengths for {c} channels", wavelengths.len())));
    }
    let n = side * side;
    let body = read_f32_le(bytes, h.body_offset, c * n)?;
    let end = h.body_offset + c * n * 4;
    if end != bytes.len() {
        return Err(Error::format(end as u64, format!("{} trailing bytes after the body", bytes.len() - end)));
    }
    let planes = body
        .chunks_exact(n)
        .map(|p| Image::from_unclamped(side, p.iter().map(|&v| f64::from(v)).collect()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(h.body_offset as u64, e.to_string()))?;
    SpectralCube::new(wavelengths, planes).map_err(|e| Error::format(0, e.to_string()))
}

pub fn write_spcb(path: &Path, cube: &SpectralCube) -> Result<()> {
    write_atomic(path, &to_bytes(cube))
}

pub fn read_spcb(path: &Path) -> Result<SpectralCube> {
    from_bytes(&std::fs::read(path)?)
}
