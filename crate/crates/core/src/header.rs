//! Shared reader/writer for the ASCII `key=value` headers used by the SPIM,
//! SPIP and SPCB containers: a magic line, key lines, one blank line, then a
//! binary body.

use std::collections::HashMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub(crate) struct Header {
    fields: HashMap<String, (String, u64)>,
    pub body_offset: usize,
}

impl Header {
    pub fn parse(bytes: &[u8], magic: &str) -> Result<Self> {
        let mut pos = 0usize;
        let first = next_line(bytes, &mut pos).ok_or_else(|| Error::format(0, "missing magic line"))?;
        if first != magic.as_bytes() {
            return Err(Error::format(0, format!("bad magic, expected {magic}")));
        }
        let mut fields = HashMap::new();
        loop {
            let start = pos as u64;
            let line = next_line(bytes, &mut pos)
                .ok_or_else(|| Error::format(start, "header not terminated by a blank line"))?;
            if line.is_empty() {
                break;
            }
            let text = std::str::from_utf8(line).map_err(|_| Error::format(start, "header line is not UTF-8"))?;
            let (key, value) = text
                .split_once('=')
                .ok_or_else(|| Error::format(start, format!("expected key=value, got {text:?}")))?;
            fields.insert(key.trim().to_string(), (value.trim().to_string(), start));
        }
        Ok(Self {
            fields,
            body_offset: pos,
        })
    }

    pub fn raw(&self, key: &str) -> Result<(&str, u64)> {
        self.fields
            .get(key)
            .map(|(v, off)| (v.as_str(), *off))
            .ok_or_else(|| Error::format(self.body_offset as u64, format!("missing header key {key}")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let (v, off) = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::format(off, format!("cannot parse {key}={v}")))
    }

    pub fn wavelengths(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let (v, off) = self.raw(key)?;
        if v == "none" {
            return Ok(None);
        }
        v.split(',')
            .map(|w| match w.trim().parse::<f64>() {
                Ok(nm) if nm.is_finite() && nm > 0.0 => Ok(nm),
                _ => Err(Error::format(off, format!("bad wavelength {w:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    // Header lines are short; refuse to scan deep into a binary body.
    let limit = (*pos + (1 << 16)).min(bytes.len());
    let rel = bytes[*pos..limit].iter().position(|&b| b == b'\n')?;
    let line = &bytes[*pos..*pos + rel];
    *pos += rel + 1;
    Some(line)
}

pub(crate) fn format_wavelengths(w: Option<&[f64]>) -> String {
    match w {
        None => "none".to_string(),
        Some(w) => w.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","),
    }
}

pub(crate) fn read_f32_le(bytes: &[u8], offset: usize, count: usize) -> Result<Vec<f32>> {
    let need = count * 4;
    if bytes.len() < offset + need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated body: need {need} bytes from offset {offset}, file has {}", bytes.len()),
        ));
    }
    Ok(bytes[offset..offset + need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn push_f32_le(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
pub(crate) fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
