//! SPIM measurement container.
//!
//! ```text
//! SPIM1
//! m=<int>
//! channels=<int>
//! wavelengths=<comma-separated reals | none>
//! standardised=<0|1>
//!
//! <channels * m f32 LE, channel-major>
//! <if standardised: channels f32 means, then channels f32 stds>
//! ```

use std::path::Path;

use super::{Measurement, Standardisation};
use crate::error::{Error, Result};
use crate::header::{format_wavelengths, push_f32_le, read_f32_le, write_atomic, Header};

const MAGIC: &str = "SPIM1";

/// All channels of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub wavelengths: Option<Vec<f64>>,
    pub channels: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn single(y: Measurement) -> Self {
        Self {
            wavelengths: None,
            channels: vec![y],
        }
    }

    pub fn m(&self) -> usize {
        self.channels.first().map_or(0, Measurement::len)
    }

    fn validate(&self) -> Result<()> {
        let m = self.m();
        if self.channels.is_empty() || m == 0 {
            return Err(Error::invalid("measurement set is empty"));
        }
        if self.channels.iter().any(|c| c.len() != m) {
            return Err(Error::invalid("channels have different measurement counts"));
        }
        let std = self.channels[0].is_standardised();
        if self.channels.iter().any(|c| c.is_standardised() != std) {
            return Err(Error::invalid("mixed standardised and raw channels"));
        }
        if let Some(w) = &self.wavelengths {
            if w.len() != self.channels.len() {
                return Err(Error::invalid("wavelength count does not match channel count"));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let standardised = self.channels[0].is_standardised();
        let mut out = format!(
            "{MAGIC}\nm={}\nchannels={}\nwavelengths={}\nstandardised={}\n\n",
            self.m(),
            self.channels.len(),
            format_wavelengths(self.wavelengths.as_deref()),
            u8::from(standardised)
        )
        .into_bytes();
        for c in &self.channels {
            push_f32_le(&mut out, c.values.iter().map(|&v| v as f32));
        }
        if standardised {
            let stats: Vec<Standardisation> = self.channels.iter().filter_map(|c| c.standardisation).collect();
            push_f32_le(&mut out, stats.iter().map(|s| s.mean as f32));
            push_f32_le(&mut out, stats.iter().map(|s| s.std as f32));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = Header::parse(bytes, MAGIC)?;
        let m: usize = header.get("m")?;
        let channels: usize = header.get("channels")?;
        let wavelengths = header.wavelengths("wavelengths")?;
        let standardised = match header.get::<u8>("standardised")? {
            0 => false,
            1 => true,
            v => {
                let (_, off) = header.raw("standardised")?;
                return Err(Error::format(off, format!("standardised must be 0 or 1, got {v}")));
            }
        };
        if m == 0 || channels == 0 {
            return Err(Error::format(0, "m and channels must be positive"));
        }
        if let Some(w) = &wavelengths {
            if w.len() != channels {
                let (_, off) = header.raw("wavelengths")?;
                return Err(Error::format(off, "wavelength count does not match channels"));
            }
        }
        let body = header.body_offset;
        let values = read_f32_le(bytes, body, channels * m)?;
        let mut stats = None;
        let mut end = body + channels * m * 4;
        if standardised {
            let s = read_f32_le(bytes, end, 2 * channels)?;
            end += 2 * channels * 4;
            stats = Some(s);
        }
        if bytes.len() != end {
            return Err(Error::format(end as u64, format!("{} trailing bytes after body", bytes.len() - end)));
        }
        let channels = values
            .chunks_exact(m)
            .enumerate()
            .map(|(c, vals)| Measurement {
                values: vals.iter().map(|&v| v as f64).collect(),
                channel_index: c,
                standardisation: stats.as_ref().map(|s| Standardisation {
                    mean: s[c] as f64,
                    std: s[channels + c] as f64,
                }),
            })
            .collect();
        Ok(Self {
            wavelengths,
            channels,
        })
    }
}

pub fn write_spim(path: &Path, set: &MeasurementSet) -> Result<()> {
    write_atomic(path, &set.to_bytes()?)
}

pub fn read_spim(path: &Path) -> Result<MeasurementSet> {
    MeasurementSet::from_bytes(&std::fs::read(path)?)
}
