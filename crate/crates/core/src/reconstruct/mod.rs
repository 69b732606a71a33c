//! Inference: learned decoding, per-channel multispectral reconstruction,
//! full-basis spectral ground truth and sRGB rendering.

mod cmf;
pub mod spcb;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use cmf::{CMF_START_NM, CMF_STEP_NM, CMF_XYZ};
pub use spcb::{read_spcb, write_spcb};

use crate::error::{Error, Result};
use crate::imaging::{Image, Measurement, PatternMatrix, SpectralCube};
use crate::trainer::{standardize_values, Checkpoint};
use crate::tv::{tval3_reconstruct, TvConfig};

/// Decodes raw measurements with a trained checkpoint. Returns the clamped
/// image and the wall time of the network pass in seconds.
pub fn decode(ckpt: &Checkpoint, y: &Measurement) -> Result<(Image, f64)> {
    if y.len() != ckpt.arch.m {
        return Err(Error::invalid(format!("checkpoint expects {} measurements, got {}", ckpt.arch.m, y.len())));
    }
    if y.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("measurement contains non-finite values"));
    }
    // Already-standardised input goes straight to the network.
    let input: Vec<f32> = if y.is_standardised() {
        y.values.iter().map(|&v| v as f32).collect()
    } else {
        standardize_values(&y.values).0.into_iter().map(|v| v as f32).collect()
    };
    let start = Instant::now();
    let out = ckpt.decoder.infer(&input)?;
    let elapsed = start.elapsed().as_secs_f64();
    let img = Image::clamped(ckpt.arch.side, out.into_iter().map(f64::from).collect())?;
    Ok((img, elapsed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Learned encoder + decoder.
    Led,
    /// TV on scrambled Hadamard patterns.
    Tval3,
    /// Decoder trained behind fixed scrambled Hadamard patterns.
    ShLd,
    /// TV on learned binary patterns.
    LeTval3,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tval3, Method::LeTval3, Method::ShLd, Method::Led];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "led" => Ok(Method::Led),
            "tval3" | "sh-tval3" => Ok(Method::Tval3),
            "sh-ld" => Ok(Method::ShLd),
            "le-tval3" => Ok(Method::LeTval3),
            _ => Err(Error::invalid(format!("unknown method {s:?} (led, tval3, sh-ld, le-tval3)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Led => "led",
            Method::Tval3 => "tval3",
            Method::ShLd => "sh-ld",
            Method::LeTval3 => "le-tval3",
        }
    }

    /// Row label in benchmark tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Led => "LED",
            Method::Tval3 => "SH-TVAL3",
            Method::ShLd => "SH-LD",
            Method::LeTval3 => "LE-TVAL3",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::Led | Method::ShLd)
    }
}

/// What a method needs to turn one measurement vector into an image.
#[derive(Debug, Clone, Copy)]
pub enum Reconstructor<'a> {
    Learned(&'a Checkpoint),
    Tv { patterns: &'a PatternMatrix, config: TvConfig },
}

impl Reconstructor<'_> {
    pub fn m(&self) -> usize {
        match self {
            Reconstructor::Learned(c) => c.arch.m,
            Reconstructor::Tv { patterns, .. } => patterns.m(),
        }
    }

    pub fn side(&self) -> usize {
        match self {
            Reconstructor::Learned(c) => c.arch.side,
            Reconstructor::Tv { patterns, .. } => patterns.side(),
        }
    }

    /// Image and reconstruction wall time in seconds.
    pub fn reconstruct(&self, y: &Measurement) -> Result<(Image, f64)> {
        match self {
            Reconstructor::Learned(c) => decode(c, y),
            Reconstructor::Tv { patterns, config } => {
                if y.is_standardised() {
                    return Err(Error::invalid("TV reconstruction needs raw measurements"));
                }
                let start = Instant::now();
                let (img, _) = tval3_reconstruct(patterns, y, config)?;
                let t = start.elapsed().as_secs_f64();
                Ok((Image::clamped(img.side(), img.into_pixels())?, t))
            }
        }
    }
}

/// Channel means divided by the largest one.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScale {
    values: Vec<f64>,
}

impl ChannelScale {
    pub fn from_measurements(channels: &[Measurement]) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("no channels"));
        }
        if let Some(c) = channels.iter().find(|c| c.is_standardised()) {
            return Err(Error::invalid(format!("channel {} is already standardised", c.channel_index)));
        }
        let means: Vec<f64> = channels
            .iter()
            .map(|c| (c.values.iter().sum::<f64>() / c.len().max(1) as f64).max(0.0))
            .collect();
        let max = means.iter().cloned().fold(0.0, f64::max);
        let values = if max > 0.0 { means.iter().map(|m| m / max).collect() } else { vec![1.0; means.len()] };
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Reconstructs every channel on its own. Learned decodes lose the absolute
/// level to standardisation, so their planes are multiplied by the channel
/// scale; TV planes keep their level and are returned as solved.
pub fn reconstruct_multispectral(
    rec: &Reconstructor<'_>,
    channels: &[Measurement],
    wavelengths: Vec<f64>,
) -> Result<(SpectralCube, ChannelScale)> {
    let m = rec.m();
    if let Some(c) = channels.iter().find(|c| c.len() != m) {
        return Err(Error::invalid(format!("channel {} has {} measurements, expected {m}", c.channel_index, c.len())));
    }
    let scale = ChannelScale::from_measurements(channels)?;
    let learned = matches!(rec, Reconstructor::Learned(_));
    let planes = channels
        .par_iter()
        .zip(scale.values().par_iter())
        .map(|(y, &s)| {
            let (img, _) = rec.reconstruct(y)?;
            if learned {
                Image::clamped(img.side(), img.into_pixels().into_iter().map(|p| p * s).collect())
            } else {
                Ok(img)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((SpectralCube::new(wavelengths, planes)?, scale))
}

/// Inverts a full square basis channel by channel with a pivoted LU solve.
/// The result is not denoised, so it may leave [0, 1].
pub fn spectral_ground_truth(full: &PatternMatrix, channels: &[Measurement], wavelengths: Vec<f64>) -> Result<SpectralCube> {
    let n = full.n();
    if full.m() != n {
        return Err(Error::invalid(format!("ground truth needs a square basis, got {}x{n}", full.m())));
    }
    if channels.is_empty() {
        return Err(Error::invalid("no channels"));
    }
    if let Some(c) = channels.iter().find(|c| c.len() != n) {
        return Err(Error::invalid(format!("channel {} has {} values, expected {n}", c.channel_index, c.len())));
    }
    let a = DMatrix::from_row_iterator(n, n, full.entries().iter().map(|&v| f64::from(v)));
    let lu = a.lu();
    let diag = lu.u().diagonal().map(f64::abs);
    let (dmax, dmin) = (diag.max(), diag.min());
    let cond = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    if !(cond < 1e12) {
        return Err(Error::numerical(0, format!("pattern basis is singular (pivot ratio estimate {cond:.3e})")));
    }
    let side = full.side();
    let planes = channels
        .iter()
        .map(|c| {
            let x = lu
                .solve(&DVector::from_column_slice(&c.values))
                .ok_or_else(|| Error::numerical(0, "LU solve failed"))?;
            Image::from_unclamped(side, x.iter().copied().collect())
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralCube::new(wavelengths, planes)
}

/// Gamma-encoded sRGB, three planes in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub side: usize,
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub b: Vec<f64>,
}

impl RgbImage {
    pub fn interleaved(&self) -> Vec<f64> {
        (0..self.r.len()).flat_map(|i| [self.r[i], self.g[i], self.b[i]]).collect()
    }

    pub fn mean(&self) -> [f64; 3] {
        let n = self.r.len() as f64;
        [self.r.iter().sum::<f64>() / n, self.g.iter().sum::<f64>() / n, self.b.iter().sum::<f64>() / n]
    }
}

/// Linear interpolation of the colour-matching functions.
pub fn cmf_at(nm: f64) -> Result<[f64; 3]> {
    let last = CMF_START_NM + CMF_STEP_NM * (CMF_XYZ.len() - 1) as f64;
    if !(CMF_START_NM..=last).contains(&nm) {
        return Err(Error::invalid(format!("wavelength {nm} nm is outside {CMF_START_NM}-{last} nm")));
    }
    let pos = (nm - CMF_START_NM) / CMF_STEP_NM;
    let i = (pos.floor() as usize).min(CMF_XYZ.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (CMF_XYZ[i], CMF_XYZ[i + 1]);
    Ok([0, 1, 2].map(|k| a[k] + f * (b[k] - a[k])))
}

/// Bandwidth of each channel: half the gap to each neighbour (1 nm for a
/// lone channel).
fn band_widths(w: &[f64]) -> Vec<f64> {
    if w.len() < 2 {
        return vec![1.0; w.len()];
    }
    (0..w.len())
        .map(|i| {
            let left = if i > 0 { w[i] - w[i - 1] } else { w[1] - w[0] };
            let right = if i + 1 < w.len() { w[i + 1] - w[i] } else { w[i] - w[i - 1] };
            (left + right) / 2.0
        })
        .collect()
}

const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

/// Per-pixel XYZ = sum over channels of value * CMF * bandwidth.
pub fn spectral_to_xyz(cube: &SpectralCube) -> Result<Vec<[f64; 3]>> {
    let cmfs = cube.wavelengths().iter().map(|&w| cmf_at(w)).collect::<Result<Vec<_>>>()?;
    let widths = band_widths(cube.wavelengths());
    let n = cube.side() * cube.side();
    let mut xyz = vec![[0.0; 3]; n];
    for ((plane, cmf), dl) in cube.planes().iter().zip(&cmfs).zip(&widths) {
        for (acc, &v) in xyz.iter_mut().zip(plane.pixels()) {
            for k in 0..3 {
                acc[k] += v * cmf[k] * dl;
            }
        }
    }
    Ok(xyz)
}

pub fn xyz_to_linear_srgb(xyz: [f64; 3]) -> [f64; 3] {
    XYZ_TO_SRGB.map(|row| row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2])
}

/// Linear sRGB before white-point normalisation (positively homogeneous in the cube).
pub fn spectral_to_linear_srgb(cube: &SpectralCube) -> Result<Vec<[f64; 3]>> {
    Ok(spectral_to_xyz(cube)?.into_iter().map(xyz_to_linear_srgb).collect())
}

fn gamma_encode(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Renders a cube with the cube's brightest Y mapped to display white.
pub fn spectral_to_srgb(cube: &SpectralCube) -> Result<RgbImage> {
    let xyz = spectral_to_xyz(cube)?;
    let ymax = xyz.iter().map(|p| p[1]).fold(0.0, f64::max);
    let scale = if ymax > 0.0 { 1.0 / ymax } else { 0.0 };
    let n = xyz.len();
    let mut out = RgbImage { side: cube.side(), r: vec![0.0; n], g: vec![0.0; n], b: vec![0.0; n] };
    for (i, p) in xyz.iter().enumerate() {
        let rgb = xyz_to_linear_srgb([p[0] * scale, p[1] * scale, p[2] * scale]);
        out.r[i] = gamma_encode(rgb[0]);
        out.g[i] = gamma_encode(rgb[1]);
        out.b[i] = gamma_encode(rgb[2]);
    }
    Ok(out)
}
