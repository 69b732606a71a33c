//! The physical forward model: images, binary measurement matrices, the
//! linear measurement `y = E x`, detector noise and measurement standardisation.

mod spim;

pub use spim::{read_spim, write_spim, MeasurementSet};

use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Additive guard in the standardisation denominator.
pub const STD_GUARD: f64 = 1e-8;

/// Square grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    side: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Builds an image whose pixels are finite and inside `[0, 1]`.
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        let img = Self::from_unclamped(side, pixels)?;
        if let Some(p) = img.pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(img)
    }

    /// Builds an image without the `[0, 1]` range check (values must still be finite).
    pub fn from_unclamped(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(Error::invalid("image side must be positive"));
        }
        if pixels.len() != side * side {
            return Err(Error::invalid(format!(
                "expected {} pixels for side {side}, got {}",
                side * side,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite pixel value"));
        }
        Ok(Self { side, pixels })
    }

    /// Clamps every value into `[0, 1]`; non-finite values become 0.
    pub fn clamped(side: usize, mut pixels: Vec<f64>) -> Result<Self> {
        for p in &mut pixels {
            *p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(side, pixels)
    }

    pub fn filled(side: usize, value: f64) -> Result<Self> {
        Self::new(side, vec![value; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Stack of co-registered images, one per spectral band.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    wavelengths: Vec<f64>,
    planes: Vec<Image>,
}

impl SpectralCube {
    pub fn new(wavelengths: Vec<f64>, planes: Vec<Image>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::invalid("spectral cube needs at least one channel"));
        }
        if wavelengths.len() != planes.len() {
            return Err(Error::invalid(format!(
                "{} wavelengths for {} planes",
                wavelengths.len(),
                planes.len()
            )));
        }
        if wavelengths.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("wavelengths must be strictly increasing"));
        }
        let side = planes[0].side();
        if planes.iter().any(|p| p.side() != side) {
            return Err(Error::invalid("all cube planes must share one side"));
        }
        Ok(Self { wavelengths, planes })
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn side(&self) -> usize {
        self.planes[0].side()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn planes(&self) -> &[Image] {
        &self.planes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Continuous,
    BinarySh,
    BinaryLearned,
}

impl PatternKind {
    pub fn is_binary(self) -> bool {
        !matches!(self, PatternKind::Continuous)
    }
}

/// `m x n` measurement matrix. Each row, reshaped to `side x side`, is one
/// illumination pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternMatrix {
    m: usize,
    n: usize,
    side: usize,
    entries: Vec<f32>,
    kind: PatternKind,
    seed: u64,
}

impl PatternMatrix {
    pub fn new(m: usize, n: usize, entries: Vec<f32>, kind: PatternKind, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid("pattern matrix must be non-empty"));
        }
        let side = perfect_sqrt(n)
            .ok_or_else(|| Error::invalid(format!("pixel count {n} is not a perfect square")))?;
        if entries.len() != m * n {
            return Err(Error::invalid(format!(
                "expected {} entries for {m}x{n}, got {}",
                m * n,
                entries.len()
            )));
        }
        if kind.is_binary() && entries.iter().any(|&e| e != 0.0 && e != 1.0) {
            return Err(Error::invalid("binary pattern matrix has entries outside {0, 1}"));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("non-finite pattern entry"));
        }
        Ok(Self {
            m,
            n,
            side,
            entries,
            kind,
            seed,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut entries = vec![0.0f32; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self::new(n, n, entries, PatternKind::BinaryLearned, 0)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.entries.chunks_exact(self.n)
    }

    /// `A x` for an arbitrary length-n vector.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.m);
        for (o, row) in out.iter_mut().zip(self.rows()) {
            *o = dot_f32_f64(row, x);
        }
    }

    /// `A^T r` for an arbitrary length-m vector.
    pub fn apply_transpose(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.m);
        debug_assert_eq!(out.len(), self.n);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&ri, row) in r.iter().zip(self.rows()) {
            if ri == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(row) {
                *o += ri * a as f64;
            }
        }
    }
}

fn dot_f32_f64(a: &[f32], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise without reassociating a single chain.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] as f64 * b[i];
        acc[1] += a[i + 1] as f64 * b[i + 1];
        acc[2] += a[i + 2] as f64 * b[i + 2];
        acc[3] += a[i + 3] as f64 * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] as f64 * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn perfect_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Saved statistics of a standardised measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardisation {
    pub mean: f64,
    pub std: f64,
}

/// One measurement vector, i.e. one spectral channel of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub values: Vec<f64>,
    pub channel_index: usize,
    pub standardisation: Option<Standardisation>,
}

impl Measurement {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            channel_index: 0,
            standardisation: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_standardised(&self) -> bool {
        self.standardisation.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    Gaussian { sigma: f64 },
    PoissonGaussian { gamma: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub model: NoiseModel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            model: NoiseModel::None,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            model: NoiseModel::Gaussian { sigma },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn poisson_gaussian(gamma: f64, sigma: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            model: NoiseModel::PoissonGaussian { gamma, sigma },
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.model {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma } => check_sigma(sigma),
            NoiseModel::PoissonGaussian { gamma, sigma } => {
                check_sigma(sigma)?;
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(Error::invalid(format!("photon scale gamma must be > 0, got {gamma}")));
                }
                Ok(())
            }
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")))
    }
}

/// `y = E x`.
pub fn forward_measure(patterns: &PatternMatrix, image: &Image) -> Result<Measurement> {
    if patterns.n() != image.len() {
        return Err(Error::invalid(format!(
            "pattern matrix has {} columns but image has {} pixels",
            patterns.n(),
            image.len()
        )));
    }
    let mut values = vec![0.0; patterns.m()];
    patterns.apply(image.pixels(), &mut values);
    Ok(Measurement::raw(values))
}

/// Measures every plane of a cube with the same patterns; channel indices follow plane order.
pub fn forward_measure_cube(patterns: &PatternMatrix, cube: &SpectralCube) -> Result<Vec<Measurement>> {
    cube.planes()
        .iter()
        .enumerate()
        .map(|(c, plane)| {
            let mut y = forward_measure(patterns, plane)?;
            y.channel_index = c;
            Ok(y)
        })
        .collect()
}

/// Applies detector noise: `y + N(0, sigma^2)` or `gamma * Poisson(y / gamma) + N(0, sigma^2)`.
pub fn simulate_noise(y: &Measurement, spec: &NoiseSpec) -> Result<Measurement> {
    spec.validate()?;
    let mut out = y.clone();
    match spec.model {
        NoiseModel::None => {}
        NoiseModel::Gaussian { sigma } => {
            let mut rng = rng::seeded(spec.seed, stream::NOISE);
            add_gaussian(&mut out.values, sigma, &mut rng);
        }
        NoiseModel::PoissonGaussian { gamma, sigma } => {
            if let Some(v) = y.values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid(format!("negative or non-finite Poisson rate {v}")));
            }
            let mut rng = rng::seeded(spec.seed, stream::NOISE);
            for v in &mut out.values {
                let rate = *v / gamma;
                let counts = if rate == 0.0 {
                    0.0
                } else {
                    Poisson::new(rate)
                        .map_err(|e| Error::invalid(format!("Poisson rate {rate}: {e}")))?
                        .sample(&mut rng)
                };
                *v = gamma * counts;
            }
            add_gaussian(&mut out.values, sigma, &mut rng);
        }
    }
    Ok(out)
}

pub(crate) fn add_gaussian<R: rand::Rng>(values: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    for v in values {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero-mean, unit-variance rescaling with the statistics saved alongside.
pub fn standardize(y: &Measurement) -> Result<Measurement> {
    if y.len() < 2 {
        return Err(Error::invalid("standardisation needs at least two measurements"));
    }
    let (mean, std) = mean_std(&y.values);
    let denom = std + STD_GUARD;
    Ok(Measurement {
        values: y.values.iter().map(|v| (v - mean) / denom).collect(),
        channel_index: y.channel_index,
        standardisation: Some(Standardisation { mean, std }),
    })
}

/// Inverse of [`standardize`]. Raw measurements are returned unchanged.
pub fn unstandardize(y: &Measurement) -> Measurement {
    match y.standardisation {
        None => y.clone(),
        Some(Standardisation { mean, std }) => Measurement {
            values: y.values.iter().map(|v| v * (std + STD_GUARD) + mean).collect(),
            channel_index: y.channel_index,
            standardisation: None,
        },
    }
}

/// `100 (1 - m / n)`.
pub fn compression_percentage(m: usize, n: usize) -> Result<f64> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("compression needs 1 <= m <= n, got m={m}, n={n}")));
    }
    Ok(100.0 * (1.0 - m as f64 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_binary(m: usize, n: usize, seed: u64) -> PatternMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..m * n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        PatternMatrix::new(m, n, entries, PatternKind::BinaryLearned, seed).unwrap()
    }

    fn random_image(side: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(side, (0..side * side).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn indicator_rows_select_pixels() {
        let x = random_image(4, 1);
        let mut entries = vec![0.0f32; 3 * 16];
        for (r, px) in [2usize, 7, 15].iter().enumerate() {
            entries[r * 16 + px] = 1.0;
        }
        let e = PatternMatrix::new(3, 16, entries, PatternKind::BinaryLearned, 0).unwrap();
        let y = forward_measure(&e, &x).unwrap();
        assert_eq!(y.values, vec![x.pixels()[2], x.pixels()[7], x.pixels()[15]]);
        assert!(!y.is_standardised());
    }

    #[test]
    fn summation_row() {
        let mut px = vec![0.25; 16];
        px[0] = 1.0;
        px[1] = 0.5;
        px[2] = 1.0;
        px[3] = 1.0;
        px[4] = 1.0;
        let x = Image::new(4, px).unwrap();
        let total: f64 = x.pixels().iter().sum();
        assert_eq!(total, 7.25);
        let e = PatternMatrix::new(1, 16, vec![1.0; 16], PatternKind::BinaryLearned, 0).unwrap();
        assert_eq!(forward_measure(&e, &x).unwrap().values, vec![7.25]);
    }

    #[test]
    fn measure_matches_double_loop() {
        let e = random_binary(8, 16, 3);
        let x = random_image(4, 4);
        let y = forward_measure(&e, &x).unwrap();
        for i in 0..8 {
            let mut acc = 0.0;
            for j in 0..16 {
                acc += e.entries()[i * 16 + j] as f64 * x.pixels()[j];
            }
            assert!((y.values[i] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn measure_rejects_mismatch() {
        let e = random_binary(4, 16, 1);
        let x = random_image(5, 1);
        assert!(matches!(forward_measure(&e, &x), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn transpose_is_adjoint() {
        let e = random_binary(12, 64, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..64).map(|_| rng.random::<f64>() - 0.5).collect();
        let r: Vec<f64> = (0..12).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut ax = vec![0.0; 12];
        let mut atr = vec![0.0; 64];
        e.apply(&x, &mut ax);
        e.apply_transpose(&r, &mut atr);
        let lhs: f64 = ax.iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atr).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let y = Measurement::raw(vec![1.0, -2.0, 3.5]);
        let spec = NoiseSpec::gaussian(0.0, 42).unwrap();
        assert_eq!(simulate_noise(&y, &spec).unwrap(), y);
    }

    #[test]
    fn zero_rate_poisson_is_zero() {
        let y = Measurement::raw(vec![0.0; 3]);
        let spec = NoiseSpec::poisson_gaussian(1.0, 0.0, 5).unwrap();
        assert_eq!(simulate_noise(&y, &spec).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn poisson_rejects_negative_rate() {
        let y = Measurement::raw(vec![1.0, -0.1]);
        let spec = NoiseSpec::poisson_gaussian(1.0, 0.0, 5).unwrap();
        assert!(matches!(simulate_noise(&y, &spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::gaussian(-1.0, 0).is_err());
        assert!(NoiseSpec::poisson_gaussian(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let y = Measurement::raw(vec![10.0; 32]);
        let a = simulate_noise(&y, &NoiseSpec::poisson_gaussian(2.0, 0.5, 11).unwrap()).unwrap();
        let b = simulate_noise(&y, &NoiseSpec::poisson_gaussian(2.0, 0.5, 11).unwrap()).unwrap();
        let c = simulate_noise(&y, &NoiseSpec::poisson_gaussian(2.0, 0.5, 12).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn standardize_two_points() {
        let s = standardize(&Measurement::raw(vec![1.0, 3.0])).unwrap();
        let st = s.standardisation.unwrap();
        assert_eq!(st.mean, 2.0);
        assert_eq!(st.std, 1.0);
        assert!((s.values[0] + 1.0).abs() < 1e-7 && (s.values[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn standardize_constant_input() {
        let s = standardize(&Measurement::raw(vec![5.0; 4])).unwrap();
        assert_eq!(s.values, vec![0.0; 4]);
        assert_eq!(s.standardisation.unwrap().std, 0.0);
    }

    #[test]
    fn standardize_random_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y = Measurement::raw((0..64).map(|_| rng.random::<f64>() * 40.0 + 3.0).collect());
        let s = standardize(&y).unwrap();
        let (mean, std) = mean_std(&s.values);
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-5);
        assert!(standardize(&Measurement::raw(vec![1.0])).is_err());
    }

    #[test]
    fn compression_values() {
        assert!((compression_percentage(409, 4096).unwrap() - 90.014_648_437_5).abs() < 1e-9);
        assert_eq!(compression_percentage(64, 64).unwrap(), 0.0);
        assert!((compression_percentage(614, 16384).unwrap() - 96.252_441_406_25).abs() < 1e-9);
        assert!(compression_percentage(10, 4).is_err());
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, vec![0.0, 1.0, 0.5, 1.5]).is_err());
        assert!(Image::new(2, vec![0.0; 3]).is_err());
        assert!(Image::from_unclamped(2, vec![0.0, 1.0, 0.5, 1.5]).is_ok());
        assert!(Image::from_unclamped(1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn cube_validation() {
        let p = Image::filled(4, 0.5).unwrap();
        assert!(SpectralCube::new(vec![500.0, 510.0], vec![p.clone(), p.clone()]).is_ok());
        assert!(SpectralCube::new(vec![510.0, 500.0], vec![p.clone(), p.clone()]).is_err());
        assert!(SpectralCube::new(vec![500.0], vec![p.clone(), p.clone()]).is_err());
        let q = Image::filled(8, 0.5).unwrap();
        assert!(SpectralCube::new(vec![500.0, 510.0], vec![p, q]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn measurement_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s1 in 0u64..1000, s2 in 0u64..1000) {
                let e = random_binary(10, 36, 77);
                let x1 = random_image(6, s1);
                let x2 = random_image(6, s2 + 1000);
                let mix: Vec<f64> = x1.pixels().iter().zip(x2.pixels()).map(|(p, q)| a * p + b * q).collect();
                let xm = Image::from_unclamped(6, mix).unwrap();
                let ym = forward_measure(&e, &xm).unwrap();
                let y1 = forward_measure(&e, &x1).unwrap();
                let y2 = forward_measure(&e, &x2).unwrap();
                for i in 0..10 {
                    prop_assert!((ym.values[i] - (a * y1.values[i] + b * y2.values[i])).abs() < 1e-6);
                }
            }

            #[test]
            fn standardize_round_trips(values in proptest::collection::vec(-1e3f64..1e3, 2..80)) {
                let y = Measurement::raw(values.clone());
                let back = unstandardize(&standardize(&y).unwrap());
                for (u, v) in back.values.iter().zip(&values) {
                    prop_assert!((u - v).abs() < 1e-5);
                }
            }
        }
    }
}
