//! Four-method comparison harness: measure, add noise, reconstruct, score.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::header::write_atomic;
use crate::imaging::{forward_measure, mean_std, simulate_noise, standardize, unstandardize, Image, Measurement, NoiseSpec, PatternMatrix};
use crate::metrics::{psnr, ssim};
use crate::reconstruct::{Method, Reconstructor};

pub const SUMMARY_HEADER: &str = "method,ssim_mean,ssim_std,psnr_mean,psnr_std,ms_mean,ms_std";
pub const DETAIL_HEADER: &str = "image_id,method,ssim,psnr,ms";

/// Timed repetitions per reconstruction; the median is reported.
pub const TIMING_REPEATS: usize = 3;

/// One benchmarked configuration: the patterns used to acquire and the
/// reconstruction that goes with them.
#[derive(Debug, Clone)]
pub struct MethodSetup<'a> {
    pub label: String,
    pub method: Method,
    pub patterns: &'a PatternMatrix,
    pub reconstructor: Reconstructor<'a>,
}

impl<'a> MethodSetup<'a> {
    pub fn new(method: Method, patterns: &'a PatternMatrix, reconstructor: Reconstructor<'a>) -> Result<Self> {
        if patterns.m() != reconstructor.m() || patterns.side() != reconstructor.side() {
            return Err(Error::invalid(format!(
                "{}: patterns are {}x{} but the reconstructor expects m={} at side {}",
                method.label(),
                patterns.m(),
                patterns.n(),
                reconstructor.m(),
                reconstructor.side()
            )));
        }
        Ok(Self { label: method.label().to_string(), method, patterns, reconstructor })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    /// Gaussian noise on the standardised measurement scale.
    pub sigma: f64,
    pub seed: u64,
    /// Worker threads; 0 = rayon default.
    pub jobs: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sigma: 0.25, seed: 0, jobs: 0, repeats: TIMING_REPEATS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailRow {
    pub image_id: String,
    pub method: String,
    pub ssim: f64,
    pub psnr: f64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: String,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ms_mean: f64,
    pub ms_std: f64,
    /// Images scored (failures excluded).
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub details: Vec<DetailRow>,
    /// (image_id, method, message) for every failed reconstruction.
    pub failures: Vec<(String, String, String)>,
}

impl BenchmarkReport {
    pub fn row(&self, label: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == label)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.4},{:.4},{:.4},{:.4}",
                r.method, r.ssim_mean, r.ssim_std, r.psnr_mean, r.psnr_std, r.ms_mean, r.ms_std
            );
        }
        s
    }

    pub fn detail_csv(&self) -> String {
        let mut s = format!("{DETAIL_HEADER}\n");
        for d in &self.details {
            let _ = writeln!(s, "{},{},{:.6},{:.4},{:.4}", d.image_id, d.method, d.ssim, d.psnr, d.ms);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("summary.csv"), self.summary_csv().as_bytes())?;
        write_atomic(&dir.join("detail.csv"), self.detail_csv().as_bytes())
    }
}

/// Adds Gaussian noise of width `sigma` in standardised units and returns the
/// raw-scale result, i.e. `y + sigma * std(y) * eps`.
pub fn add_test_noise(y: &Measurement, sigma: f64, seed: u64) -> Result<Measurement> {
    if sigma == 0.0 {
        return Ok(y.clone());
    }
    let z = simulate_noise(&standardize(y)?, &NoiseSpec::gaussian(sigma, seed)?)?;
    Ok(unstandardize(&z))
}

fn noise_seed(seed: u64, image: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(image as u64)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn run_one(setup: &MethodSetup<'_>, x: &Image, idx: usize, cfg: &BenchConfig) -> Result<(f64, f64, f64)> {
    let y = forward_measure(setup.patterns, x)?;
    let y = add_test_noise(&y, cfg.sigma, noise_seed(cfg.seed, idx))?;
    let mut times = Vec::with_capacity(cfg.repeats.max(1));
    let mut out = None;
    for _ in 0..cfg.repeats.max(1) {
        let (img, t) = setup.reconstructor.reconstruct(&y)?;
        times.push(t);
        out = Some(img);
    }
    let xhat = out.expect("at least one repeat");
    Ok((ssim(x, &xhat)?, psnr(x, &xhat)?, median(times) * 1e3))
}

/// Mean and population std over finite values; infinities (exact PSNR hits)
/// are reported as-is when every value is infinite.
fn stats(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        return (v[0], 0.0);
    }
    mean_std(&finite)
}

/// Runs every method on every image. A failing reconstruction is logged and
/// counted, never fatal.
pub fn benchmark(images: &[(String, Image)], methods: &[MethodSetup<'_>], cfg: &BenchConfig) -> Result<BenchmarkReport> {
    if methods.is_empty() || images.is_empty() {
        return Err(Error::invalid("benchmark needs at least one method and one image"));
    }
    for m in methods {
        if let Some((id, _)) = images.iter().find(|(_, x)| x.len() != m.patterns.n()) {
            return Err(Error::invalid(format!("image {id} does not match {} patterns of n={}", m.label, m.patterns.n())));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let work: Vec<(usize, usize)> = (0..methods.len()).flat_map(|m| (0..images.len()).map(move |i| (m, i))).collect();
    let results: Vec<Result<(f64, f64, f64)>> =
        pool.install(|| work.par_iter().map(|&(m, i)| run_one(&methods[m], &images[i].1, i, cfg)).collect());

    let mut details = Vec::new();
    let mut failures = Vec::new();
    for (&(m, i), r) in work.iter().zip(results) {
        let (id, label) = (images[i].0.clone(), methods[m].label.clone());
        match r {
            Ok((s, p, ms)) => details.push(DetailRow { image_id: id, method: label, ssim: s, psnr: p, ms }),
            Err(e) => {
                eprintln!("warning: {label} failed on {id}: {e}");
                failures.push((id, label, e.to_string()));
            }
        }
    }
    let rows = methods
        .iter()
        .map(|m| {
            let mine: Vec<&DetailRow> = details.iter().filter(|d| d.method == m.label).collect();
            let col = |f: fn(&DetailRow) -> f64| mine.iter().map(|d| f(d)).collect::<Vec<_>>();
            let (ssim_mean, ssim_std) = stats(&col(|d| d.ssim));
            let (psnr_mean, psnr_std) = stats(&col(|d| d.psnr));
            let (ms_mean, ms_std) = stats(&col(|d| d.ms));
            BenchmarkRow { method: m.label.clone(), ssim_mean, ssim_std, psnr_mean, psnr_std, ms_mean, ms_std, count: mine.len() }
        })
        .collect();
    if !failures.is_empty() {
        eprintln!("warning: {} reconstructions failed and were excluded", failures.len());
    }
    Ok(BenchmarkReport { rows, details, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_phantoms;
    use crate::patterns::{scrambled_hadamard, scrambled_hadamard_subset};
    use crate::trainer::{ArchitectureConfig, EncoderState, TrainConfig, Trainer};
    use crate::tv::TvConfig;

    fn imgs(count: usize, side: usize) -> Vec<(String, Image)> {
        synth_phantoms(count, side, 3)
            .unwrap()
            .images()
            .into_iter()
            .enumerate()
            .map(|(i, x)| (format!("p{i:03}"), x))
            .collect()
    }

    #[test]
    fn test_noise_is_relative_to_measurement_spread() {
        let y = Measurement::raw((0..4000).map(|i| 100.0 + (i % 7) as f64 * 3.0).collect());
        let (_, s) = mean_std(&y.values);
        let z = add_test_noise(&y, 0.25, 1).unwrap();
        let d: Vec<f64> = y.values.iter().zip(&z.values).map(|(a, b)| b - a).collect();
        let (m, sd) = mean_std(&d);
        assert!(m.abs() < 0.05 * s);
        assert!((sd / s - 0.25).abs() < 0.02, "{}", sd / s);
        assert_eq!(add_test_noise(&y, 0.0, 1).unwrap(), y);
    }

    #[test]
    fn csv_shape_and_counts() {
        let images = imgs(3, 16);
        let sh = scrambled_hadamard_subset(256, 64, 1).unwrap();
        let arch = ArchitectureConfig { base_channels: 4, unet_levels: 1, ..ArchitectureConfig::new(64, 16) };
        let ck = Trainer::with_fixed_encoder(arch, TrainConfig::default(), 1, &sh).unwrap().checkpoint(false);
        let methods = vec![
            MethodSetup::new(Method::Tval3, &sh, Reconstructor::Tv { patterns: &sh, config: TvConfig::for_sh() }).unwrap(),
            MethodSetup::new(Method::ShLd, &sh, Reconstructor::Learned(&ck)).unwrap(),
        ];
        let r = benchmark(&images, &methods, &BenchConfig { repeats: 1, ..Default::default() }).unwrap();
        let summary = r.summary_csv();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert_eq!(lines.len(), 1 + methods.len());
        let detail = r.detail_csv();
        assert_eq!(detail.lines().next(), Some(DETAIL_HEADER));
        assert_eq!(detail.lines().count(), 1 + methods.len() * images.len());
        assert!(r.rows.iter().all(|row| row.ssim_std >= 0.0 && row.ms_std >= 0.0 && row.count == 3));
        assert!(r.failures.is_empty());
    }

    #[test]
    fn mismatched_setup_rejected() {
        let a = scrambled_hadamard_subset(256, 64, 1).unwrap();
        let b = scrambled_hadamard_subset(256, 32, 1).unwrap();
        assert!(MethodSetup::new(Method::Tval3, &a, Reconstructor::Tv { patterns: &b, config: TvConfig::for_sh() }).is_err());
        let small = scrambled_hadamard_subset(64, 16, 1).unwrap();
        let m = MethodSetup::new(Method::Tval3, &small, Reconstructor::Tv { patterns: &small, config: TvConfig::for_sh() }).unwrap();
        assert!(benchmark(&imgs(1, 16), &[m], &BenchConfig::default()).is_err());
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        // Continuous patterns cannot go through TV: every item fails cleanly.
        let images = imgs(2, 16);
        let sh = scrambled_hadamard_subset(256, 32, 1).unwrap();
        let cont = PatternMatrix::new(32, 256, vec![0.5; 32 * 256], crate::imaging::PatternKind::Continuous, 0).unwrap();
        let methods = vec![
            MethodSetup::new(Method::Tval3, &sh, Reconstructor::Tv { patterns: &sh, config: TvConfig::for_sh() }).unwrap(),
            MethodSetup::new(Method::LeTval3, &cont, Reconstructor::Tv { patterns: &cont, config: TvConfig::for_learned() }).unwrap(),
        ];
        let r = benchmark(&images, &methods, &BenchConfig { repeats: 1, ..Default::default() }).unwrap();
        assert_eq!(r.failures.len(), 2);
        assert_eq!(r.row("SH-TVAL3").unwrap().count, 2);
        assert_eq!(r.row("LE-TVAL3").unwrap().count, 0);
    }

    /// Full basis, no noise: TV from a full SH basis and an identity-encoder
    /// decoder whose dense layer undoes the standardisation of each image.
    #[test]
    fn exact_fixture_reaches_40db() {
        let side = 16;
        let n = side * side;
        let images = imgs(2, side);
        let sh = scrambled_hadamard(n, 4).unwrap();
        let tv = MethodSetup::new(Method::Tval3, &sh, Reconstructor::Tv { patterns: &sh, config: TvConfig::for_sh() }).unwrap();
        let r = benchmark(&images, &[tv], &BenchConfig { sigma: 0.0, repeats: 1, ..Default::default() }).unwrap();
        assert!(r.rows[0].psnr_mean >= 40.0, "tv {}", r.rows[0].psnr_mean);

        let id = PatternMatrix::identity(n).unwrap();
        for (name, x) in &images {
            let arch = ArchitectureConfig { base_channels: 4, unet_levels: 1, ..ArchitectureConfig::new(n, side) };
            let mut t = Trainer::new(arch, TrainConfig::default(), 1).unwrap();
            t.set_encoder(EncoderState::from_pattern_matrix(&id).unwrap(), false).unwrap();
            let (mean, std) = mean_std(x.pixels());
            {
                let mut ps = t.decoder_mut().params_mut();
                let c = ps.len();
                for (i, v) in ps[0].value.data_mut().iter_mut().enumerate() {
                    *v = if i % (n + 1) == 0 { (std + crate::imaging::STD_GUARD) as f32 } else { 0.0 };
                }
                ps[1].value.data_mut().fill(mean as f32);
                ps[c - 2].value.data_mut().fill(0.0);
                ps[c - 1].value.data_mut().fill(0.0);
            }
            let ck = t.checkpoint(false);
            let led = MethodSetup::new(Method::Led, &id, Reconstructor::Learned(&ck)).unwrap();
            let r = benchmark(&[(name.clone(), x.clone())], &[led], &BenchConfig { sigma: 0.0, repeats: 1, ..Default::default() }).unwrap();
            assert!(r.rows[0].psnr_mean >= 40.0, "led {}", r.rows[0].psnr_mean);
        }
    }
}
