//! PSNR and SSIM.
//!
//! SSIM uses the usual 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03
//! and data range 1, averaged over the valid (fully inside) windows only.

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 1.0) * (0.01 * 1.0);
pub const SSIM_C2: f64 = (0.03 * 1.0) * (0.03 * 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Seconds.
    pub wall_time: f64,
}

fn same_side(x: &Image, y: &Image) -> Result<()> {
    if x.side() != y.side() {
        return Err(Error::invalid(format!("image sides differ: {} vs {}", x.side(), y.side())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with peak 1.0; identical images give `+inf`.
pub fn psnr(x: &Image, xhat: &Image) -> Result<f64> {
    same_side(x, xhat)?;
    let mse = x
        .pixels()
        .iter()
        .zip(xhat.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub fn ssim(x: &Image, xhat: &Image) -> Result<f64> {
    same_side(x, xhat)?;
    ssim_slices(x.pixels(), xhat.pixels(), x.side())
}

pub fn quality(x: &Image, xhat: &Image, wall_time: f64) -> Result<QualityReport> {
    Ok(QualityReport {
        psnr: psnr(x, xhat)?,
        ssim: ssim(x, xhat)?,
        wall_time,
    })
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode separable filtering: `side x side` -> `o x o`, `o = side - 10`.
fn filter_valid(img: &[f64], side: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let o = side + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; side * o];
    for r in 0..side {
        let row = &img[r * side..(r + 1) * side];
        for c in 0..o {
            tmp[r * o + c] = k.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; o * o];
    for r in 0..o {
        for c in 0..o {
            out[r * o + c] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(r + i) * o + c]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `o x o` map back onto `side x side`.
fn filter_valid_adjoint(map: &[f64], side: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let o = side + 1 - SSIM_WINDOW;
    let mut tmp = vec![0.0; side * o];
    for r in 0..o {
        for c in 0..o {
            let v = map[r * o + c];
            for (i, ki) in k.iter().enumerate() {
                tmp[(r + i) * o + c] += ki * v;
            }
        }
    }
    let mut out = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..o {
            let v = tmp[r * o + c];
            for (i, ki) in k.iter().enumerate() {
                out[r * side + c + i] += ki * v;
            }
        }
    }
    out
}

struct Moments {
    mx: Vec<f64>,
    my: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    cxy: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], side: usize, k: &[f64; SSIM_WINDOW]) -> Moments {
    let mx = filter_valid(x, side, k);
    let my = filter_valid(y, side, k);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let xx = filter_valid(&sq(x, x), side, k);
    let yy = filter_valid(&sq(y, y), side, k);
    let xy = filter_valid(&sq(x, y), side, k);
    let vx = xx.iter().zip(&mx).map(|(e, m)| e - m * m).collect();
    let vy = yy.iter().zip(&my).map(|(e, m)| e - m * m).collect();
    let cxy = xy.iter().zip(mx.iter().zip(&my)).map(|(e, (a, b))| e - a * b).collect();
    Moments { mx, my, vx, vy, cxy }
}

fn check_slices(x: &[f64], y: &[f64], side: usize) -> Result<()> {
    if side < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs side >= {SSIM_WINDOW}, got {side}")));
    }
    if x.len() != side * side || y.len() != side * side {
        return Err(Error::invalid("SSIM inputs do not match the stated side"));
    }
    Ok(())
}

/// SSIM of two row-major square images given as raw slices (values need not
/// lie in `[0, 1]`).
pub fn ssim_slices(x: &[f64], y: &[f64], side: usize) -> Result<f64> {
    check_slices(x, y, side)?;
    let k = gaussian_taps();
    let m = moments(x, y, side, &k);
    let total: f64 = (0..m.mx.len())
        .map(|i| {
            let (a, b) = (m.mx[i], m.my[i]);
            ((2.0 * a * b + SSIM_C1) * (2.0 * m.cxy[i] + SSIM_C2))
                / ((a * a + b * b + SSIM_C1) * (m.vx[i] + m.vy[i] + SSIM_C2))
        })
        .sum();
    Ok(total / m.mx.len() as f64)
}

/// SSIM and its gradient with respect to the second argument.
pub fn ssim_with_grad(x: &[f64], y: &[f64], side: usize) -> Result<(f64, Vec<f64>)> {
    check_slices(x, y, side)?;
    let k = gaussian_taps();
    let m = moments(x, y, side, &k);
    let count = m.mx.len();
    let (mut c0, mut c1, mut c2) = (vec![0.0; count], vec![0.0; count], vec![0.0; count]);
    let mut total = 0.0;
    for i in 0..count {
        let (ux, uy) = (m.mx[i], m.my[i]);
        let a1 = 2.0 * ux * uy + SSIM_C1;
        let a2 = 2.0 * m.cxy[i] + SSIM_C2;
        let b1 = ux * ux + uy * uy + SSIM_C1;
        let b2 = m.vx[i] + m.vy[i] + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        // dS/dy_k = 2 g_k (c0 + c1 x_k - c2 y_k), summed over windows.
        c0[i] = (ux * a2 - ux * a1) / (b1 * b2) - uy * s / b1 + uy * s / b2;
        c1[i] = a1 / (b1 * b2);
        c2[i] = s / b2;
    }
    let scale = 2.0 / count as f64;
    let t0 = filter_valid_adjoint(&c0, side, &k);
    let t1 = filter_valid_adjoint(&c1, side, &k);
    let t2 = filter_valid_adjoint(&c2, side, &k);
    let grad = (0..side * side)
        .map(|p| scale * (t0[p] + x[p] * t1[p] - y[p] * t2[p]))
        .collect();
    Ok((total / count as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_image(side: usize, seed: u64) -> Image {
        let mut r = rng::seeded(seed, 0);
        Image::new(side, (0..side * side).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let x = random_image(8, 1);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_error() {
        let x = Image::filled(16, 0.3).unwrap();
        let y = Image::filled(16, 0.4).unwrap();
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_loop() {
        let (x, y) = (random_image(13, 2), random_image(13, 3));
        let mut acc = 0.0;
        for r in 0..13 {
            for c in 0..13 {
                let d = x.get(r, c) - y.get(r, c);
                acc += d * d;
            }
        }
        let want = 10.0 * (1.0 / (acc / 169.0)).log10();
        assert!((psnr(&x, &y).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_mismatch() {
        assert!(psnr(&random_image(4, 1), &random_image(5, 1)).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let x = random_image(24, 4);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images() {
        let x = Image::filled(16, 0.5).unwrap();
        let y = Image::filled(16, 1.0).unwrap();
        let want = (2.0 * 0.5 * 1.0 + SSIM_C1) / (0.25 + 1.0 + SSIM_C1);
        assert!((ssim(&x, &y).unwrap() - want).abs() < 1e-9);
        assert!((want - 0.8000).abs() < 1e-4);
    }

    #[test]
    fn ssim_requires_side_eleven() {
        assert!(ssim(&random_image(10, 1), &random_image(10, 2)).is_err());
        assert!(ssim(&random_image(11, 1), &random_image(11, 2)).is_ok());
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        // Brute-force over every window with the explicit 2-D kernel.
        let side = 15;
        let (x, y) = (random_image(side, 5), random_image(side, 6));
        let mut w = [[0.0; 11]; 11];
        let mut tot = 0.0;
        for (i, row) in w.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                tot += *v;
            }
        }
        let mut acc = 0.0;
        for r in 0..=side - 11 {
            for c in 0..=side - 11 {
                let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = w[i][j] / tot;
                        let (a, b) = (x.get(r + i, c + j), y.get(r + i, c + j));
                        ux += g * a;
                        uy += g * b;
                        xx += g * a * a;
                        yy += g * b * b;
                        xy += g * a * b;
                    }
                }
                let (vx, vy, cxy) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
                acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
        let want = acc / 25.0;
        assert!((ssim(&x, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        for s in 0..5 {
            let (x, y) = (random_image(20, 10 + s), random_image(20, 20 + s));
            assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_decreases_with_noise() {
        let x = random_image(32, 7);
        let mut r = rng::seeded(8, 0);
        let mut prev = f64::INFINITY;
        for sigma in [0.01, 0.05, 0.1, 0.2] {
            let noise = Normal::new(0.0, sigma).unwrap();
            let mean: f64 = (0..20)
                .map(|_| {
                    let px: Vec<f64> = x.pixels().iter().map(|v| v + noise.sample(&mut r)).collect();
                    ssim_slices(x.pixels(), &px, 32).unwrap()
                })
                .sum::<f64>()
                / 20.0;
            assert!(mean < prev, "sigma {sigma}: {mean} !< {prev}");
            prev = mean;
        }
    }

    #[test]
    fn blurred_copy_beats_noise_matched_image() {
        let side = 32;
        // Smooth structure so a mild blur keeps it recognisable.
        let px: Vec<f64> = (0..side * side)
            .map(|i| {
                let (r, c) = ((i / side) as f64, (i % side) as f64);
                0.5 + 0.4 * ((r / 5.0).sin() * (c / 7.0).cos())
            })
            .collect();
        let x = Image::new(side, px).unwrap();
        let mut blur = x.pixels().to_vec();
        for r in 1..side - 1 {
            for c in 1..side - 1 {
                let mut s = 0.0;
                for dr in 0..3 {
                    for dc in 0..3 {
                        s += x.get(r + dr - 1, c + dc - 1);
                    }
                }
                blur[r * side + c] = s / 9.0;
            }
        }
        let blurred = Image::new(side, blur).unwrap();
        // Random image with the same mean and variance as x.
        let (mean, std) = crate::imaging::mean_std(x.pixels());
        let mut r = rng::seeded(9, 0);
        let noise = Normal::new(mean, std).unwrap();
        let random = Image::clamped(side, (0..side * side).map(|_| noise.sample(&mut r)).collect()).unwrap();
        assert!(ssim(&x, &blurred).unwrap() > ssim(&x, &random).unwrap());
        assert!(psnr(&x, &blurred).unwrap() > psnr(&x, &random).unwrap());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let side = 13;
        let x = random_image(side, 11);
        let y = random_image(side, 12);
        let (s, g) = ssim_with_grad(x.pixels(), y.pixels(), side).unwrap();
        assert!((s - ssim(&x, &y).unwrap()).abs() < 1e-12);
        let h = 1e-6;
        for p in [0, 7, 40, 84, 168] {
            let mut yp = y.pixels().to_vec();
            yp[p] += h;
            let up = ssim_slices(x.pixels(), &yp, side).unwrap();
            yp[p] -= 2.0 * h;
            let dn = ssim_slices(x.pixels(), &yp, side).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[p]).abs() <= 1e-6 * fd.abs().max(1e-3), "pixel {p}: {fd} vs {}", g[p]);
        }
    }
}
