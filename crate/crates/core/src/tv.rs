//! Total-variation reconstruction by augmented-Lagrangian alternating
//! minimisation (TVAL3 family).
//!
//! Solves `min_x (mu/2) ||A x - y||^2 + TV(x)` by splitting `w = D x`:
//!
//! ```text
//! L(w, x, nu) = sum_i ||w_i|| - nu^T (D x - w) + (beta/2) ||D x - w||^2 + (mu/2) ||A x - y||^2
//! ```
//!
//! The inner loop takes Barzilai-Borwein gradient steps in `x` on
//! `min_w L(w, x, nu)`, with `w` shrunk in closed form at every trial point and
//! a nonmonotone (Zhang-Hager) Armijo test. The multiplier is updated once per
//! outer iteration.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::imaging::{Image, Measurement, PatternMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvConfig {
    pub mu: f64,
    pub beta: f64,
    pub isotropic: bool,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            mu: 512.0,
            beta: 16.0,
            isotropic: true,
            max_outer: 300,
            max_inner: 10,
            tol: 1e-4,
        }
    }
}

impl TvConfig {
    /// Settings used for scrambled-Hadamard measurements.
    pub fn for_sh() -> Self {
        Self::default()
    }

    /// Settings used for learned-encoder measurements.
    pub fn for_learned() -> Self {
        Self {
            mu: 128.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("beta", self.beta), ("tol", self.tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
    /// Objective (as in [`tv_objective`]) after each outer iteration.
    pub objective_history: Vec<f64>,
}

/// Forward differences with replicate boundary: the last column (row) has zero
/// horizontal (vertical) difference.
pub fn gradient(x: &[f64], side: usize, dh: &mut [f64], dv: &mut [f64]) {
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            dh[i] = if c + 1 < side { x[i + 1] - x[i] } else { 0.0 };
            dv[i] = if r + 1 < side { x[i + side] - x[i] } else { 0.0 };
        }
    }
}

/// Adjoint of [`gradient`].
pub fn gradient_adjoint(ph: &[f64], pv: &[f64], side: usize, out: &mut [f64]) {
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            let mut v = 0.0;
            if c + 1 < side {
                v -= ph[i];
            }
            if c > 0 {
                v += ph[i - 1];
            }
            if r + 1 < side {
                v -= pv[i];
            }
            if r > 0 {
                v += pv[i - side];
            }
            out[i] = v;
        }
    }
}

fn tv_of(dh: &[f64], dv: &[f64], isotropic: bool) -> f64 {
    dh.iter()
        .zip(dv)
        .map(|(a, b)| if isotropic { a.hypot(*b) } else { a.abs() + b.abs() })
        .sum()
}

/// Total variation of a square image.
pub fn total_variation(x: &Image, isotropic: bool) -> f64 {
    let n = x.len();
    let (mut dh, mut dv) = (vec![0.0; n], vec![0.0; n]);
    gradient(x.pixels(), x.side(), &mut dh, &mut dv);
    tv_of(&dh, &dv, isotropic)
}

fn check_dims(a: &PatternMatrix, y: &Measurement, n: usize) -> Result<()> {
    if a.n() != n {
        return Err(Error::invalid(format!("pattern matrix has {} columns, image has {n} pixels", a.n())));
    }
    if a.m() != y.len() {
        return Err(Error::invalid(format!("pattern matrix has {} rows, measurement has {}", a.m(), y.len())));
    }
    Ok(())
}

/// `(mu/2) ||A x - y||^2 / e + TV(x)` where `e` is the mean squared row norm
/// of `A`, matching [`tval3_reconstruct`].
pub fn tv_objective(x: &Image, a: &PatternMatrix, y: &Measurement, mu: f64, isotropic: bool) -> Result<f64> {
    check_dims(a, y, x.len())?;
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be non-negative, got {mu}")));
    }
    Ok(objective_raw(x.pixels(), x.side(), a, &y.values, effective_mu(mu, a), isotropic))
}

fn objective_raw(x: &[f64], side: usize, a: &PatternMatrix, y: &[f64], mu: f64, isotropic: bool) -> f64 {
    let mut ax = vec![0.0; a.m()];
    a.apply(x, &mut ax);
    let fid: f64 = ax.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
    let n = x.len();
    let (mut dh, mut dv) = (vec![0.0; n], vec![0.0; n]);
    gradient(x, side, &mut dh, &mut dv);
    0.5 * mu * fid + tv_of(&dh, &dv, isotropic)
}

/// Isotropic shrinkage of a 2-vector: `v * max(||v|| - t, 0) / ||v||`.
pub fn shrink2(v: (f64, f64), t: f64) -> (f64, f64) {
    let norm = v.0.hypot(v.1);
    if norm == 0.0 {
        return (0.0, 0.0);
    }
    let s = (norm - t).max(0.0) / norm;
    (v.0 * s, v.1 * s)
}

/// Scalar soft threshold `sign(v) max(|v| - t, 0)`.
pub fn shrink1(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Smooth part of the augmented Lagrangian as a function of `x` for fixed `w`, `nu`:
/// `(mu/2)||Ax - y||^2 + (beta/2)||Dx - w - nu/beta||^2`.
pub struct AugmentedQuadratic<'a> {
    pub a: &'a PatternMatrix,
    pub y: &'a [f64],
    pub side: usize,
    pub mu: f64,
    pub beta: f64,
    pub wh: &'a [f64],
    pub wv: &'a [f64],
    pub nuh: &'a [f64],
    pub nuv: &'a [f64],
}

impl AugmentedQuadratic<'_> {
    pub fn value(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut ax = vec![0.0; self.a.m()];
        self.a.apply(x, &mut ax);
        let (mut dh, mut dv) = (vec![0.0; n], vec![0.0; n]);
        gradient(x, self.side, &mut dh, &mut dv);
        self.value_from(&ax, &dh, &dv)
    }

    fn value_from(&self, ax: &[f64], dh: &[f64], dv: &[f64]) -> f64 {
        let fid: f64 = ax.iter().zip(self.y).map(|(p, q)| (p - q) * (p - q)).sum();
        let mut split = 0.0;
        for i in 0..dh.len() {
            let rh = dh[i] - self.wh[i] - self.nuh[i] / self.beta;
            let rv = dv[i] - self.wv[i] - self.nuv[i] / self.beta;
            split += rh * rh + rv * rv;
        }
        0.5 * self.mu * fid + 0.5 * self.beta * split
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut ax = vec![0.0; self.a.m()];
        self.a.apply(x, &mut ax);
        let (mut dh, mut dv) = (vec![0.0; n], vec![0.0; n]);
        gradient(x, self.side, &mut dh, &mut dv);
        let mut g = vec![0.0; n];
        self.gradient_from(&ax, &dh, &dv, &mut g);
        g
    }

    fn gradient_from(&self, ax: &[f64], dh: &[f64], dv: &[f64], g: &mut [f64]) {
        let n = dh.len();
        let r: Vec<f64> = ax.iter().zip(self.y).map(|(p, q)| self.mu * (p - q)).collect();
        self.a.apply_transpose(&r, g);
        let mut ph = vec![0.0; n];
        let mut pv = vec![0.0; n];
        for i in 0..n {
            ph[i] = self.beta * (dh[i] - self.wh[i]) - self.nuh[i];
            pv[i] = self.beta * (dv[i] - self.wv[i]) - self.nuv[i];
        }
        let mut dt = vec![0.0; n];
        gradient_adjoint(&ph, &pv, self.side, &mut dt);
        for (gi, d) in g.iter_mut().zip(&dt) {
            *gi += d;
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn ensure_finite(values: &[f64], iteration: usize, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(iteration, format!("non-finite {what}")))
    }
}

/// Matched-filter start `A^T y`, min-max rescaled to `[0, 1]`.
fn initial_guess(a: &PatternMatrix, y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; a.n()];
    a.apply_transpose(y, &mut x);
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        x.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        x.iter_mut().for_each(|v| *v = 0.0);
    }
    x
}

const ARMIJO_DELTA: f64 = 1e-5;
const NONMONOTONE_ETA: f64 = 0.85;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 40;

/// Working state of one solve. `ax`, `dh`, `dv` track `A x` and `D x` and are
/// moved along the search direction without extra operator products.
struct State<'a> {
    a: &'a PatternMatrix,
    y: &'a [f64],
    side: usize,
    mu: f64,
    beta: f64,
    isotropic: bool,
    nuh: Vec<f64>,
    nuv: Vec<f64>,
    wh: Vec<f64>,
    wv: Vec<f64>,
}

impl State<'_> {
    /// Minimises over `w` in closed form for the given `D x`, returning the
    /// value of the augmented Lagrangian (up to a constant in `nu`).
    fn shrink_and_value(&mut self, ax: &[f64], dh: &[f64], dv: &[f64]) -> f64 {
        let beta = self.beta;
        let t = 1.0 / beta;
        let mut reg = 0.0;
        for i in 0..dh.len() {
            let vh = dh[i] - self.nuh[i] / beta;
            let vv = dv[i] - self.nuv[i] / beta;
            let (a0, a1) = if self.isotropic {
                shrink2((vh, vv), t)
            } else {
                (shrink1(vh, t), shrink1(vv, t))
            };
            self.wh[i] = a0;
            self.wv[i] = a1;
            let wn = if self.isotropic { a0.hypot(a1) } else { a0.abs() + a1.abs() };
            let (rh, rv) = (vh - a0, vv - a1);
            reg += wn + 0.5 * beta * (rh * rh + rv * rv);
        }
        reg + 0.5 * self.mu * sq_dist(ax, self.y)
    }

    fn gradient(&self, ax: &[f64], dh: &[f64], dv: &[f64], g: &mut [f64]) {
        AugmentedQuadratic {
            a: self.a,
            y: self.y,
            side: self.side,
            mu: self.mu,
            beta: self.beta,
            wh: &self.wh,
            wv: &self.wv,
            nuh: &self.nuh,
            nuv: &self.nuv,
        }
        .gradient_from(ax, dh, dv, g);
    }
}

/// Reconstructs an image from raw (un-standardised) measurements.
///
/// The fidelity weight applies to `A` and `y` rescaled so the rows of `A` have
/// unit mean energy; a given `mu` then behaves the same at every resolution
/// and for both 0/1 Hadamard and learned patterns.
pub fn tval3_reconstruct(a: &PatternMatrix, y: &Measurement, cfg: &TvConfig) -> Result<(Image, SolveReport)> {
    cfg.validate()?;
    let n = a.n();
    let side = a.side();
    check_dims(a, y, n)?;
    if a.m() > n {
        return Err(Error::invalid("TV reconstruction expects m <= n"));
    }
    if !a.kind().is_binary() {
        return Err(Error::invalid("TV reconstruction expects a binary pattern matrix"));
    }
    ensure_finite(&y.values, 0, "measurement")?;
    let start = Instant::now();
    let yv = &y.values;
    let m = a.m();
    let mu = effective_mu(cfg.mu, a);

    let mut st = State {
        a,
        y: yv,
        side,
        mu,
        beta: cfg.beta,
        isotropic: cfg.isotropic,
        nuh: vec![0.0; n],
        nuv: vec![0.0; n],
        wh: vec![0.0; n],
        wv: vec![0.0; n],
    };

    // The all-ones direction is an outlier of A^T A for 0/1 patterns but is
    // invisible to D, so it is solved exactly rather than by gradient steps.
    let mut a1 = vec![0.0; m];
    a.apply(&vec![1.0; n], &mut a1);
    let a1a1 = dot(&a1, &a1);

    let mut x = initial_guess(a, yv);
    let mut ax = vec![0.0; m];
    let (mut dh, mut dv) = (vec![0.0; n], vec![0.0; n]);
    let mut g = vec![0.0; n];
    let mut g_prev = vec![0.0; n];
    let mut x_prev = vec![0.0; n];
    let mut ag = vec![0.0; m];
    let (mut gh, mut gv) = (vec![0.0; n], vec![0.0; n]);
    let (mut th, mut tv, mut tax) = (vec![0.0; n], vec![0.0; n], vec![0.0; m]);
    let mut have_prev = false;

    let mut history = Vec::new();
    let mut total_inner = 0usize;
    let mut converged = false;
    let mut outer_done = 0;

    for outer in 0..cfg.max_outer {
        // Refresh the tracked products so rounding does not accumulate.
        a.apply(&x, &mut ax);
        gradient(&x, side, &mut dh, &mut dv);
        fit_mean(&mut x, &mut ax, &a1, a1a1, yv);
        let x_outer = x.clone();
        let mut phi = st.shrink_and_value(&ax, &dh, &dv);
        let mut c_ref = phi;
        let mut q_ref = 1.0;

        for _ in 0..cfg.max_inner {
            let iteration = total_inner;
            total_inner += 1;
            st.gradient(&ax, &dh, &dv, &mut g);
            ensure_finite(&g, iteration, "gradient")?;
            let gm = g.iter().sum::<f64>() / n as f64;
            g.iter_mut().for_each(|v| *v -= gm);
            let gg = dot(&g, &g);
            if gg == 0.0 {
                break;
            }
            a.apply(&g, &mut ag);
            gradient(&g, side, &mut gh, &mut gv);

            let mut alpha = if have_prev {
                let mut ss = 0.0;
                let mut sy = 0.0;
                for i in 0..n {
                    let s = x[i] - x_prev[i];
                    ss += s * s;
                    sy += s * (g[i] - g_prev[i]);
                }
                if sy > 0.0 { ss / sy } else { 0.0 }
            } else {
                0.0
            };
            if !(alpha > 0.0 && alpha.is_finite()) {
                // Exact minimiser along -g of the quadratic with w held fixed.
                let curv = mu * dot(&ag, &ag) + st.beta * (dot(&gh, &gh) + dot(&gv, &gv));
                alpha = gg / curv;
            }

            let mut phi_try = f64::INFINITY;
            for _ in 0..MAX_BACKTRACKS {
                for i in 0..n {
                    th[i] = dh[i] - alpha * gh[i];
                    tv[i] = dv[i] - alpha * gv[i];
                }
                for (t, (p, q)) in tax.iter_mut().zip(ax.iter().zip(&ag)) {
                    *t = p - alpha * q;
                }
                phi_try = st.shrink_and_value(&tax, &th, &tv);
                if phi_try <= c_ref - ARMIJO_DELTA * alpha * gg {
                    break;
                }
                alpha *= BACKTRACK;
            }
            if !phi_try.is_finite() {
                return Err(Error::numerical(iteration, "non-finite objective in line search"));
            }

            x_prev.copy_from_slice(&x);
            g_prev.copy_from_slice(&g);
            have_prev = true;
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= alpha * gi;
            }
            std::mem::swap(&mut dh, &mut th);
            std::mem::swap(&mut dv, &mut tv);
            std::mem::swap(&mut ax, &mut tax);
            phi = phi_try;
            if fit_mean(&mut x, &mut ax, &a1, a1a1, yv) {
                phi = st.shrink_and_value(&ax, &dh, &dv);
            }

            let q_next = NONMONOTONE_ETA * q_ref + 1.0;
            c_ref = (NONMONOTONE_ETA * q_ref * c_ref + phi) / q_next;
            q_ref = q_next;

            if alpha * gg.sqrt() < cfg.tol * norm(&x_prev).max(1e-12) {
                break;
            }
        }

        // Multiplier update with w taken at the final x (already current).
        for i in 0..n {
            st.nuh[i] -= st.beta * (dh[i] - st.wh[i]);
            st.nuv[i] -= st.beta * (dv[i] - st.wv[i]);
        }
        ensure_finite(&st.nuh, total_inner, "multiplier")?;
        ensure_finite(&st.nuv, total_inner, "multiplier")?;

        history.push(0.5 * mu * sq_dist(&ax, yv) + tv_of(&dh, &dv, cfg.isotropic));
        outer_done = outer + 1;
        let diff: f64 = x.iter().zip(&x_outer).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if diff < cfg.tol * norm(&x_outer).max(1e-12) {
            converged = true;
            break;
        }
    }

    let image = Image::clamped(side, x)?;
    let final_objective = objective_raw(image.pixels(), side, a, yv, mu, cfg.isotropic);
    let wall_time = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    Ok((
        image,
        SolveReport {
            outer_iters: outer_done,
            inner_iters: total_inner,
            final_objective,
            converged,
            wall_time,
            objective_history: history,
        },
    ))
}

/// Shifts `x` by the constant minimising `||A x - y||` along the all-ones direction.
fn fit_mean(x: &mut [f64], ax: &mut [f64], a1: &[f64], a1a1: f64, y: &[f64]) -> bool {
    if a1a1 == 0.0 {
        return false;
    }
    let t = -a1.iter().zip(ax.iter().zip(y)).map(|(p, (q, r))| p * (q - r)).sum::<f64>() / a1a1;
    x.iter_mut().for_each(|v| *v += t);
    ax.iter_mut().zip(a1).for_each(|(v, p)| *v += t * p);
    true
}

/// `mu` divided by the mean squared row norm of `A`, i.e. the weight that
/// applies to `A` and `y` rescaled to unit mean row energy.
fn effective_mu(mu: f64, a: &PatternMatrix) -> f64 {
    let energy = a.entries().iter().map(|&e| f64::from(e) * f64::from(e)).sum::<f64>() / a.m() as f64;
    if energy > 0.0 {
        mu / energy
    } else {
        mu
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{forward_measure, simulate_noise, standardize, unstandardize, NoiseSpec};
    use crate::metrics::{psnr, ssim};
    use crate::patterns::scrambled_hadamard_subset;
    use crate::rng;
    use rand::Rng;

    fn rect_phantom(side: usize) -> Image {
        let mut px = vec![0.0; side * side];
        let rects = [
            (4, 4, 20, 28, 0.8),
            (30, 10, 60, 22, 0.5),
            (12, 36, 40, 58, 0.3),
            (44, 40, 58, 60, 1.0),
        ];
        for (r0, c0, r1, c1, v) in rects {
            for r in r0 * side / 64..r1 * side / 64 {
                for c in c0 * side / 64..c1 * side / 64 {
                    px[r * side + c] = v;
                }
            }
        }
        Image::new(side, px).unwrap()
    }

    fn random_phantom(side: usize, r: &mut crate::rng::Rng) -> Image {
        let mut px = vec![0.0; side * side];
        for _ in 0..4 {
            let (r0, c0) = (r.random_range(0..side - 2), r.random_range(0..side - 2));
            let (r1, c1) = (r.random_range(r0 + 1..side), r.random_range(c0 + 1..side));
            let v: f64 = r.random_range(0.1..1.0);
            for i in r0..r1 {
                for j in c0..c1 {
                    px[i * side + j] = v;
                }
            }
        }
        Image::new(side, px).unwrap()
    }

    fn loop_tv(x: &[f64], side: usize, isotropic: bool) -> f64 {
        let mut t = 0.0;
        for r in 0..side {
            for c in 0..side {
                let v = x[r * side + c];
                let h = if c + 1 < side { x[r * side + c + 1] - v } else { 0.0 };
                let d = if r + 1 < side { x[(r + 1) * side + c] - v } else { 0.0 };
                t += if isotropic { (h * h + d * d).sqrt() } else { h.abs() + d.abs() };
            }
        }
        t
    }

    #[test]
    fn constant_image_has_zero_tv() {
        let x = Image::filled(9, 0.37).unwrap();
        assert_eq!(total_variation(&x, true), 0.0);
        assert_eq!(total_variation(&x, false), 0.0);
    }

    #[test]
    fn two_by_two_hand_count() {
        let x = Image::new(2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let a = PatternMatrix::identity(4).unwrap();
        let y = Measurement::raw(x.pixels().to_vec());
        assert_eq!(tv_objective(&x, &a, &y, 512.0, false).unwrap(), 2.0);
    }

    #[test]
    fn tv_matches_loop_oracle() {
        let mut r = rng::seeded(1, 0);
        for side in [1, 2, 5, 12] {
            let x = Image::new(side, (0..side * side).map(|_| r.random::<f64>()).collect()).unwrap();
            for iso in [true, false] {
                let want = loop_tv(x.pixels(), side, iso);
                assert!((total_variation(&x, iso) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_adjoint_identity() {
        let mut r = rng::seeded(2, 0);
        let side = 7;
        let n = side * side;
        let x: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let ph: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let pv: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let (mut dh, mut dv) = (vec![0.0; n], vec![0.0; n]);
        gradient(&x, side, &mut dh, &mut dv);
        let mut dt = vec![0.0; n];
        gradient_adjoint(&ph, &pv, side, &mut dt);
        let lhs = dot(&dh, &ph) + dot(&dv, &pv);
        assert!((lhs - dot(&x, &dt)).abs() < 1e-12);
    }

    #[test]
    fn shrink_examples() {
        let (a, b) = shrink2((3.0, 4.0), 1.0);
        assert!((a - 2.4).abs() < 1e-12 && (b - 3.2).abs() < 1e-12);
        assert_eq!(shrink2((0.0, 0.0), 1.0), (0.0, 0.0));
        assert_eq!(shrink1(0.5, 1.0), 0.0);
        assert_eq!(shrink1(-2.5, 1.0), -1.5);
    }

    #[test]
    fn shrink_matches_grid_search() {
        let mut r = rng::seeded(3, 0);
        for _ in 0..20 {
            let v = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            let t = r.random_range(0.05..1.5);
            let obj2 = |w: (f64, f64)| t * w.0.hypot(w.1) + 0.5 * ((w.0 - v.0).powi(2) + (w.1 - v.1).powi(2));
            let obj1 = |w: (f64, f64)| t * (w.0.abs() + w.1.abs()) + 0.5 * ((w.0 - v.0).powi(2) + (w.1 - v.1).powi(2));
            let (mut best2, mut best1) = ((0.0, 0.0), (0.0, 0.0));
            let steps = 800;
            for i in 0..=steps {
                for j in 0..=steps {
                    let w = (-2.0 + 4.0 * i as f64 / steps as f64, -2.0 + 4.0 * j as f64 / steps as f64);
                    if obj2(w) < obj2(best2) {
                        best2 = w;
                    }
                    if obj1(w) < obj1(best1) {
                        best1 = w;
                    }
                }
            }
            let s2 = shrink2(v, t);
            let s1 = (shrink1(v.0, t), shrink1(v.1, t));
            assert!((s2.0 - best2.0).abs() < 1e-2 && (s2.1 - best2.1).abs() < 1e-2);
            assert!((s1.0 - best1.0).abs() < 1e-2 && (s1.1 - best1.1).abs() < 1e-2);
            // The closed form is at least as good as the best grid point.
            assert!(obj2(s2) <= obj2(best2) + 1e-3);
            assert!(obj1(s1) <= obj1(best1) + 1e-3);
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut r = rng::seeded(4, 0);
        let side = 8;
        let n = side * side;
        let a = scrambled_hadamard_subset(n, 20, 5).unwrap();
        let rand_vec = |r: &mut crate::rng::Rng, k: usize| (0..k).map(|_| r.random::<f64>() - 0.5).collect::<Vec<_>>();
        let (y, wh, wv, nuh, nuv) = (rand_vec(&mut r, 20), rand_vec(&mut r, n), rand_vec(&mut r, n), rand_vec(&mut r, n), rand_vec(&mut r, n));
        let q = AugmentedQuadratic {
            a: &a,
            y: &y,
            side,
            mu: 3.0,
            beta: 16.0,
            wh: &wh,
            wv: &wv,
            nuh: &nuh,
            nuv: &nuv,
        };
        let x = rand_vec(&mut r, n);
        let g = q.gradient(&x);
        let h = 1e-5;
        for i in 0..n {
            let mut xp = x.clone();
            xp[i] += h;
            let up = q.value(&xp);
            xp[i] -= 2.0 * h;
            let fd = (up - q.value(&xp)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn identity_operator_recovers_image() {
        let mut r = rng::seeded(5, 0);
        let x = random_phantom(16, &mut r);
        let a = PatternMatrix::identity(256).unwrap();
        let y = Measurement::raw(x.pixels().to_vec());
        let (xhat, _) = tval3_reconstruct(&a, &y, &TvConfig::default()).unwrap();
        assert!(psnr(&x, &xhat).unwrap() >= 40.0);
    }

    #[test]
    fn phantom_half_sampling() {
        let x = rect_phantom(64);
        let a = scrambled_hadamard_subset(4096, 2048, 7).unwrap();
        let y = forward_measure(&a, &x).unwrap();
        let (xhat, rep) = tval3_reconstruct(&a, &y, &TvConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(psnr(&x, &xhat).unwrap() >= 30.0);
        // Running to a tight tolerance does not lose quality.
        let tight = TvConfig { tol: 1e-6, ..TvConfig::default() };
        let (xt, _) = tval3_reconstruct(&a, &y, &tight).unwrap();
        assert!(psnr(&x, &xt).unwrap() >= 30.0);
    }

    #[test]
    fn noisy_low_sampling_beats_back_projection() {
        let x = rect_phantom(64);
        let a = scrambled_hadamard_subset(4096, 409, 7).unwrap();
        let ys = standardize(&forward_measure(&a, &x).unwrap()).unwrap();
        let noisy = unstandardize(&simulate_noise(&ys, &NoiseSpec::gaussian(0.25, 9).unwrap()).unwrap());
        let (xhat, _) = tval3_reconstruct(&a, &noisy, &TvConfig::default()).unwrap();
        let bp = Image::new(64, initial_guess(&a, &noisy.values)).unwrap();
        assert!(ssim(&x, &xhat).unwrap() > ssim(&x, &bp).unwrap());
    }

    #[test]
    fn objective_mostly_non_increasing() {
        let mut r = rng::seeded(6, 0);
        let (mut ups, mut steps) = (0, 0);
        for trial in 0..8 {
            let side = [16, 32][trial % 2];
            let n = side * side;
            let x = random_phantom(side, &mut r);
            let m = r.random_range(n / 10..n);
            let a = scrambled_hadamard_subset(n, m, trial as u64 + 1).unwrap();
            let ys = standardize(&forward_measure(&a, &x).unwrap()).unwrap();
            let sigma = [0.0, 0.25][trial % 2];
            let y = unstandardize(&simulate_noise(&ys, &NoiseSpec::gaussian(sigma, trial as u64).unwrap()).unwrap());
            let (_, rep) = tval3_reconstruct(&a, &y, &TvConfig::default()).unwrap();
            let h = &rep.objective_history;
            ups += h.windows(2).filter(|w| w[1] > w[0]).count();
            steps += h.len() - 1;
        }
        assert!(steps > 0);
        assert!(ups as f64 <= 0.05 * steps as f64, "{ups} increases in {steps} steps");
    }

    #[test]
    fn large_mu_full_basis_is_exact() {
        let mut r = rng::seeded(7, 0);
        let x = random_phantom(16, &mut r);
        let a = scrambled_hadamard_subset(256, 256, 3).unwrap();
        let y = forward_measure(&a, &x).unwrap();
        let cfg = TvConfig { mu: 32768.0, tol: 1e-6, max_outer: 2000, ..TvConfig::default() };
        let (xhat, _) = tval3_reconstruct(&a, &y, &cfg).unwrap();
        let err = x.pixels().iter().zip(xhat.pixels()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-2, "max error {err}");
    }

    #[test]
    fn rejects_bad_input() {
        let a = scrambled_hadamard_subset(16, 8, 1).unwrap();
        let y = Measurement::raw(vec![0.0; 7]);
        assert!(tval3_reconstruct(&a, &y, &TvConfig::default()).is_err());
        let y = Measurement::raw(vec![f64::NAN; 8]);
        assert!(matches!(tval3_reconstruct(&a, &y, &TvConfig::default()), Err(Error::Numerical { .. })));
        let bad = TvConfig { beta: 0.0, ..TvConfig::default() };
        assert!(tval3_reconstruct(&a, &Measurement::raw(vec![0.0; 8]), &bad).is_err());
    }

    #[test]
    fn config_presets() {
        assert_eq!(TvConfig::for_sh().mu, 512.0);
        assert_eq!(TvConfig::for_learned().mu, 128.0);
        assert_eq!(TvConfig::default().beta, 16.0);
    }
}
