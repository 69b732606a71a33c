use super::{matmul, Scalar, Tensor};
use crate::error::{Error, Result};

/// Saved state of a convolution forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
    /// `[C*k*k, Ho*Wo]`; empty for the 1x1 / stride 1 / no-padding fast path.
    cols: Vec<T>,
}

fn conv_dims(h: usize, w: usize, k: usize, stride: usize, padding: usize) -> Result<(usize, usize)> {
    if k % 2 == 0 || !(1..=2).contains(&stride) {
        return Err(Error::invalid(format!("kernel must be odd and stride 1 or 2, got k={k} s={stride}")));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::invalid("convolution kernel larger than padded input"));
    }
    Ok(((h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1))
}

fn is_pointwise(k: usize, stride: usize, padding: usize) -> bool {
    k == 1 && stride == 1 && padding == 0
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, ho: usize, wo: usize) -> Vec<T> {
    let hw = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * hw];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ch * k + ki) * k + kj) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let (lo, hi) = unit_stride_span(kj, p, w, wo);
                        if lo < hi {
                            let off = lo + kj - p;
                            dst[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        }
                        continue;
                    }
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Output columns `lo..hi` whose input column `ox + kj - p` is in range.
fn unit_stride_span(kj: usize, p: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = p.saturating_sub(kj);
    let hi = (w + p).saturating_sub(kj).min(wo);
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, ho: usize, wo: usize) -> Vec<T> {
    let hw = ho * wo;
    let mut x = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ch * k + ki) * k + kj) * hw..][..hw];
                for oy in 0..ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &row[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let (lo, hi) = unit_stride_span(kj, p, w, wo);
                        if lo < hi {
                            let off = lo + kj - p;
                            for (d, v) in dst[off..off + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += *v;
                            }
                        }
                        continue;
                    }
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation with zero padding. `x: [C, H, W]`, `weight: [O, C, k, k]`,
/// `bias: [O]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    let (c, h, w) = x.chw()?;
    let (o, k) = match weight.shape()[..] {
        [o, wc, k1, k2] if wc == c && k1 == k2 => (o, k1),
        _ => {
            return Err(Error::invalid(format!(
                "conv weight {:?} does not fit input {:?}",
                weight.shape(),
                x.shape()
            )))
        }
    };
    if bias.shape() != [o] {
        return Err(Error::invalid(format!("conv bias must be [{o}], got {:?}", bias.shape())));
    }
    let (ho, wo) = conv_dims(h, w, k, stride, padding)?;
    let hw = ho * wo;
    let ckk = c * k * k;
    let cols = if is_pointwise(k, stride, padding) {
        Vec::new()
    } else {
        im2col(x.data(), c, h, w, k, stride, padding, ho, wo)
    };
    let mut out = vec![T::zero(); o * hw];
    for (oc, row) in out.chunks_mut(hw).enumerate() {
        row.fill(bias.data()[oc]);
    }
    let b = if cols.is_empty() { x.data() } else { &cols };
    matmul(o, ckk, hw, weight.data(), false, b, false, &mut out, true);
    let cache = ConvCache {
        in_shape: (c, h, w),
        out_hw: (ho, wo),
        kernel: k,
        stride,
        padding,
        cols,
    };
    Ok((Tensor::new(vec![o, ho, wo], out)?, cache))
}

/// Backward of [`conv2d_forward`]. Accumulates into `grad_weight` and
/// `grad_bias` and returns the gradient with respect to the input. `x` must be
/// the forward input (used only on the pointwise fast path).
pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Result<Tensor<T>> {
    let (c, h, w) = cache.in_shape;
    let (ho, wo) = cache.out_hw;
    let k = cache.kernel;
    let o = weight.shape()[0];
    let hw = ho * wo;
    let ckk = c * k * k;
    if grad_out.shape() != [o, ho, wo] || grad_weight.len() != o * ckk || grad_bias.len() != o {
        return Err(Error::invalid("conv backward shapes do not match the forward pass"));
    }
    let g = grad_out.data();
    for (oc, row) in g.chunks(hw).enumerate() {
        let mut s = T::zero();
        for &v in row {
            s += v;
        }
        grad_bias[oc] += s;
    }
    let pointwise = cache.cols.is_empty();
    if pointwise && x.shape() != [c, h, w] {
        return Err(Error::invalid("conv backward needs the forward input"));
    }
    let cols = if pointwise { x.data() } else { &cache.cols };
    matmul(o, hw, ckk, g, false, cols, true, grad_weight, true);
    let mut dcols = vec![T::zero(); ckk * hw];
    matmul(ckk, o, hw, weight.data(), true, g, false, &mut dcols, false);
    let dx = if pointwise {
        dcols
    } else {
        col2im(&dcols, c, h, w, k, cache.stride, cache.padding, ho, wo)
    };
    Tensor::new(vec![c, h, w], dx)
}

/// `y = W x + b` with `W: [out, in]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (o, i) = dense_dims(x, weight, bias)?;
    let mut y = bias.data().to_vec();
    matmul(o, i, 1, weight.data(), false, x.data(), false, &mut y, true);
    Tensor::new(vec![o], y)
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    match weight.shape()[..] {
        [o, i] if x.len() == i && bias.shape() == [o] => Ok((o, i)),
        _ => Err(Error::invalid(format!(
            "dense weight {:?} / bias {:?} do not fit input of length {}",
            weight.shape(),
            bias.shape(),
            x.len()
        ))),
    }
}

/// Backward of [`dense_forward`]; accumulates parameter gradients and returns
/// the input gradient (shaped like `x`).
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Result<Tensor<T>> {
    let (o, i) = match weight.shape()[..] {
        [o, i] => (o, i),
        _ => return Err(Error::invalid("dense weight must be 2-D")),
    };
    if grad_out.len() != o || x.len() != i || grad_weight.len() != o * i || grad_bias.len() != o {
        return Err(Error::invalid("dense backward shapes do not match the forward pass"));
    }
    let g = grad_out.data();
    for (b, &v) in grad_bias.iter_mut().zip(g) {
        *b += v;
    }
    // Outer product g x^T.
    matmul(o, 1, i, g, false, x.data(), false, grad_weight, true);
    let mut dx = vec![T::zero(); i];
    matmul(1, o, i, g, false, weight.data(), false, &mut dx, false);
    Tensor::new(x.shape().to_vec(), dx)
}

pub fn avg_pool2x_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("average pooling needs even sides, got {h}x{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::cast_from(0.25);
    let d = x.data();
    let mut out = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for r in 0..h2 {
            for col in 0..w2 {
                let base = ch * h * w + 2 * r * w + 2 * col;
                out[(ch * h2 + r) * w2 + col] = (d[base] + d[base + 1] + d[base + w] + d[base + w + 1]) * quarter;
            }
        }
    }
    Tensor::new(vec![c, h2, w2], out)
}

pub fn avg_pool2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h2, w2) = grad_out.chw()?;
    let (h, w) = (2 * h2, 2 * w2);
    let quarter = T::cast_from(0.25);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for r in 0..h2 {
            for col in 0..w2 {
                let v = g[(ch * h2 + r) * w2 + col] * quarter;
                let base = ch * h * w + 2 * r * w + 2 * col;
                dx[base] = v;
                dx[base + 1] = v;
                dx[base + w] = v;
                dx[base + w + 1] = v;
            }
        }
    }
    Tensor::new(vec![c, h, w], dx)
}

/// Nearest-neighbour x2 upsampling.
pub fn upsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let (h2, w2) = (2 * h, 2 * w);
    let d = x.data();
    let mut out = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for r in 0..h2 {
            let src = &d[(ch * h + r / 2) * w..][..w];
            let dst = &mut out[(ch * h2 + r) * w2..][..w2];
            for (col, v) in dst.iter_mut().enumerate() {
                *v = src[col / 2];
            }
        }
    }
    Tensor::new(vec![c, h2, w2], out)
}

pub fn upsample2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h2, w2) = grad_out.chw()?;
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::invalid("upsample gradient must have even sides"));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let g = grad_out.data();
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for r in 0..h2 {
            let src = &g[(ch * h2 + r) * w2..][..w2];
            let dst = &mut dx[(ch * h + r / 2) * w..][..w];
            for (col, v) in src.iter().enumerate() {
                dst[col / 2] += *v;
            }
        }
    }
    Tensor::new(vec![c, h, w], dx)
}

/// Stacks `a` and `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, h, w) = a.chw()?;
    let (cb, hb, wb) = b.chw()?;
    if (h, w) != (hb, wb) {
        return Err(Error::invalid(format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(vec![ca + cb, h, w], data)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Scalar>(g: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (c, h, w) = g.chw()?;
    if first == 0 || first >= c {
        return Err(Error::invalid(format!("cannot split {c} channels at {first}")));
    }
    let (a, b) = g.data().split_at(first * h * w);
    Ok((Tensor::new(vec![first, h, w], a.to_vec())?, Tensor::new(vec![c - first, h, w], b.to_vec())?))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `x tanh(softplus(x))`.
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

#[cfg(test)]
fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    let sigmoid = if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) };
    t + x * (1.0 - t * t) * sigmoid
}

/// Mish and its derivative from a single exponential: with `e = exp(x)` and
/// `q = e (e + 2)`, `tanh(softplus(x)) = q / (q + 2)`.
#[inline]
fn mish_fast<T: Scalar>(x: T) -> (T, T) {
    let cut = T::cast_from(20.0);
    if x > cut {
        return (x, T::one());
    }
    let two = T::cast_from(2.0);
    let e = x.exp();
    let q = e * (e + two);
    let d = q + two;
    let t = q / d;
    let dt = two * two * e * (e + T::one()) / (d * d);
    (x * t, t + x * dt)
}

pub fn mish_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| mish_fast(v).0).collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
        requires_grad: x.requires_grad,
    }
}

pub fn mish_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::invalid("mish gradient shape mismatch"));
    }
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| g * mish_fast(v).1).collect();
    Tensor::new(x.shape().to_vec(), data)
}
