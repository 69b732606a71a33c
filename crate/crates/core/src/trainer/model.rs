//! Linear layer + U-Net decoder.

use rand::Rng;

use super::ArchitectureConfig;
use crate::error::{Error, Result};
use crate::neural::{
    avg_pool2x_backward, avg_pool2x_forward, concat_channels, mish_backward, mish_forward, split_channels,
    upsample2x_backward, upsample2x_forward, Conv2dLayer, ConvCache, DenseLayer, DownsampleMode, LayerSpec, Param,
    Scalar, Tensor,
};

/// Two "same" convolutions, each followed by Mish.
#[derive(Debug, Clone, PartialEq)]
struct DoubleConv<T> {
    a: Conv2dLayer<T>,
    b: Conv2dLayer<T>,
}

struct ConvActTrace<T> {
    input: Tensor<T>,
    cache: ConvCache<T>,
    pre: Tensor<T>,
}

fn conv_act<T: Scalar>(layer: &Conv2dLayer<T>, input: Tensor<T>) -> Result<(Tensor<T>, ConvActTrace<T>)> {
    let (pre, cache) = layer.forward(&input)?;
    let out = mish_forward(&pre);
    Ok((out, ConvActTrace { input, cache, pre }))
}

fn conv_act_backward<T: Scalar>(layer: &mut Conv2dLayer<T>, t: &ConvActTrace<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let gpre = mish_backward(&t.pre, g)?;
    layer.backward(&t.cache, &t.input, &gpre)
}

impl<T: Scalar> DoubleConv<T> {
    fn new<R: Rng>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            a: Conv2dLayer::same(cin, cout, k, rng)?,
            b: Conv2dLayer::same(cout, cout, k, rng)?,
        })
    }

    fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, [ConvActTrace<T>; 2])> {
        let (h, ta) = conv_act(&self.a, x)?;
        let (y, tb) = conv_act(&self.b, h)?;
        Ok((y, [ta, tb]))
    }

    fn backward(&mut self, t: &[ConvActTrace<T>; 2], g: &Tensor<T>) -> Result<Tensor<T>> {
        let gh = conv_act_backward(&mut self.b, &t[1], g)?;
        conv_act_backward(&mut self.a, &t[0], &gh)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let [w1, b1] = self.a.params_mut();
        let [w2, b2] = self.b.params_mut();
        vec![w1, b1, w2, b2]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct UpBlock<T> {
    /// Applied after nearest-neighbour upsampling.
    up: Conv2dLayer<T>,
    fuse: DoubleConv<T>,
}

/// The decoder `D_theta`: dense `m -> n`, reshape to `1 x side x side`, U-Net,
/// 1x1 output head; optionally adds the dense image to the head output.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    arch: ArchitectureConfig,
    dense: DenseLayer<T>,
    enc: Vec<DoubleConv<T>>,
    /// Only for [`DownsampleMode::StrideConv`]; one per level below the top.
    down: Vec<Conv2dLayer<T>>,
    dec: Vec<UpBlock<T>>,
    head: Conv2dLayer<T>,
}

enum DownTrace<T> {
    Pool,
    Conv(ConvActTrace<T>),
}

struct UpTrace<T> {
    up: ConvActTrace<T>,
    skip_channels: usize,
    fuse: [ConvActTrace<T>; 2],
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace<T> {
    input: Tensor<T>,
    enc: Vec<[ConvActTrace<T>; 2]>,
    down: Vec<DownTrace<T>>,
    dec: Vec<UpTrace<T>>,
    head_input: Tensor<T>,
    head: ConvCache<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new<R: Rng>(arch: &ArchitectureConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let n = arch.n();
        let k = arch.kernel;
        let levels = arch.unet_levels;
        let ch = |i: usize| arch.base_channels << i;
        let dense = DenseLayer::new(LayerSpec::Dense { input: arch.m, output: n }, rng)?;
        let mut enc = Vec::with_capacity(levels + 1);
        let mut down = Vec::new();
        for i in 0..=levels {
            if i > 0 && arch.downsample == DownsampleMode::StrideConv {
                let spec = LayerSpec::Conv2d { in_ch: ch(i - 1), out_ch: ch(i - 1), kernel: 3, stride: 2, padding: 1 };
                down.push(Conv2dLayer::new(spec, rng)?);
            }
            let cin = if i == 0 { 1 } else { ch(i - 1) };
            enc.push(DoubleConv::new(cin, ch(i), k, rng)?);
        }
        let mut dec = Vec::with_capacity(levels);
        for i in (0..levels).rev() {
            dec.push(UpBlock {
                up: Conv2dLayer::same(ch(i + 1), ch(i), 3, rng)?,
                fuse: DoubleConv::new(2 * ch(i), ch(i), k, rng)?,
            });
        }
        let head = Conv2dLayer::same(ch(0), 1, 1, rng)?;
        Ok(Self { arch: *arch, dense, enc, down, dec, head })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    /// Decodes a (standardised) measurement vector into a `side x side` image.
    pub fn forward(&self, y: &[T]) -> Result<(Vec<T>, Trace<T>)> {
        if y.len() != self.arch.m {
            return Err(Error::invalid(format!("decoder expects {} measurements, got {}", self.arch.m, y.len())));
        }
        let side = self.arch.side;
        let input = Tensor::new(vec![self.arch.m], y.to_vec())?;
        let lin = self.dense.forward(&input)?.reshape(vec![1, side, side])?;
        let residual = self.arch.residual.then(|| lin.data().to_vec());

        let mut skips = Vec::with_capacity(self.enc.len());
        let mut enc_t = Vec::with_capacity(self.enc.len());
        let mut down_t = Vec::new();
        let mut x = lin;
        for (i, block) in self.enc.iter().enumerate() {
            if i > 0 {
                let prev: &Tensor<T> = skips.last().expect("level above exists");
                x = match self.arch.downsample {
                    DownsampleMode::AvgPool => {
                        down_t.push(DownTrace::Pool);
                        avg_pool2x_forward(prev)?
                    }
                    DownsampleMode::StrideConv => {
                        let (d, t) = conv_act(&self.down[i - 1], prev.clone())?;
                        down_t.push(DownTrace::Conv(t));
                        d
                    }
                };
            }
            let (out, t) = block.forward(x)?;
            enc_t.push(t);
            skips.push(out.clone());
            x = out;
        }
        skips.pop();

        let mut dec_t = Vec::with_capacity(self.dec.len());
        for block in &self.dec {
            let skip = skips.pop().expect("one skip per decoder level");
            let up_input = upsample2x_forward(&x)?;
            let (u, up_t) = conv_act(&block.up, up_input)?;
            let cat = concat_channels(&u, &skip)?;
            let (out, fuse_t) = block.fuse.forward(cat)?;
            dec_t.push(UpTrace {
                up: up_t,
                skip_channels: skip.shape()[0],
                fuse: fuse_t,
            });
            x = out;
        }
        let (out, head_cache) = self.head.forward(&x)?;
        let mut img = out.into_data();
        if let Some(r) = residual {
            for (o, v) in img.iter_mut().zip(r) {
                *o += v;
            }
        }
        Ok((
            img,
            Trace {
                input,
                enc: enc_t,
                down: down_t,
                dec: dec_t,
                head_input: x,
                head: head_cache,
            },
        ))
    }

    pub fn infer(&self, y: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(y)?.0)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the measurement vector.
    pub fn backward(&mut self, trace: &Trace<T>, grad_img: &[T]) -> Result<Vec<T>> {
        let side = self.arch.side;
        if grad_img.len() != side * side {
            return Err(Error::invalid("image gradient has the wrong length"));
        }
        let g_out = Tensor::new(vec![1, side, side], grad_img.to_vec())?;
        let mut g = self.head.backward(&trace.head, &trace.head_input, &g_out)?;

        let levels = self.dec.len();
        // Gradients flowing into each encoder output through the skips.
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..levels).map(|_| None).collect();
        for (j, (block, t)) in self.dec.iter_mut().zip(&trace.dec).enumerate().rev() {
            let gcat = block.fuse.backward(&t.fuse, &g)?;
            let cu = gcat.shape()[0] - t.skip_channels;
            let (gu, gskip) = split_channels(&gcat, cu)?;
            let gup = conv_act_backward(&mut block.up, &t.up, &gu)?;
            g = upsample2x_backward(&gup)?;
            skip_grads[levels - 1 - j] = Some(gskip);
        }

        for i in (0..self.enc.len()).rev() {
            if i < levels {
                let gs = skip_grads[i].take().expect("skip gradient recorded");
                add_into(&mut g, &gs)?;
            }
            g = self.enc[i].backward(&trace.enc[i], &g)?;
            if i > 0 {
                g = match &trace.down[i - 1] {
                    DownTrace::Pool => avg_pool2x_backward(&g)?,
                    DownTrace::Conv(t) => conv_act_backward(&mut self.down[i - 1], t, &g)?,
                };
            }
        }
        if self.arch.residual {
            add_into(&mut g, &g_out)?;
        }
        let g_lin = g.reshape(vec![side * side])?;
        let gy = self.dense.backward(&trace.input, &g_lin)?;
        Ok(gy.into_data())
    }

    /// All trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = self.dense.params_mut().into_iter().collect();
        let mut downs = self.down.iter_mut();
        for (i, block) in self.enc.iter_mut().enumerate() {
            if i > 0 {
                if let Some(d) = downs.next() {
                    out.extend(d.params_mut());
                }
            }
            out.extend(block.params_mut());
        }
        for block in &mut self.dec {
            out.extend(block.up.params_mut());
            out.extend(block.fuse.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Shapes of [`Self::params_mut`] in order.
    pub fn param_shapes(&mut self) -> Vec<Vec<usize>> {
        self.params_mut().iter().map(|p| p.value.shape().to_vec()).collect()
    }

    /// Overwrites parameter values (same order and shapes as [`Self::params_mut`]).
    pub fn load_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::invalid(format!("expected {} parameter tensors, got {}", params.len(), values.len())));
        }
        for (p, v) in params.iter_mut().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::invalid(format!("parameter shape {:?} != {:?}", v.shape(), p.value.shape())));
            }
        }
        for (p, v) in params.into_iter().zip(values) {
            p.value = v;
            p.value.requires_grad = true;
        }
        Ok(())
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Result<Decoder<U>> {
        let mut rng = crate::rng::seeded(0, 0);
        let mut out = Decoder::<U>::new(&self.arch, &mut rng)?;
        let mut me = self.clone();
        let values = me
            .params_mut()
            .into_iter()
            .map(|p| Tensor::<U>::from_f64(p.value.shape().to_vec(), &p.value.to_f64_vec()))
            .collect::<Result<Vec<_>>>()?;
        out.load_params(values)?;
        Ok(out)
    }
}

fn add_into<T: Scalar>(acc: &mut Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if acc.shape() != g.shape() {
        return Err(Error::invalid(format!("gradient shapes differ: {:?} vs {:?}", acc.shape(), g.shape())));
    }
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += *b;
    }
    Ok(())
}
