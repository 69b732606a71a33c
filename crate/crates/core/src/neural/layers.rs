use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{conv2d_backward, conv2d_forward, dense_backward, dense_forward, ConvCache};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownsampleMode {
    StrideConv,
    AvgPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    /// Nearest-neighbour x2 followed by a 3x3 convolution.
    NearestConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize },
    Downsample2x { mode: DownsampleMode },
    Upsample2x { mode: UpsampleMode },
    Concat,
    Mish,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { input, output } if input == 0 || output == 0 => {
                Err(Error::invalid("dense layer sizes must be positive"))
            }
            LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, .. } => {
                if in_ch == 0 || out_ch == 0 {
                    Err(Error::invalid("convolution channel counts must be positive"))
                } else if kernel % 2 == 0 {
                    Err(Error::invalid(format!("kernel must be odd, got {kernel}")))
                } else if !(1..=2).contains(&stride) {
                    Err(Error::invalid(format!("stride must be 1 or 2, got {stride}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(mut value: Tensor<T>) -> Self {
        value.requires_grad = true;
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

fn normal_tensor<T: Scalar, R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Result<Tensor<T>> {
    let len = shape.iter().product();
    let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    Tensor::new(shape, (0..len).map(|_| T::cast_from(dist.sample(rng))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> DenseLayer<T> {
    /// Normal init with variance `1 / input`, zero bias.
    pub fn new<R: Rng>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let LayerSpec::Dense { input, output } = spec else {
            return Err(Error::invalid("not a dense layer spec"));
        };
        Ok(Self {
            weight: Param::new(normal_tensor(vec![output, input], (1.0 / input as f64).sqrt(), rng)?),
            bias: Param::new(Tensor::zeros(vec![output])?),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense_forward(x, &self.weight.value, &self.bias.value)
    }

    pub fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        dense_backward(x, &self.weight.value, grad_out, &mut self.weight.grad, &mut self.bias.grad)
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    /// He-normal init (variance `2 / fan_in`), zero bias.
    pub fn new<R: Rng>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, padding } = spec else {
            return Err(Error::invalid("not a convolution spec"));
        };
        let fan_in = (in_ch * kernel * kernel) as f64;
        Ok(Self {
            weight: Param::new(normal_tensor(vec![out_ch, in_ch, kernel, kernel], (2.0 / fan_in).sqrt(), rng)?),
            bias: Param::new(Tensor::zeros(vec![out_ch])?),
            stride,
            padding,
        })
    }

    /// "Same" convolution for odd kernels at stride 1.
    pub fn same<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        Self::new(LayerSpec::Conv2d { in_ch, out_ch, kernel, stride: 1, padding: kernel / 2 }, rng)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        conv2d_forward(x, &self.weight.value, &self.bias.value, self.stride, self.padding)
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_backward(cache, x, &self.weight.value, grad_out, &mut self.weight.grad, &mut self.bias.grad)
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
