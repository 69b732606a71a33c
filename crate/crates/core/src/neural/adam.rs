use super::{ensure_finite, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.eps > 0.0) || !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments. Moment buffers are created on the first
/// update and must match the parameter list from then on.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(config: AdamConfig, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<Self> {
        config.validate()?;
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid("Adam moment buffers do not match"));
        }
        Ok(Self { config, step, m, v })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::invalid("parameter and gradient shapes differ"));
        }
        for g in grads {
            ensure_finite(g, self.step as usize, "gradient")?;
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(b, p)| b.len() != p.len()) {
            return Err(Error::invalid("parameter shapes changed between Adam updates"));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::cast_from(c.beta1), T::cast_from(c.beta2));
        let (ob1, ob2) = (T::cast_from(1.0 - c.beta1), T::cast_from(1.0 - c.beta2));
        let step_size = T::cast_from(c.lr / bc1);
        let inv_sqrt_bc2 = T::cast_from(1.0 / bc2.sqrt());
        let eps = T::cast_from(c.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                p[i] -= step_size * m[i] / ((v[i]).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
