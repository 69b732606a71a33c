//! Joint training of a binary encoder `E` and the decoder `D_theta`.
//!
//! Per image: `y = E x`, standardise, add Gaussian noise, decode, and score
//! with `w1 L1 + w2 (1 - SSIM)`. The encoder additionally carries the
//! binarisation penalty `w3 lambda R(E)`, with `lambda` ramped linearly over the
//! whole run. Once `R(E)` stops improving the encoder is rounded to {0, 1} and
//! only the decoder keeps training.

pub mod checkpoint;
mod config;
pub mod model;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::imaging::{mean_std, Image, PatternKind, PatternMatrix, STD_GUARD};
use crate::neural::{
    binarisation_penalty_grad, l1_loss_grad, matmul, ssim_loss_grad, AdamConfig, AdamState, DownsampleMode,
    LossWeights, Param, Tensor,
};
use crate::rng::{self, stream};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, OptimizerState, TrainingMeta};
pub use config::{parse_key_values, KeyValues};
pub use model::Decoder;

pub const MAX_UNET_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchitectureConfig {
    pub m: usize,
    pub side: usize,
    pub unet_levels: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub downsample: DownsampleMode,
    /// Adds the linear layer's image to the U-Net output.
    pub residual: bool,
}

impl ArchitectureConfig {
    pub fn new(m: usize, side: usize) -> Self {
        Self {
            m,
            side,
            unet_levels: Self::default_levels(side),
            base_channels: 32,
            kernel: 3,
            downsample: DownsampleMode::AvgPool,
            residual: true,
        }
    }

    /// Halve until the coarsest level is 8 pixels: 3 levels at 64, 4 at 128.
    pub fn default_levels(side: usize) -> usize {
        let mut levels = 0;
        while levels < MAX_UNET_LEVELS && side % (2 << levels) == 0 && side >> (levels + 1) >= 8 {
            levels += 1;
        }
        levels.max(1)
    }

    pub fn n(&self) -> usize {
        self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.side == 0 || self.m == 0 || self.m > n {
            return Err(Error::invalid(format!("need 1 <= m <= side^2, got m={}, side={}", self.m, self.side)));
        }
        if self.unet_levels == 0 || self.unet_levels > MAX_UNET_LEVELS {
            return Err(Error::invalid(format!("unet_levels must be in 1..={MAX_UNET_LEVELS}")));
        }
        if self.side % (1 << self.unet_levels) != 0 {
            return Err(Error::invalid(format!(
                "side {} is not divisible by 2^{}",
                self.side, self.unet_levels
            )));
        }
        if self.base_channels == 0 || self.base_channels > 1024 {
            return Err(Error::invalid("base_channels must be in 1..=1024"));
        }
        if self.kernel % 2 == 0 || self.kernel > 15 {
            return Err(Error::invalid(format!("kernel must be odd and <= 15, got {}", self.kernel)));
        }
        if n > 1 << 20 || self.m.saturating_mul(n) > 1 << 28 {
            return Err(Error::SizeLimit(format!("m={} x n={n} is beyond the supported size", self.m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Std of the Gaussian noise added to standardised measurements.
    pub sigma_train: f64,
    pub weights: LossWeights,
    pub beta_alpha: f64,
    pub beta_beta: f64,
    pub freeze_patience: usize,
    pub freeze_rel_tol: f64,
    /// Binarise at this fraction of the epochs if the penalty never plateaus.
    pub force_freeze_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 1e-3,
            sigma_train: 0.25,
            weights: LossWeights::default(),
            beta_alpha: 0.7,
            beta_beta: 0.7,
            freeze_patience: 5,
            freeze_rel_tol: 1e-4,
            force_freeze_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.sigma_train >= 0.0 && self.sigma_train.is_finite()) {
            return Err(Error::invalid(format!("sigma_train must be >= 0, got {}", self.sigma_train)));
        }
        if !(self.beta_alpha > 0.0 && self.beta_beta > 0.0) {
            return Err(Error::invalid("beta parameters must be positive"));
        }
        if !(self.freeze_rel_tol >= 0.0) || !(0.0..=1.0).contains(&self.force_freeze_fraction) {
            return Err(Error::invalid("freeze tolerance must be >= 0 and force fraction in [0, 1]"));
        }
        self.weights.validate()?;
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }

    pub fn batches_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }

    /// TS: optimiser updates over the whole run.
    pub fn total_steps(&self, dataset_len: usize) -> u64 {
        (self.epochs * self.batches_per_epoch(dataset_len)).max(1) as u64
    }

    /// First epoch count after which the encoder is binarised regardless.
    pub fn force_freeze_epoch(&self) -> usize {
        ((self.epochs as f64 * self.force_freeze_fraction).ceil() as usize).clamp(1, self.epochs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Learning,
    Frozen,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Learning => "learning",
            Phase::Frozen => "frozen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "learning" => Some(Phase::Learning),
            "frozen" => Some(Phase::Frozen),
            _ => None,
        }
    }
}

/// The `m x n` encoder, continuous while learning and binary once frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    m: usize,
    n: usize,
    values: Vec<f32>,
    phase: Phase,
}

impl EncoderState {
    pub fn new(m: usize, n: usize, values: Vec<f32>, phase: Phase) -> Result<Self> {
        if m == 0 || m > n || values.len() != m * n {
            return Err(Error::invalid(format!("encoder needs 1 <= m <= n and m*n values (m={m}, n={n})")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("encoder has non-finite entries"));
        }
        if phase == Phase::Frozen && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("a frozen encoder must be binary"));
        }
        Ok(Self { m, n, values, phase })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn fill_factor(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }

    /// `R(E) = mean (e - 1)^2 e^2`, the penalty without `lambda`.
    pub fn binarisation_residual(&self) -> f64 {
        let sum: f64 = self
            .values
            .iter()
            .map(|&v| {
                let v = f64::from(v);
                let d = v * (v - 1.0);
                d * d
            })
            .sum();
        sum / self.values.len() as f64
    }

    pub fn to_pattern_matrix(&self, seed: u64) -> Result<PatternMatrix> {
        let kind = match self.phase {
            Phase::Frozen => PatternKind::BinaryLearned,
            Phase::Learning => PatternKind::Continuous,
        };
        PatternMatrix::new(self.m, self.n, self.values.clone(), kind, seed)
    }

    /// Binary pattern matrices come in frozen, anything else learning.
    pub fn from_pattern_matrix(p: &PatternMatrix) -> Result<Self> {
        let binary = p.entries().iter().all(|&v| v == 0.0 || v == 1.0);
        let phase = if binary { Phase::Frozen } else { Phase::Learning };
        Self::new(p.m(), p.n(), p.entries().to_vec(), phase)
    }
}

/// Encoder with i.i.d. Beta(0.7, 0.7) entries.
pub fn init_encoder(m: usize, n: usize, seed: u64) -> Result<EncoderState> {
    init_encoder_with(m, n, 0.7, 0.7, seed)
}

/// Beta(alpha, beta) as `G1 / (G1 + G2)` of two Gamma draws. Draws that
/// round to exactly 0 or 1 in single precision are redrawn.
pub fn init_encoder_with(m: usize, n: usize, alpha: f64, beta: f64, seed: u64) -> Result<EncoderState> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("encoder needs 1 <= m <= n, got m={m}, n={n}")));
    }
    let ga = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(format!("beta alpha: {e}")))?;
    let gb = Gamma::new(beta, 1.0).map_err(|e| Error::invalid(format!("beta beta: {e}")))?;
    let mut rng = rng::seeded(seed, stream::ENCODER_INIT);
    let values = (0..m * n)
        .map(|_| loop {
            let a: f64 = ga.sample(&mut rng);
            let b: f64 = gb.sample(&mut rng);
            let v = (a / (a + b)) as f32;
            if v > 0.0 && v < 1.0 {
                break v;
            }
        })
        .collect();
    EncoderState::new(m, n, values, Phase::Learning)
}

/// `min(step / TS, 1)`.
pub fn lambda_at(step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return 1.0;
    }
    (step as f64 / total_steps as f64).min(1.0)
}

/// True once `patience` consecutive epochs failed to beat the running best
/// by the relative tolerance. The running best still tracks small gains, so
/// a slow creep does not keep resetting the count.
pub fn freeze_check(history: &[f64], patience: usize, rel_tol: f64) -> bool {
    let Some((&first, rest)) = history.split_first() else {
        return false;
    };
    let mut best = first;
    let mut stale = 0usize;
    for &v in rest {
        if v < best * (1.0 - rel_tol) {
            stale = 0;
        } else {
            stale += 1;
        }
        best = best.min(v);
    }
    stale >= patience.max(1)
}

/// Rounds every entry at 0.5 (ties go to 1) and freezes the encoder.
pub fn binarize_encoder(state: &EncoderState) -> Result<EncoderState> {
    if state.phase != Phase::Learning {
        return Err(Error::invalid("encoder is already frozen"));
    }
    let values = state.values.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
    EncoderState::new(state.m, state.n, values, Phase::Frozen)
}

/// Mean/std used to standardise one measurement vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardStats {
    pub mean: f64,
    pub std: f64,
}

/// `(y - mean) / (std + 1e-8)` with the statistics.
pub fn standardize_values(y: &[f64]) -> (Vec<f64>, StandardStats) {
    let (mean, std) = mean_std(y);
    let d = std + STD_GUARD;
    (y.iter().map(|v| (v - mean) / d).collect(), StandardStats { mean, std })
}

/// Pulls a gradient on the standardised vector back to the raw one.
pub fn standardize_backward(y: &[f64], stats: StandardStats, g: &[f64]) -> Vec<f64> {
    let m = y.len() as f64;
    let d = stats.std + STD_GUARD;
    let gbar = g.iter().sum::<f64>() / m;
    let cross = if stats.std > 0.0 {
        g.iter().zip(y).map(|(gi, yi)| gi * (yi - stats.mean)).sum::<f64>() / (m * stats.std * d * d)
    } else {
        0.0
    };
    g.iter().zip(y).map(|(gi, yi)| (gi - gbar) / d - (yi - stats.mean) * cross).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub l1: f64,
    pub ssim_loss: f64,
    /// `w1 L1 + w2 SSIM-loss`.
    pub data_loss: f64,
    /// `lambda R(E)`.
    pub binar_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub data_loss: f64,
    pub binar_loss: f64,
    pub lambda: f64,
    pub phase: Phase,
    /// Mean training SSIM (noisy inputs, parameters as they moved).
    pub ssim: f64,
    /// Epoch-mean `R(E)`, the quantity watched by the freeze rule.
    pub residual: f64,
}

pub const LOG_HEADER: &str = "epoch,data_loss,binar_loss,lambda,phase";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.data_loss, self.binar_loss, self.lambda, self.phase.as_str())
    }
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&l.csv_row());
        out.push('\n');
    }
    out
}

pub struct Trainer {
    arch: ArchitectureConfig,
    config: TrainConfig,
    encoder: EncoderState,
    decoder: Decoder<f32>,
    dec_opt: AdamState<f32>,
    enc_opt: AdamState<f32>,
    meta: TrainingMeta,
}

impl Trainer {
    /// Fresh run with a Beta-initialised, learnable encoder.
    pub fn new(arch: ArchitectureConfig, config: TrainConfig, dataset_len: usize) -> Result<Self> {
        arch.validate()?;
        let encoder = init_encoder_with(arch.m, arch.n(), config.beta_alpha, config.beta_beta, config.seed)?;
        Self::build(arch, config, dataset_len, encoder, true)
    }

    /// Decoder-only run behind fixed binary patterns (e.g. scrambled Hadamard).
    pub fn with_fixed_encoder(
        arch: ArchitectureConfig,
        config: TrainConfig,
        dataset_len: usize,
        patterns: &PatternMatrix,
    ) -> Result<Self> {
        arch.validate()?;
        if patterns.m() != arch.m || patterns.n() != arch.n() {
            return Err(Error::invalid(format!(
                "patterns are {}x{}, architecture needs {}x{}",
                patterns.m(),
                patterns.n(),
                arch.m,
                arch.n()
            )));
        }
        let encoder = EncoderState::from_pattern_matrix(patterns)?;
        if encoder.phase != Phase::Frozen {
            return Err(Error::invalid("fixed patterns must be binary"));
        }
        Self::build(arch, config, dataset_len, encoder, false)
    }

    fn build(
        arch: ArchitectureConfig,
        config: TrainConfig,
        dataset_len: usize,
        encoder: EncoderState,
        encoder_trainable: bool,
    ) -> Result<Self> {
        config.validate()?;
        if dataset_len == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        if arch.side < crate::metrics::SSIM_WINDOW {
            return Err(Error::invalid(format!("training needs side >= {}", crate::metrics::SSIM_WINDOW)));
        }
        let mut init = rng::seeded(config.seed, stream::DECODER_INIT);
        let decoder = Decoder::new(&arch, &mut init)?;
        let phase = encoder.phase;
        Ok(Self {
            arch,
            config,
            encoder,
            decoder,
            dec_opt: AdamState::new(config.adam())?,
            enc_opt: AdamState::new(config.adam())?,
            meta: TrainingMeta {
                epoch: 0,
                step: 0,
                lambda: 0.0,
                total_steps: config.total_steps(dataset_len),
                sigma_train: config.sigma_train,
                seed: config.seed,
                encoder_trainable,
                frozen_epoch: (phase == Phase::Frozen).then_some(0),
                penalty_history: Vec::new(),
            },
        })
    }

    /// Continues a saved run; the optimiser state must have been saved.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let Some(opt) = ckpt.optimizer else {
            return Err(Error::invalid("checkpoint has no optimiser state to resume from"));
        };
        if ckpt.meta.seed != config.seed || ckpt.meta.sigma_train != config.sigma_train {
            return Err(Error::invalid("resume config disagrees with the checkpoint (seed or sigma_train)"));
        }
        let adam = config.adam();
        let (dm, dv) = (opt.decoder_m, opt.decoder_v);
        let (em, ev) = (opt.encoder_m, opt.encoder_v);
        Ok(Self {
            arch: ckpt.arch,
            config,
            encoder: ckpt.encoder,
            decoder: ckpt.decoder,
            dec_opt: AdamState::from_parts(adam, opt.decoder_step, dm, dv)?,
            enc_opt: AdamState::from_parts(adam, opt.encoder_step, em, ev)?,
            meta: ckpt.meta,
        })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &EncoderState {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder<f32> {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut Decoder<f32> {
        &mut self.decoder
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    /// Replaces the encoder (test fixtures, e.g. an identity encoder).
    pub fn set_encoder(&mut self, encoder: EncoderState, trainable: bool) -> Result<()> {
        if encoder.m != self.arch.m || encoder.n != self.arch.n() {
            return Err(Error::invalid("encoder shape does not match the architecture"));
        }
        self.meta.encoder_trainable = trainable && encoder.phase == Phase::Learning;
        self.encoder = encoder;
        Ok(())
    }

    fn learning(&self) -> bool {
        self.meta.encoder_trainable && self.encoder.phase == Phase::Learning
    }

    /// One optimiser update on a batch.
    pub fn train_step<R: rand::Rng>(&mut self, batch: &[&Image], noise: &mut R) -> Result<StepMetrics> {
        let (m, n, side) = (self.arch.m, self.arch.n(), self.arch.side);
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(bad) = batch.iter().find(|img| img.side() != side) {
            return Err(Error::invalid(format!("batch image has side {}, expected {side}", bad.side())));
        }
        let b = batch.len();
        let w = self.config.weights;
        let learning = self.learning();
        let lambda = self.meta.lambda;
        let step = self.meta.step;

        let xs: Vec<f32> = batch.iter().flat_map(|img| img.pixels().iter().map(|&p| p as f32)).collect();
        // Y (b x m) = X E^T
        let mut ys = vec![0f32; b * m];
        matmul(b, n, m, &xs, false, &self.encoder.values, true, &mut ys, false);

        let mut gys = if learning { vec![0f32; b * m] } else { Vec::new() };
        let (mut l1_sum, mut ssim_sum) = (0.0, 0.0);
        let inv_b = 1.0 / b as f64;
        for i in 0..b {
            let y: Vec<f64> = ys[i * m..(i + 1) * m].iter().map(|&v| f64::from(v)).collect();
            let (ystd, stats) = standardize_values(&y);
            let input: Vec<f32> = ystd
                .iter()
                .map(|&v| {
                    let z: f64 = noise.sample(StandardNormal);
                    (v + self.config.sigma_train * z) as f32
                })
                .collect();
            let x = &xs[i * n..(i + 1) * n];
            let (xhat, trace) = self.decoder.forward(&input)?;
            let (l1, g1) = l1_loss_grad(x, &xhat)?;
            let (sl, g2) = ssim_loss_grad(x, &xhat, side)?;
            l1_sum += l1;
            ssim_sum += sl;
            let grad: Vec<f32> = g1
                .iter()
                .zip(&g2)
                .map(|(a, c)| ((w.w1 * f64::from(*a) + w.w2 * f64::from(*c)) * inv_b) as f32)
                .collect();
            let g_in = self.decoder.backward(&trace, &grad)?;
            if learning {
                let g_in: Vec<f64> = g_in.iter().map(|&v| f64::from(v)).collect();
                let gy = standardize_backward(&y, stats, &g_in);
                for (dst, v) in gys[i * m..(i + 1) * m].iter_mut().zip(gy) {
                    *dst = v as f32;
                }
            }
        }
        let l1 = l1_sum * inv_b;
        let ssim_loss = ssim_sum * inv_b;
        let data_loss = w.w1 * l1 + w.w2 * ssim_loss;
        let binar_loss = lambda * self.encoder.binarisation_residual();
        let total = data_loss + w.w3 * binar_loss;
        if !total.is_finite() {
            return Err(Error::numerical(step as usize, format!("training loss is {total}")));
        }

        {
            let params = self.decoder.params_mut();
            let (mut values, grads): (Vec<&mut [f32]>, Vec<&[f32]>) = params
                .into_iter()
                .map(|p| {
                    let Param { value, grad } = p;
                    (value.data_mut(), grad.as_slice())
                })
                .unzip();
            self.dec_opt.update(&mut values, &grads)?;
        }
        self.decoder.zero_grad();

        if learning {
            // dL/dE (m x n) = GY^T X
            let mut ge = vec![0f32; m * n];
            matmul(m, b, n, &gys, true, &xs, false, &mut ge, false);
            if w.w3 != 0.0 && lambda > 0.0 {
                let e = Tensor::new(vec![m, n], self.encoder.values.clone())?;
                let gp = binarisation_penalty_grad(&e, w.w3 * lambda)?;
                for (g, p) in ge.iter_mut().zip(gp) {
                    *g += p;
                }
            }
            self.enc_opt.update(&mut [self.encoder.values.as_mut_slice()], &[ge.as_slice()])?;
            // Patterns are intensities on a mirror device: keep them in [0, 1].
            for v in &mut self.encoder.values {
                *v = v.clamp(0.0, 1.0);
            }
        }

        self.meta.step += 1;
        if learning {
            self.meta.lambda = lambda_at(self.meta.step, self.meta.total_steps);
        }
        Ok(StepMetrics {
            step,
            l1,
            ssim_loss,
            data_loss,
            binar_loss,
            total,
            lambda,
        })
    }

    /// One shuffled pass over `data`, followed by the freeze decision.
    pub fn run_epoch(&mut self, data: &[Image]) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let epoch = self.meta.epoch as u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::seeded_round(self.config.seed, stream::SHUFFLE, epoch));
        let mut noise = rng::seeded_round(self.config.seed, stream::TRAIN_NOISE, epoch);

        let (mut data_sum, mut ssim_sum, mut binar_sum, mut resid_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Image> = chunk.iter().map(|&i| &data[i]).collect();
            resid_sum += self.encoder.binarisation_residual();
            let s = self.train_step(&batch, &mut noise)?;
            data_sum += s.data_loss * chunk.len() as f64;
            ssim_sum += (1.0 - s.ssim_loss) * chunk.len() as f64;
            binar_sum += s.binar_loss;
            steps += 1;
        }
        self.meta.epoch += 1;
        let residual = resid_sum / steps as f64;
        if self.learning() {
            self.meta.penalty_history.push(residual);
            let plateau =
                freeze_check(&self.meta.penalty_history, self.config.freeze_patience, self.config.freeze_rel_tol);
            if plateau || self.meta.epoch >= self.config.force_freeze_epoch() {
                self.encoder = binarize_encoder(&self.encoder)?;
                self.meta.frozen_epoch = Some(self.meta.epoch);
            }
        }
        Ok(EpochLog {
            epoch: self.meta.epoch,
            data_loss: data_sum / data.len() as f64,
            binar_loss: binar_sum / steps as f64,
            lambda: self.meta.lambda,
            phase: self.encoder.phase,
            ssim: ssim_sum / data.len() as f64,
            residual,
        })
    }

    /// Runs the remaining epochs. The encoder always ends frozen.
    pub fn fit(&mut self, data: &[Image], mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if let Some(bad) = data.iter().find(|img| img.side() != self.arch.side) {
            return Err(Error::invalid(format!("image side {} != {}", bad.side(), self.arch.side)));
        }
        let mut logs = Vec::new();
        while self.meta.epoch < self.config.epochs {
            let log = self.run_epoch(data)?;
            on_epoch(&log);
            logs.push(log);
        }
        if self.encoder.phase == Phase::Learning {
            self.encoder = binarize_encoder(&self.encoder)?;
            self.meta.frozen_epoch = Some(self.meta.epoch);
        }
        Ok(logs)
    }

    pub fn checkpoint(&self, with_optimizer: bool) -> Checkpoint {
        let optimizer = with_optimizer.then(|| {
            let (dm, dv) = self.dec_opt.moments();
            let (em, ev) = self.enc_opt.moments();
            OptimizerState {
                decoder_step: self.dec_opt.step(),
                decoder_m: dm.to_vec(),
                decoder_v: dv.to_vec(),
                encoder_step: self.enc_opt.step(),
                encoder_m: em.to_vec(),
                encoder_v: ev.to_vec(),
            }
        });
        Checkpoint {
            arch: self.arch,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            meta: self.meta.clone(),
            optimizer,
        }
    }
}

/// Trains a learned encoder and decoder from scratch.
pub fn fit(arch: ArchitectureConfig, config: TrainConfig, data: &[Image]) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(arch, config, data.len())?;
    let logs = trainer.fit(data, |_| {})?;
    Ok((trainer.checkpoint(false), logs))
}

/// Trains only the decoder behind fixed binary patterns.
pub fn fit_fixed_encoder(
    arch: ArchitectureConfig,
    config: TrainConfig,
    patterns: &PatternMatrix,
    data: &[Image],
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut trainer = Trainer::with_fixed_encoder(arch, config, data.len(), patterns)?;
    let logs = trainer.fit(data, |_| {})?;
    Ok((trainer.checkpoint(false), logs))
}
