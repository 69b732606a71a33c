//! `SPIC1` checkpoints.
//!
//! ASCII header (architecture, training metadata, shape table), a blank line,
//! then every tensor as little-endian f32 in table order: the encoder, the
//! decoder parameters, and optionally the Adam moments (decoder m, decoder v,
//! encoder m, encoder v).

use std::path::Path;

use super::config::{downsample_name, parse_downsample};
use super::{ArchitectureConfig, Decoder, EncoderState, Phase};
use crate::error::{Error, Result};
use crate::header::{push_f32_le, read_f32_le, write_atomic, Header};
use crate::imaging::PatternMatrix;
use crate::neural::Tensor;

pub const MAGIC: &str = "SPIC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimiser updates.
    pub step: u64,
    /// Lambda for the next update.
    pub lambda: f64,
    pub total_steps: u64,
    pub sigma_train: f64,
    pub seed: u64,
    pub encoder_trainable: bool,
    pub frozen_epoch: Option<usize>,
    /// Epoch means of `R(E)` while the encoder was learning.
    pub penalty_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub decoder_step: u64,
    pub decoder_m: Vec<Vec<f32>>,
    pub decoder_v: Vec<Vec<f32>>,
    pub encoder_step: u64,
    pub encoder_m: Vec<Vec<f32>>,
    pub encoder_v: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchitectureConfig,
    pub encoder: EncoderState,
    pub decoder: Decoder<f32>,
    pub meta: TrainingMeta,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    /// The frozen encoder as a learned binary pattern matrix.
    pub fn encoder_patterns(&self) -> Result<PatternMatrix> {
        if self.encoder.phase() != Phase::Frozen {
            return Err(Error::invalid("encoder is not frozen yet; only binary patterns can be exported"));
        }
        self.encoder.to_pattern_matrix(self.meta.seed)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut dec = self.decoder.clone();
        let params = dec.params_mut();
        let mut shapes: Vec<Vec<usize>> = vec![vec![self.arch.m, self.arch.n()]];
        shapes.extend(params.iter().map(|p| p.value.shape().to_vec()));
        let a = &self.arch;
        let m = &self.meta;
        let mut h = format!("{MAGIC}\nversion={VERSION}\n");
        let mut kv = |k: &str, v: String| {
            h.push_str(k);
            h.push('=');
            h.push_str(&v);
            h.push('\n');
        };
        kv("m", a.m.to_string());
        kv("side", a.side.to_string());
        kv("unet_levels", a.unet_levels.to_string());
        kv("base_channels", a.base_channels.to_string());
        kv("kernel", a.kernel.to_string());
        kv("downsample", downsample_name(a.downsample).to_string());
        kv("residual", a.residual.to_string());
        kv("phase", self.encoder.phase().as_str().to_string());
        kv("epoch", m.epoch.to_string());
        kv("step", m.step.to_string());
        kv("lambda", m.lambda.to_string());
        kv("total_steps", m.total_steps.to_string());
        kv("sigma_train", m.sigma_train.to_string());
        kv("seed", m.seed.to_string());
        kv("encoder_trainable", m.encoder_trainable.to_string());
        kv("frozen_epoch", m.frozen_epoch.map_or("none".into(), |e| e.to_string()));
        kv("penalty_history", list_or_none(&m.penalty_history));
        match &self.optimizer {
            None => kv("optimizer", "none".into()),
            Some(o) => {
                kv("optimizer", "adam".into());
                kv("adam_decoder_step", o.decoder_step.to_string());
                kv("adam_decoder_buffers", o.decoder_m.len().to_string());
                kv("adam_encoder_step", o.encoder_step.to_string());
                kv("adam_encoder_buffers", o.encoder_m.len().to_string());
            }
        }
        kv("tensors", shapes.len().to_string());
        kv(
            "shapes",
            shapes
                .iter()
                .map(|s| s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"))
                .collect::<Vec<_>>()
                .join(";"),
        );
        h.push('\n');

        let mut out = h.into_bytes();
        push_f32_le(&mut out, self.encoder.values().iter().copied());
        for p in &params {
            push_f32_le(&mut out, p.value.data().iter().copied());
        }
        if let Some(o) = &self.optimizer {
            for buf in o.decoder_m.iter().chain(&o.decoder_v).chain(&o.encoder_m).chain(&o.encoder_v) {
                push_f32_le(&mut out, buf.iter().copied());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let h = Header::parse(bytes, MAGIC)?;
        let version: u32 = h.get("version")?;
        if version != VERSION {
            return Err(Error::Version { expected: VERSION, found: version });
        }
        let (ds, ds_off) = h.raw("downsample")?;
        let arch = ArchitectureConfig {
            m: h.get("m")?,
            side: h.get("side")?,
            unet_levels: h.get("unet_levels")?,
            base_channels: h.get("base_channels")?,
            kernel: h.get("kernel")?,
            downsample: parse_downsample(ds).ok_or_else(|| Error::format(ds_off, format!("unknown downsample {ds}")))?,
            residual: h.get("residual")?,
        };
        arch.validate().map_err(|e| Error::format(0, format!("bad architecture: {e}")))?;
        let (ph, ph_off) = h.raw("phase")?;
        let phase = Phase::parse(ph).ok_or_else(|| Error::format(ph_off, format!("unknown phase {ph}")))?;
        let (fe, fe_off) = h.raw("frozen_epoch")?;
        let frozen_epoch = match fe {
            "none" => None,
            v => Some(v.parse().map_err(|_| Error::format(fe_off, format!("bad frozen_epoch {v}")))?),
        };
        let (ph_list, pl_off) = h.raw("penalty_history")?;
        let penalty_history = parse_list(ph_list).ok_or_else(|| Error::format(pl_off, "bad penalty_history"))?;
        let meta = TrainingMeta {
            epoch: h.get("epoch")?,
            step: h.get("step")?,
            lambda: h.get("lambda")?,
            total_steps: h.get("total_steps")?,
            sigma_train: h.get("sigma_train")?,
            seed: h.get("seed")?,
            encoder_trainable: h.get("encoder_trainable")?,
            frozen_epoch,
            penalty_history,
        };
        for (key, v) in [("lambda", meta.lambda), ("sigma_train", meta.sigma_train)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::format(h.raw(key)?.1, format!("{key}={v} must be finite and non-negative")));
            }
        }
        if meta.penalty_history.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::format(pl_off, "penalty_history holds a negative or non-finite value"));
        }

        let mut decoder = Decoder::<f32>::new(&arch, &mut crate::rng::seeded(0, 0))
            .map_err(|e| Error::format(0, format!("cannot build decoder: {e}")))?;
        let mut expected = vec![vec![arch.m, arch.n()]];
        expected.extend(decoder.param_shapes());
        let count: usize = h.get("tensors")?;
        let (shape_text, shape_off) = h.raw("shapes")?;
        let shapes = parse_shapes(shape_text).ok_or_else(|| Error::format(shape_off, "malformed shape table"))?;
        if count != shapes.len() || shapes != expected {
            return Err(Error::format(
                shape_off,
                format!("shape table does not match the architecture ({} tensors listed, {} expected)", shapes.len(), expected.len()),
            ));
        }

        let mut offset = h.body_offset;
        let mut take = |len: usize| -> Result<Vec<f32>> {
            let v = read_f32_le(bytes, offset, len)?;
            offset += len * 4;
            Ok(v)
        };
        let enc_values = take(arch.m * arch.n())?;
        let encoder = EncoderState::new(arch.m, arch.n(), enc_values, phase)
            .map_err(|e| Error::format(h.body_offset as u64, e.to_string()))?;
        let mut params = Vec::with_capacity(shapes.len() - 1);
        for s in &shapes[1..] {
            let data = take(s.iter().product())?;
            params.push(Tensor::new(s.clone(), data)?);
        }
        decoder.load_params(params)?;

        let optimizer = match h.raw("optimizer")? {
            ("none", _) => None,
            ("adam", _) => {
                let dec_bufs: usize = h.get("adam_decoder_buffers")?;
                let enc_bufs: usize = h.get("adam_encoder_buffers")?;
                let (_, off) = h.raw("adam_decoder_buffers")?;
                if (dec_bufs != 0 && dec_bufs != shapes.len() - 1) || enc_bufs > 1 {
                    return Err(Error::format(off, "optimiser buffer counts do not match the parameters"));
                }
                let dec_lens: Vec<usize> = shapes[1..].iter().take(dec_bufs).map(|s| s.iter().product()).collect();
                let enc_len = arch.m * arch.n();
                let mut read_set = |lens: &[usize]| lens.iter().map(|&l| take(l)).collect::<Result<Vec<_>>>();
                let decoder_m = read_set(&dec_lens)?;
                let decoder_v = read_set(&dec_lens)?;
                let enc_lens = vec![enc_len; enc_bufs];
                let encoder_m = read_set(&enc_lens)?;
                let encoder_v = read_set(&enc_lens)?;
                Some(OptimizerState {
                    decoder_step: h.get("adam_decoder_step")?,
                    decoder_m,
                    decoder_v,
                    encoder_step: h.get("adam_encoder_step")?,
                    encoder_m,
                    encoder_v,
                })
            }
            (other, off) => return Err(Error::format(off, format!("unknown optimizer {other}"))),
        };
        if offset != bytes.len() {
            return Err(Error::format(offset as u64, format!("{} trailing bytes after the body", bytes.len() - offset)));
        }
        Ok(Self { arch, encoder, decoder, meta, optimizer })
    }
}

fn list_or_none(v: &[f64]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    if s == "none" {
        return Some(Vec::new());
    }
    s.split(',').map(|v| v.trim().parse().ok()).collect()
}

fn parse_shapes(s: &str) -> Option<Vec<Vec<usize>>> {
    s.split(';')
        .map(|t| {
            let dims: Option<Vec<usize>> = t.split('x').map(|d| d.trim().parse().ok()).collect();
            dims.filter(|d| !d.is_empty() && d.iter().all(|&x| x > 0))
        })
        .collect()
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
