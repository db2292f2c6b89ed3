//! Weighted regression objective and the training loop.
//!
//! For a pair `(x, y)`, a time `t` and bridge noise `z` the per-example loss is
//!
//! ```text
//! w(t) * mean((y - y_θ(x_t, t))^2),   x_t = (1 - t) x + t y + (s(t)/sqrt 2) z
//! ```
//!
//! with `w(t) = 1 / (2 s(t)^2)` (capped) or `1` in unit mode.

mod optim;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use optim::{adamw_step, AdamWHyper, LrSchedule, OptimizerState};

use crate::data::{sample_pair, VideoSequence};
use crate::denoiser::{
    backward_generic, denoiser_backward, denoiser_forward, finite_difference_check,
    forward_generic, init_params, DenoiserParams, DenoiserSpec, GradFault,
};
use crate::error::{CvpError, Result};
use crate::process::{interpolate_bridge, loss_weight, WeightMode, DEFAULT_WEIGHT_CAP};
use crate::rng::RngState;
use crate::schedule::{NoiseSchedule, SamplerKind, TimestepSampler, DEFAULT_CLAMP};
use crate::tensor::FrameBlock;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub warmup: usize,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub sampler: SamplerKind,
    /// Grid size for the discrete sampler.
    pub grid: usize,
    pub clamp: f64,
    pub schedule: NoiseSchedule,
    pub weight_mode: WeightMode,
    pub weight_cap: f64,
    /// Frame shift `k` between the past and future blocks.
    pub shift: usize,
    pub log_every: usize,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Fill the `wall_ms` log column. Off keeps logs bit-reproducible.
    pub wall_clock: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// CPU-sized defaults.
    pub fn desk() -> Self {
        Self {
            batch: 16,
            steps: 5000,
            warmup: 200,
            max_lr: 2e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            sampler: SamplerKind::SqrtUniform,
            grid: 100,
            clamp: DEFAULT_CLAMP,
            schedule: NoiseSchedule::NegTLogT,
            weight_mode: WeightMode::Cvp,
            weight_cap: DEFAULT_WEIGHT_CAP,
            shift: 1,
            log_every: 50,
            checkpoint_every: 1000,
            wall_clock: false,
            seed: 0,
        }
    }

    /// Batch 64, 500k iterations, 10k warmup, peak LR 5e-5.
    pub fn paper() -> Self {
        Self {
            batch: 64,
            steps: 500_000,
            warmup: 10_000,
            max_lr: 5e-5,
            checkpoint_every: 50_000,
            log_every: 1000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CvpError::Config(m));
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.warmup >= self.steps {
            return bad(format!(
                "warmup ({}) must be below total steps ({})",
                self.warmup, self.steps
            ));
        }
        if !(self.max_lr > 0.0) {
            return bad(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if self.shift == 0 || self.log_every == 0 {
            return bad("shift and log_every must be >= 1".into());
        }
        if !(self.weight_cap > 0.0) {
            return bad("weight_cap must be positive".into());
        }
        self.timestep_sampler()?;
        Ok(())
    }

    pub fn timestep_sampler(&self) -> Result<TimestepSampler> {
        TimestepSampler::new(self.sampler, self.clamp, self.grid)
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            max_lr: self.max_lr,
            warmup: self.warmup,
            total: self.steps,
        }
    }

    pub fn adamw(&self) -> AdamWHyper {
        AdamWHyper {
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    config.lr_schedule().at(step)
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub weight: f64,
    pub grads: Vec<f32>,
}

/// Objective options shared by every example in a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub schedule: NoiseSchedule,
    pub weight_mode: WeightMode,
    pub cap: f64,
}

impl From<&TrainConfig> for Objective {
    fn from(c: &TrainConfig) -> Self {
        Self {
            schedule: c.schedule,
            weight_mode: c.weight_mode,
            cap: c.weight_cap,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn compute_loss(
    params: &DenoiserParams,
    spec: &DenoiserSpec,
    x: &FrameBlock,
    y: &FrameBlock,
    t: f64,
    z: &FrameBlock,
    objective: Objective,
) -> Result<LossOutput> {
    let x_t = interpolate_bridge(x, y, t, z, objective.schedule)?;
    let (pred, cache) = denoiser_forward(params, spec, &x_t, t)?;
    let weight = loss_weight(objective.schedule, t, objective.cap, objective.weight_mode)?;
    let numel = y.len() as f64;
    let sq: f64 = pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum();
    let loss = weight * sq / numel;
    if !loss.is_finite() {
        return Err(CvpError::NonFinite(format!("loss is {loss} at t = {t}")));
    }
    let scale = 2.0 * weight / numel;
    let grad_out = pred.zip_map(y, |p, q| (scale * (p as f64 - q as f64)) as f32)?;
    let grads = denoiser_backward(params, spec, &cache, &grad_out)?;
    Ok(LossOutput {
        loss,
        weight,
        grads,
    })
}

/// Finite-difference check of [`compute_loss`]'s parameter gradient, run in
/// `f64` end to end.
#[allow(clippy::too_many_arguments)]
pub fn loss_grad_check(
    params: &DenoiserParams,
    spec: &DenoiserSpec,
    x: &FrameBlock,
    y: &FrameBlock,
    t: f64,
    z: &FrameBlock,
    objective: Objective,
    rng: &mut RngState,
) -> Result<f64> {
    x.ensure_same_shape(y)?;
    x.ensure_same_shape(z)?;
    let sigma = objective.schedule.sigma(t)?.marginal;
    let x_t: Vec<f64> = x
        .data()
        .iter()
        .zip(y.data())
        .zip(z.data())
        .map(|((&a, &b), &n)| (1.0 - t) * a as f64 + t * b as f64 + sigma * n as f64)
        .collect();
    let target: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
    let weight = loss_weight(objective.schedule, t, objective.cap, objective.weight_mode)?;
    let numel = target.len() as f64;
    let loss_of = |p: &[f64]| -> Result<f64> {
        let (pred, _) = forward_generic(spec, p, &x_t, t)?;
        Ok(weight * pred.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / numel)
    };
    let theta: Vec<f64> = params.values.iter().map(|&v| v as f64).collect();
    let (pred, cache) = forward_generic(spec, &theta, &x_t, t)?;
    let grad_out: Vec<f64> = pred
        .iter()
        .zip(&target)
        .map(|(a, b)| 2.0 * weight * (a - b) / numel)
        .collect();
    let analytic = backward_generic(spec, &theta, &cache, &grad_out, GradFault::None)?;
    let coords = crate::denoiser::gradcheck_coords(theta.len(), rng);
    Ok(finite_difference_check(&theta, &analytic, loss_of, &coords, crate::denoiser::FD_STEP)?.max_rel_err)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    /// Mean loss over the steps since the previous row.
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub const LOG_HEADER: &str = "step,loss,lr,wall_ms";

pub fn write_log_csv(path: impl AsRef<Path>, rows: &[TrainLogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "{LOG_HEADER}").expect("write to Vec");
    for r in rows {
        writeln!(out, "{},{:e},{:e},{}", r.step, r.loss, r.lr, r.wall_ms).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| CvpError::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub optimizer: OptimizerState,
    pub log: Vec<TrainLogRow>,
}

fn check_data(data: &[VideoSequence], spec: &DenoiserSpec, shift: usize) -> Result<()> {
    if data.is_empty() {
        return Err(CvpError::InvalidArgument("training set is empty".into()));
    }
    for seq in data {
        let f = &seq.frames;
        if (f.c(), f.h(), f.w()) != (spec.channels, spec.height, spec.width) {
            return Err(CvpError::shape(
                &[spec.channels, spec.height, spec.width],
                &[f.c(), f.h(), f.w()],
            ));
        }
        if seq.len() < spec.frames + shift {
            return Err(CvpError::InvalidArgument(format!(
                "sequence of {} frames too short for n = {}, k = {shift}",
                seq.len(),
                spec.frames
            )));
        }
    }
    Ok(())
}

/// Runs the full loop: sample pair, time and noise; accumulate the batch
/// gradient in example order; take an AdamW step.
///
/// `on_checkpoint` is called every `checkpoint_every` steps with the current
/// parameters.
pub fn train_loop(
    config: &TrainConfig,
    data: &[VideoSequence],
    spec: &DenoiserSpec,
    mut on_checkpoint: impl FnMut(usize, &DenoiserParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    check_data(data, spec, config.shift)?;
    let root = RngState::new(config.seed);
    let mut params = init_params(spec, &mut root.fork(0))?;
    let mut rng = root.fork(1);
    let sampler = config.timestep_sampler()?;
    let objective = Objective::from(config);
    let hp = config.adamw();
    let lrs = config.lr_schedule();
    let mut opt = OptimizerState::new(params.len());
    let mut log = Vec::new();
    let started = Instant::now();
    let [n, c, h, w] = spec.block_shape();

    let mut grads = vec![0.0f32; params.len()];
    let mut interval_loss = 0.0;
    let mut interval_steps = 0usize;
    for step in 1..=config.steps {
        grads.fill(0.0);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch {
            let seq = &data[if data.len() > 1 { rng.below(data.len()) } else { 0 }];
            let pair = sample_pair(seq, n, config.shift, &mut rng)?;
            let t = sampler.sample(&mut rng);
            let z = FrameBlock::new(n, c, h, w, rng.normal_vec(spec.block_len()))?;
            let out = compute_loss(&params, spec, &pair.x, &pair.y, t, &z, objective)
                .map_err(|e| match e {
                    CvpError::NonFinite(m) => CvpError::NonFinite(format!("step {step}: {m}")),
                    other => other,
                })?;
            batch_loss += out.loss;
            for (g, o) in grads.iter_mut().zip(&out.grads) {
                *g += o;
            }
        }
        let inv = 1.0 / config.batch as f32;
        grads.iter_mut().for_each(|g| *g *= inv);
        let lr = lrs.at(step);
        adamw_step(&mut opt, &mut params.values, &grads, lr, &hp)
            .map_err(|e| CvpError::NonFinite(format!("step {step}: {e}")))?;

        interval_loss += batch_loss / config.batch as f64;
        interval_steps += 1;
        if step % config.log_every == 0 || step == config.steps {
            let row = TrainLogRow {
                step,
                loss: interval_loss / interval_steps as f64,
                lr,
                wall_ms: if config.wall_clock {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                },
            };
            log::info!("step {} loss {:.5} lr {:.3e}", row.step, row.loss, row.lr);
            log.push(row);
            interval_loss = 0.0;
            interval_steps = 0;
        }
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            on_checkpoint(step, &params)?;
        }
    }
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        log,
    })
}
