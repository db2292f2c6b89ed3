//! Next-block generation and autoregressive rollout.
//!
//! Starting from the context block `x`, the sampler walks the bridge in `N`
//! equal steps of size `d = 1/N`:
//!
//! ```text
//! x_{i+1} = x_i + (ŷ(x_i, t_i) - x) d - s(t_i) z_i,   z_1 = 0,  z_i ~ N(0, d I)
//! ```
//!
//! where `x` is always the original context. Without noise the drift
//! telescopes, so a predictor that returns the true future block lands on it
//! exactly.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::Predictor;
use crate::error::{CvpError, Result};
use crate::rng::RngState;
use crate::schedule::NoiseSchedule;
use crate::tensor::FrameBlock;

/// How the integer step index `i in 1..=N` maps to bridge time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeNorm {
    /// `(i - 1) / N`: the first evaluation happens at `t = 0`.
    Left,
    /// `i / N`.
    Right,
}

impl FromStr for TimeNorm {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(TimeNorm::Left),
            "right" => Ok(TimeNorm::Right),
            other => Err(CvpError::InvalidArgument(format!(
                "unknown time normalisation {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub schedule: NoiseSchedule,
    pub stochastic: bool,
    pub time_norm: TimeNorm,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            schedule: NoiseSchedule::NegTLogT,
            stochastic: true,
            time_norm: TimeNorm::Left,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(CvpError::Config("sampling steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn time_at(&self, i: usize) -> f64 {
        let n = self.steps as f64;
        match self.time_norm {
            TimeNorm::Left => (i - 1) as f64 / n,
            TimeNorm::Right => i as f64 / n,
        }
    }

    /// Per-element variance the noise injections add to the final iterate:
    /// `sum_{i >= 2} s(t_i)^2 d`.
    pub fn injected_variance(&self) -> Result<f64> {
        if !self.stochastic {
            return Ok(0.0);
        }
        let d = 1.0 / self.steps as f64;
        (2..=self.steps)
            .map(|i| self.schedule.base(self.time_at(i)).map(|s| s * s * d))
            .sum()
    }
}

/// Generates an estimate of the future block from context `x`.
///
/// Performs exactly `N` predictor evaluations and returns the final iterate.
pub fn sample_block<P: Predictor + ?Sized>(
    x: &FrameBlock,
    predictor: &P,
    config: &SamplerConfig,
    rng: &mut RngState,
) -> Result<FrameBlock> {
    config.validate()?;
    let d = 1.0 / config.steps as f64;
    let noise_std = d.sqrt();
    let mut cur = x.clone();
    for i in 1..=config.steps {
        let t = config.time_at(i);
        let pred = predictor.predict(&cur, t)?;
        x.ensure_same_shape(&pred)?;
        let s = config.schedule.base(t)?;
        let noisy = config.stochastic && i > 1 && s > 0.0;
        for ((c, &p), &x0) in cur.data_mut().iter_mut().zip(pred.data()).zip(x.data()) {
            let z = if noisy {
                rng.normal() * noise_std
            } else {
                0.0
            };
            *c = (*c as f64 + (p as f64 - x0 as f64) * d - s * z) as f32;
        }
        if !cur.is_finite() {
            return Err(CvpError::NonFinite(format!(
                "sampling diverged at step {i} of {} (t = {t})",
                config.steps
            )));
        }
    }
    Ok(cur)
}

/// Context length `n`, shift `k` and number of frames to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutPlan {
    pub context: usize,
    pub shift: usize,
    pub predict: usize,
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<()> {
        if self.shift == 0 || self.predict == 0 || self.context == 0 {
            return Err(CvpError::Config(format!("invalid rollout plan {self:?}")));
        }
        if self.shift > self.context {
            return Err(CvpError::Config(format!(
                "shift {} exceeds context length {}",
                self.shift, self.context
            )));
        }
        Ok(())
    }

    /// Number of block samples needed to cover `predict` frames.
    pub fn calls(&self) -> usize {
        self.predict.div_ceil(self.shift)
    }
}

/// Predicts `plan.predict` frames after `context`, `k` frames per call.
///
/// After each call the context window is the last `n` frames of
/// `[context, new frames]`.
pub fn rollout<P: Predictor + ?Sized>(
    context: &FrameBlock,
    plan: RolloutPlan,
    predictor: &P,
    config: &SamplerConfig,
    rng: &mut RngState,
) -> Result<FrameBlock> {
    plan.validate()?;
    if context.n() != plan.context {
        return Err(CvpError::InvalidArgument(format!(
            "context has {} frames, plan expects {}",
            context.n(),
            plan.context
        )));
    }
    let (n, k) = (plan.context, plan.shift);
    let mut window = context.clone();
    let mut produced: Vec<FrameBlock> = Vec::with_capacity(plan.calls());
    for _ in 0..plan.calls() {
        let next = sample_block(&window, predictor, config, rng)?;
        let fresh = next.frames(n - k, k)?;
        window = FrameBlock::concat(&[&window, &fresh])?.frames(k, n)?;
        produced.push(fresh);
    }
    let refs: Vec<&FrameBlock> = produced.iter().collect();
    FrameBlock::concat(&refs)?.frames(0, plan.predict)
}

/// `count` independent rollouts; sample `j` uses stream `j` of `config.seed`.
pub fn rollout_samples<P: Predictor + ?Sized>(
    context: &FrameBlock,
    plan: RolloutPlan,
    predictor: &P,
    config: &SamplerConfig,
    count: usize,
) -> Result<Vec<FrameBlock>> {
    let root = RngState::new(config.seed);
    (0..count)
        .map(|j| rollout(context, plan, predictor, config, &mut root.fork(j as u64)))
        .collect()
}
