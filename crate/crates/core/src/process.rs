//! The continuous frame-to-frame process.
//!
//! A bridge pinned at the past block `x` (t = 0) and the future block `y`
//! (t = 1):
//!
//! ```text
//! x_t = (1 - t) x + t y + (s(t) / sqrt 2) z,        z ~ N(0, I)
//! ```
//!
//! together with the forward chain that walks it in steps of `dt`, the
//! Gaussian posterior of one chain step, and the closed-form KL between two
//! such Gaussians, which is what the training objective reduces to.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::{FrameBlock, Tensor};

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CvpError::Domain(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// Point on the bridge between `x` and `y` at time `t` with bridge noise `z`.
///
/// Returns `x` at `t = 0` and `y` at `t = 1` bit-for-bit.
pub fn interpolate_bridge(
    x: &FrameBlock,
    y: &FrameBlock,
    t: f64,
    z: &FrameBlock,
    schedule: NoiseSchedule,
) -> Result<FrameBlock> {
    x.ensure_same_shape(y)?;
    x.ensure_same_shape(z)?;
    check_time(t)?;
    if t == 0.0 {
        return Ok(x.clone());
    }
    if t == 1.0 {
        return Ok(y.clone());
    }
    let sigma = schedule.sigma(t)?.marginal;
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(z.data())
        .map(|((&a, &b), &n)| ((1.0 - t) * a as f64 + t * b as f64 + sigma * n as f64) as f32)
        .collect();
    FrameBlock::new(x.n(), x.c(), x.h(), x.w(), data)
}

/// One forward-chain step: `x_t + (y - x) dt - s(t) sqrt(dt) z`.
pub fn forward_increment(
    x_t: &FrameBlock,
    x: &FrameBlock,
    y: &FrameBlock,
    t: f64,
    dt: f64,
    z: &FrameBlock,
    schedule: NoiseSchedule,
) -> Result<FrameBlock> {
    x_t.ensure_same_shape(x)?;
    x_t.ensure_same_shape(y)?;
    x_t.ensure_same_shape(z)?;
    check_step(dt)?;
    let noise = schedule.sigma(t)?.transition * dt.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(x.data())
        .zip(y.data())
        .zip(z.data())
        .map(|(((&xt, &a), &b), &n)| {
            (xt as f64 + (b as f64 - a as f64) * dt - noise * n as f64) as f32
        })
        .collect();
    FrameBlock::new(x.n(), x.c(), x.h(), x.w(), data)
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(CvpError::Domain(format!("step size {dt} outside (0, 1]")));
    }
    Ok(())
}

/// Mean and std of the forward posterior `q(x_t | x_{t-dt}, x, y)`.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub mean: FrameBlock,
    pub sigma: f64,
}

pub fn posterior_params(
    x_prev: &FrameBlock,
    x: &FrameBlock,
    y: &FrameBlock,
    t: f64,
    dt: f64,
    schedule: NoiseSchedule,
) -> Result<Posterior> {
    x_prev.ensure_same_shape(x)?;
    x_prev.ensure_same_shape(y)?;
    if !(t > 0.0 && t < 1.0) {
        return Err(CvpError::Domain(format!("posterior time {t} outside (0, 1)")));
    }
    check_step(dt)?;
    let mean = posterior_mean_f64(x_prev.data(), x.data(), y.data(), dt);
    let sigma = schedule.sigma(t)?.transition * dt.sqrt();
    let mean = FrameBlock::new(
        x.n(),
        x.c(),
        x.h(),
        x.w(),
        mean.into_iter().map(|v| v as f32).collect(),
    )?;
    Ok(Posterior { mean, sigma })
}

/// `x_prev + (target - x) dt` evaluated in `f64`.
///
/// With `target = y` this is the posterior mean; with `target = ŷ` it is the
/// model transition mean.
pub fn posterior_mean_f64(x_prev: &[f32], x: &[f32], target: &[f32], dt: f64) -> Vec<f64> {
    x_prev
        .iter()
        .zip(x)
        .zip(target)
        .map(|((&p, &a), &b)| p as f64 + (b as f64 - a as f64) * dt)
        .collect()
}

/// `KL(N(mu_a, sigma^2 I) || N(mu_b, sigma^2 I)) = |mu_a - mu_b|^2 / (2 sigma^2)`.
pub fn gaussian_kl_isotropic(mu_a: &Tensor, mu_b: &Tensor, sigma: f64) -> Result<f64> {
    mu_a.ensure_same_shape(mu_b)?;
    let a: Vec<f64> = mu_a.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = mu_b.data().iter().map(|&v| v as f64).collect();
    kl_isotropic_f64(&a, &b, sigma)
}

pub fn kl_isotropic_f64(mu_a: &[f64], mu_b: &[f64], sigma: f64) -> Result<f64> {
    if mu_a.len() != mu_b.len() {
        return Err(CvpError::shape(&[mu_a.len()], &[mu_b.len()]));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CvpError::Domain(format!("KL needs sigma > 0, got {sigma}")));
    }
    let sq: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / (2.0 * sigma * sigma))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `1 / (2 s(t)^2)`, capped.
    Cvp,
    Unit,
}

impl std::str::FromStr for WeightMode {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cvp" => Ok(WeightMode::Cvp),
            "unit" => Ok(WeightMode::Unit),
            other => Err(CvpError::InvalidArgument(format!(
                "unknown weight mode {other:?}"
            ))),
        }
    }
}

pub const DEFAULT_WEIGHT_CAP: f64 = 1e4;

static ZERO_SIGMA_WARNED: AtomicBool = AtomicBool::new(false);

/// Per-timestep weight of the regression loss.
pub fn loss_weight(schedule: NoiseSchedule, t: f64, cap: f64, mode: WeightMode) -> Result<f64> {
    if !(cap > 0.0) {
        return Err(CvpError::Domain(format!("weight cap must be positive, got {cap}")));
    }
    if mode == WeightMode::Unit {
        return Ok(1.0);
    }
    let s = schedule.base(t)?;
    if s == 0.0 {
        if !ZERO_SIGMA_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("schedule {schedule} is zero at t = {t}; loss weight falls back to cap {cap}");
        }
        return Ok(cap);
    }
    Ok((1.0 / (2.0 * s * s)).min(cap))
}
