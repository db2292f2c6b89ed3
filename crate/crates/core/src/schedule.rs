//! Noise schedules and timestep samplers.
//!
//! A schedule is a base function `s(t)` on `[0, 1]`. The bridge marginal at
//! time `t` carries noise with standard deviation `s(t) / sqrt(2)` and a
//! transition of the forward chain carries `s(t)`.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};
use crate::rng::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// Identically zero: a pure linear interpolation.
    None,
    SinPiT,
    TSinPiT,
    SqrtTOneMinusT,
    /// `-t ln t`, zero at both endpoints with its peak at `1/e`.
    NegTLogT,
}

impl NoiseSchedule {
    pub const ALL: [NoiseSchedule; 5] = [
        NoiseSchedule::None,
        NoiseSchedule::SinPiT,
        NoiseSchedule::TSinPiT,
        NoiseSchedule::SqrtTOneMinusT,
        NoiseSchedule::NegTLogT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseSchedule::None => "none",
            NoiseSchedule::SinPiT => "sin_pi_t",
            NoiseSchedule::TSinPiT => "t_sin_pi_t",
            NoiseSchedule::SqrtTOneMinusT => "sqrt_t_one_minus_t",
            NoiseSchedule::NegTLogT => "neg_t_log_t",
        }
    }

    /// Base function `s(t)`. Endpoints return exactly zero.
    pub fn base(self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(CvpError::Domain(format!("schedule time {t} outside [0, 1]")));
        }
        if t == 0.0 || t == 1.0 {
            return Ok(0.0);
        }
        let s = match self {
            NoiseSchedule::None => 0.0,
            NoiseSchedule::SinPiT => (PI * t).sin(),
            NoiseSchedule::TSinPiT => t * (PI * t).sin(),
            NoiseSchedule::SqrtTOneMinusT => (t * (1.0 - t)).sqrt(),
            NoiseSchedule::NegTLogT => -t * t.ln(),
        };
        Ok(s.max(0.0))
    }

    pub fn sigma(self, t: f64) -> Result<Sigmas> {
        let s = self.base(t)?;
        Ok(Sigmas {
            marginal: s / SQRT_2,
            transition: s,
        })
    }
}

impl fmt::Display for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseSchedule {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        NoiseSchedule::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CvpError::InvalidArgument(format!("unknown noise schedule {s:?}")))
    }
}

/// Noise levels at one point of the bridge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sigmas {
    /// Std of the bridge marginal `x_t` around its linear interpolant.
    pub marginal: f64,
    /// Std of one forward transition, before step-size scaling.
    pub transition: f64,
}

pub fn schedule_sigma(schedule: NoiseSchedule, t: f64) -> Result<Sigmas> {
    schedule.sigma(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Uniform,
    SqrtUniform,
    DiscreteGrid,
}

impl FromStr for SamplerKind {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "sqrt_uniform" => Ok(SamplerKind::SqrtUniform),
            "discrete_grid" => Ok(SamplerKind::DiscreteGrid),
            other => Err(CvpError::InvalidArgument(format!(
                "unknown timestep sampler {other:?}"
            ))),
        }
    }
}

pub const DEFAULT_CLAMP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestepSampler {
    pub kind: SamplerKind,
    /// Emitted times are clamped into `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
    /// Grid size for [`SamplerKind::DiscreteGrid`].
    pub grid: usize,
}

impl Default for TimestepSampler {
    fn default() -> Self {
        Self {
            kind: SamplerKind::SqrtUniform,
            epsilon: DEFAULT_CLAMP,
            grid: 100,
        }
    }
}

impl TimestepSampler {
    pub fn new(kind: SamplerKind, epsilon: f64, grid: usize) -> Result<Self> {
        let s = Self {
            kind,
            epsilon,
            grid,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.1) {
            return Err(CvpError::InvalidArgument(format!(
                "clamp margin {} outside (0, 0.1)",
                self.epsilon
            )));
        }
        if self.kind == SamplerKind::DiscreteGrid && self.grid < 2 {
            return Err(CvpError::InvalidArgument(
                "discrete grid needs at least 2 points".into(),
            ));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut RngState) -> f64 {
        let raw = match self.kind {
            SamplerKind::Uniform => rng.uniform(),
            SamplerKind::SqrtUniform => rng.uniform().sqrt(),
            SamplerKind::DiscreteGrid => {
                let i = 1 + rng.below(self.grid - 1);
                i as f64 / self.grid as f64
            }
        };
        raw.clamp(self.epsilon, 1.0 - self.epsilon)
    }
}

pub fn sample_timestep(sampler: &TimestepSampler, rng: &mut RngState) -> f64 {
    sampler.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neg_t_log_t_values() {
        let s = schedule_sigma(NoiseSchedule::NegTLogT, 0.5).unwrap();
        assert!((s.transition - 0.346_573_590_279_972_65).abs() < 1e-12);
        assert!((s.marginal - 0.245_064_535_867_136_8).abs() < 1e-12);

        let peak = schedule_sigma(NoiseSchedule::NegTLogT, (-1.0f64).exp()).unwrap();
        assert!((peak.transition - 0.367_879_441_171_442_3).abs() < 1e-12);
        for t in [0.2, 0.3, 0.35, 0.4, 0.5] {
            assert!(NoiseSchedule::NegTLogT.base(t).unwrap() <= peak.transition);
        }
    }

    #[test]
    fn endpoints_are_exact_zero() {
        for k in NoiseSchedule::ALL {
            for t in [0.0, 1.0] {
                let s = k.sigma(t).unwrap();
                assert_eq!(s.transition, 0.0, "{k} at {t}");
                assert_eq!(s.marginal, 0.0);
            }
        }
    }

    #[test]
    fn schedules_nonnegative_on_grid() {
        for k in NoiseSchedule::ALL {
            for i in 0..=1000 {
                let s = k.base(i as f64 / 1000.0).unwrap();
                assert!(s >= 0.0 && s.is_finite());
            }
        }
        assert_eq!(NoiseSchedule::None.base(0.3).unwrap(), 0.0);
    }

    #[test]
    fn other_schedules_match_closed_forms() {
        assert!((NoiseSchedule::SinPiT.base(0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (NoiseSchedule::TSinPiT.base(0.25).unwrap() - 0.176_776_695_296_636_9).abs() < 1e-12
        );
        assert!(
            (NoiseSchedule::SqrtTOneMinusT.base(0.25).unwrap() - 0.433_012_701_892_219_3).abs()
                < 1e-12
        );
    }

    #[test]
    fn out_of_range_time_is_domain_error() {
        assert!(matches!(
            NoiseSchedule::NegTLogT.base(1.5),
            Err(CvpError::Domain(_))
        ));
        assert!(NoiseSchedule::NegTLogT.base(-1e-9).is_err());
        assert!(NoiseSchedule::NegTLogT.base(f64::NAN).is_err());
    }

    #[test]
    fn names_roundtrip() {
        for k in NoiseSchedule::ALL {
            assert_eq!(k.name().parse::<NoiseSchedule>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
    }

    #[test]
    fn samplers_stay_in_clamped_range() {
        let mut rng = RngState::new(3);
        for kind in [
            SamplerKind::Uniform,
            SamplerKind::SqrtUniform,
            SamplerKind::DiscreteGrid,
        ] {
            let s = TimestepSampler::new(kind, 0.05, 10).unwrap();
            for _ in 0..5000 {
                let t = s.sample(&mut rng);
                assert!((0.05..=0.95).contains(&t));
            }
        }
    }

    #[test]
    fn discrete_grid_emits_interior_grid_points() {
        let s = TimestepSampler::new(SamplerKind::DiscreteGrid, 1e-3, 4).unwrap();
        let mut rng = RngState::new(9);
        let mut seen = [false; 3];
        for _ in 0..200 {
            let t = s.sample(&mut rng);
            let i = (t * 4.0).round() as usize;
            assert!((1..=3).contains(&i));
            assert!((t - i as f64 / 4.0).abs() < 1e-12);
            seen[i - 1] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn sampler_validation() {
        assert!(TimestepSampler::new(SamplerKind::Uniform, 0.0, 0).is_err());
        assert!(TimestepSampler::new(SamplerKind::Uniform, 0.2, 0).is_err());
        assert!(TimestepSampler::new(SamplerKind::DiscreteGrid, 0.01, 1).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let s = TimestepSampler::default();
        let mut a = RngState::new(11);
        let mut b = RngState::new(11);
        for _ in 0..100 {
            assert_eq!(s.sample(&mut a).to_bits(), s.sample(&mut b).to_bits());
        }
    }
}
