use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};

/// Moment estimates for AdamW, aligned with the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWHyper {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One AdamW update with bias correction and decoupled weight decay:
///
/// ```text
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
/// ```
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut [f32],
    grads: &[f32],
    lr: f64,
    hp: &AdamWHyper,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(CvpError::shape(&[params.len()], &[grads.len()]));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(CvpError::NonFinite(format!("gradient coordinate {i} is {}", grads[i])));
    }
    state.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g as f64;
        let m_new = hp.beta1 * *m as f64 + (1.0 - hp.beta1) * g;
        let v_new = hp.beta2 * *v as f64 + (1.0 - hp.beta2) * g * g;
        *m = m_new as f32;
        *v = v_new as f32;
        let m_hat = m_new / bc1;
        let v_hat = v_new / bc2;
        let pv = *p as f64;
        *p = (pv - lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * pv)) as f32;
    }
    Ok(())
}

/// Linear warmup from 0 to `max_lr`, then half-cosine decay to 0 at `total`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.max_lr * step as f64 / self.warmup as f64;
        }
        if step >= self.total {
            return 0.0;
        }
        let progress = (step - self.warmup) as f64 / (self.total - self.warmup) as f64;
        self.max_lr * 0.5 * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_without_decay_is_noop() {
        let mut p = vec![0.5f32, -1.25, 3.0];
        let before = p.clone();
        let mut s = OptimizerState::new(3);
        let hp = AdamWHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut s, &mut p, &[0.0; 3], 1e-2, &hp).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let hp = AdamWHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        for g in [0.3f32, -7.0, 1e-2] {
            let mut p = vec![1.0f32];
            let mut s = OptimizerState::new(1);
            adamw_step(&mut s, &mut p, &[g], 1e-3, &hp).unwrap();
            let expect = 1.0 - 1e-3 * g.signum();
            assert!((p[0] - expect).abs() < 1e-6, "g = {g}: {}", p[0]);
        }
    }

    #[test]
    fn decay_alone_scales_params() {
        let hp = AdamWHyper {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut p = vec![2.0f32, -4.0];
        let mut s = OptimizerState::new(2);
        adamw_step(&mut s, &mut p, &[0.0, 0.0], 0.5, &hp).unwrap();
        assert!((p[0] - 2.0 * 0.95).abs() < 1e-6);
        assert!((p[1] + 4.0 * 0.95).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![0.0f32];
        let mut s = OptimizerState::new(1);
        assert!(matches!(
            adamw_step(&mut s, &mut p, &[f32::INFINITY], 1e-3, &AdamWHyper::default()),
            Err(CvpError::NonFinite(_))
        ));
    }

    #[test]
    fn lr_schedule_landmarks() {
        let s = LrSchedule {
            max_lr: 2e-4,
            warmup: 200,
            total: 5000,
        };
        assert_eq!(s.at(0), 0.0);
        assert!((s.at(100) - 1e-4).abs() < 1e-18);
        assert!((s.at(200) - 2e-4).abs() < 1e-18);
        assert!((s.at(2600) - 1e-4).abs() < 1e-12);
        assert!(s.at(5000).abs() < 1e-18);
    }

    #[test]
    fn lr_schedule_continuous_and_nonnegative() {
        let s = LrSchedule {
            max_lr: 1.0,
            warmup: 50,
            total: 1000,
        };
        let mut prev = s.at(0);
        for step in 1..=1000 {
            let lr = s.at(step);
            assert!(lr >= 0.0);
            assert!((lr - prev).abs() <= 0.021, "jump at {step}");
            prev = lr;
        }
    }
}
