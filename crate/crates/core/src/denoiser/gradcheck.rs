use crate::error::{CvpError, Result};
use crate::rng::RngState;
use crate::tensor::FrameBlock;

use super::{backward_generic, forward_generic, DenoiserParams, DenoiserSpec};

pub const FD_STEP: f64 = 1e-3;
pub const MIN_COORDS: usize = 128;

/// Deliberate corruption of the backward pass, used as a negative control.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradFault {
    #[default]
    None,
    /// Negates the gradient flowing out of the output layer.
    FlipSign,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdCheck {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// Draws `count` distinct indices in `0..len` (all of them if `len <= count`).
pub(crate) fn pick_coords(len: usize, count: usize, rng: &mut RngState) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let k = count.min(len);
    for i in 0..k {
        let j = i + rng.below(len - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Compares `analytic[i]` with the central difference of `loss` at each
/// coordinate in `coords`; returns the worst
/// `|g_a - g_fd| / max(|g_a|, |g_fd|, 1e-6)`.
pub fn finite_difference_check(
    params: &[f64],
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> Result<f64>,
    coords: &[usize],
    step: f64,
) -> Result<FdCheck> {
    if params.len() != analytic.len() {
        return Err(CvpError::shape(&[params.len()], &[analytic.len()]));
    }
    let mut probe = params.to_vec();
    let mut worst = FdCheck {
        max_rel_err: 0.0,
        worst_coord: coords.first().copied().unwrap_or(0),
        coords_checked: coords.len(),
    };
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe)?;
        probe[i] = orig - step;
        let down = loss(&probe)?;
        probe[i] = orig;
        let fd = (up - down) / (2.0 * step);
        let ga = analytic[i];
        let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-6);
        if rel > worst.max_rel_err || !rel.is_finite() {
            worst.max_rel_err = rel;
            worst.worst_coord = i;
        }
    }
    Ok(worst)
}

/// Max relative error between the analytic network gradient and central
/// finite differences, for the scalar `L = <r, ŷ>` with random `r`.
///
/// Runs the network in `f64` so the comparison measures the backward pass,
/// not `f32` round-off. Intended for small specs.
pub fn grad_check(
    spec: &DenoiserSpec,
    params: &DenoiserParams,
    x_t: &FrameBlock,
    t: f64,
    rng: &mut RngState,
) -> Result<f64> {
    grad_check_with(spec, params, x_t, t, rng, GradFault::None).map(|c| c.max_rel_err)
}

pub fn grad_check_with(
    spec: &DenoiserSpec,
    params: &DenoiserParams,
    x_t: &FrameBlock,
    t: f64,
    rng: &mut RngState,
    fault: GradFault,
) -> Result<FdCheck> {
    let mut checks = grad_check_steps(spec, params, x_t, t, rng, fault, &[FD_STEP])?;
    Ok(checks.remove(0))
}

/// [`grad_check_with`] repeated at each of `steps` with the same projection
/// and coordinates. A correct backward pass shows the error falling as the
/// square of the step until round-off takes over.
pub fn grad_check_steps(
    spec: &DenoiserSpec,
    params: &DenoiserParams,
    x_t: &FrameBlock,
    t: f64,
    rng: &mut RngState,
    fault: GradFault,
    steps: &[f64],
) -> Result<Vec<FdCheck>> {
    let theta: Vec<f64> = params.values.iter().map(|&v| v as f64).collect();
    let x: Vec<f64> = x_t.data().iter().map(|&v| v as f64).collect();
    let proj: Vec<f64> = (0..spec.block_len()).map(|_| rng.normal()).collect();

    let (_, cache) = forward_generic(spec, &theta, &x, t)?;
    let analytic = backward_generic(spec, &theta, &cache, &proj, fault)?;
    let coords = pick_coords(theta.len(), MIN_COORDS, rng);
    let loss = |p: &[f64]| -> Result<f64> {
        let (y, _) = forward_generic(spec, p, &x, t)?;
        Ok(y.iter().zip(&proj).map(|(a, b)| a * b).sum())
    };
    steps
        .iter()
        .map(|&h| finite_difference_check(&theta, &analytic, &loss, &coords, h))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::init_params;

    fn block(spec: &DenoiserSpec, seed: u64) -> FrameBlock {
        let mut rng = RngState::new(seed);
        let [n, c, h, w] = spec.block_shape();
        FrameBlock::new(n, c, h, w, (0..spec.block_len()).map(|_| rng.uniform_f32()).collect())
            .unwrap()
    }

    #[test]
    fn conv_small_toy_passes() {
        let spec = DenoiserSpec {
            hidden: 8,
            time_dim: 8,
            ..DenoiserSpec::conv_small(2, 1, 8, 8)
        };
        assert!(spec.num_params() <= 10_000);
        let p = init_params(&spec, &mut RngState::new(1)).unwrap();
        let err = grad_check(&spec, &p, &block(&spec, 2), 0.5, &mut RngState::new(3)).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn truncation_error_is_second_order() {
        // a coordinate with a small gradient and large curvature: the central
        // difference error must shrink 100x when the step shrinks 10x
        let spec = DenoiserSpec {
            hidden: 8,
            time_dim: 8,
            ..DenoiserSpec::conv_small(2, 1, 8, 8)
        };
        let p = init_params(&spec, &mut RngState::new(1)).unwrap();
        let theta: Vec<f64> = p.values.iter().map(|&v| v as f64).collect();
        let x: Vec<f64> = block(&spec, 2).data().iter().map(|&v| v as f64).collect();
        let mut rng = RngState::new(3);
        let proj: Vec<f64> = (0..spec.block_len()).map(|_| rng.normal()).collect();
        let (_, cache) = forward_generic(&spec, &theta, &x, 0.37).unwrap();
        let analytic = backward_generic(&spec, &theta, &cache, &proj, GradFault::None).unwrap();
        let coords = pick_coords(theta.len(), MIN_COORDS, &mut rng);
        let loss = |q: &[f64]| -> Result<f64> {
            let (y, _) = forward_generic(&spec, q, &x, 0.37)?;
            Ok(y.iter().zip(&proj).map(|(a, b)| a * b).sum())
        };
        let coarse = finite_difference_check(&theta, &analytic, loss, &coords, 1e-3).unwrap();
        let fine = finite_difference_check(&theta, &analytic, loss, &[coarse.worst_coord], 1e-4)
            .unwrap();
        let ratio = coarse.max_rel_err / fine.max_rel_err;
        assert!((80.0..125.0).contains(&ratio), "ratio {ratio}");
        assert!(fine.max_rel_err < 1e-5);
    }

    #[test]
    fn mlp_passes() {
        let spec = DenoiserSpec::mlp(2, 1, 4, 4);
        let p = init_params(&spec, &mut RngState::new(4)).unwrap();
        let err = grad_check(&spec, &p, &block(&spec, 5), 0.81, &mut RngState::new(6)).unwrap();
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn sign_flip_is_detected() {
        let spec = DenoiserSpec {
            hidden: 8,
            time_dim: 8,
            ..DenoiserSpec::conv_small(2, 1, 8, 8)
        };
        let p = init_params(&spec, &mut RngState::new(1)).unwrap();
        let c = grad_check_with(
            &spec,
            &p,
            &block(&spec, 2),
            0.37,
            &mut RngState::new(3),
            GradFault::FlipSign,
        )
        .unwrap();
        assert!(c.max_rel_err > 0.1, "{c:?}");
    }

    #[test]
    fn coords_are_distinct() {
        let mut rng = RngState::new(0);
        let mut c = pick_coords(500, 128, &mut rng);
        assert_eq!(c.len(), 128);
        c.sort_unstable();
        c.dedup();
        assert_eq!(c.len(), 128);
        assert_eq!(pick_coords(10, 128, &mut rng).len(), 10);
    }
}
