//! Multi-start rollout evaluation against held-out video.

use serde::{Deserialize, Serialize};

use crate::denoiser::Predictor;
use crate::error::{CvpError, Result};
use crate::metrics::{copy_last_frame, evaluate_prediction, score_sequence, EvalReport};
use crate::rng::RngState;
use crate::sampling::{rollout_samples, RolloutPlan, SamplerConfig};
use crate::tensor::FrameBlock;

/// `count` start indices spread evenly over every position that leaves room
/// for `context + predict` frames.
pub fn spaced_starts(len: usize, context: usize, predict: usize, count: usize) -> Result<Vec<usize>> {
    let span = context + predict;
    if count == 0 || len < span {
        return Err(CvpError::InvalidArgument(format!(
            "cannot place {count} windows of {span} frames in {len} frames"
        )));
    }
    let last = len - span;
    if count == 1 {
        return Ok(vec![0]);
    }
    if count > last + 1 {
        return Err(CvpError::InvalidArgument(format!(
            "only {} distinct starts fit in {len} frames, {count} requested",
            last + 1
        )));
    }
    Ok((0..count).map(|i| i * last / (count - 1)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartResult {
    pub start: usize,
    pub report: EvalReport,
    pub baseline_psnr: f64,
    pub baseline_mse: f64,
    pub baseline_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub steps: usize,
    pub stochastic: bool,
    pub k_samples: usize,
    pub plan: RolloutPlan,
    /// Averages over starts of the per-start sample means.
    pub mean_psnr: f64,
    pub mean_mse: f64,
    pub mean_ssim: f64,
    pub best_of_k_psnr: f64,
    /// Copy-last-frame baseline on the same windows.
    pub baseline_psnr: f64,
    pub baseline_mse: f64,
    pub baseline_ssim: f64,
    pub starts: Vec<StartResult>,
}

impl EvalSummary {
    pub fn psnr_gain(&self) -> f64 {
        self.mean_psnr - self.baseline_psnr
    }
}

/// Context and ground-truth continuation of the window beginning at `start`.
pub fn window(video: &FrameBlock, start: usize, plan: RolloutPlan) -> Result<(FrameBlock, FrameBlock)> {
    Ok((
        video.frames(start, plan.context)?,
        video.frames(start + plan.context, plan.predict)?,
    ))
}

/// Rolls out `k_samples` predictions from every start and scores them, along
/// with the copy-last baseline.
///
/// Start `j` samples with the stream `j` of `config.seed`. The returned
/// rollouts are indexed `[start][sample]`.
pub fn evaluate_starts<P: Predictor + ?Sized>(
    predictor: &P,
    video: &FrameBlock,
    plan: RolloutPlan,
    config: &SamplerConfig,
    k_samples: usize,
    starts: &[usize],
) -> Result<(EvalSummary, Vec<Vec<FrameBlock>>)> {
    plan.validate()?;
    config.validate()?;
    if starts.is_empty() || k_samples == 0 {
        return Err(CvpError::InvalidArgument("need at least one start and one sample".into()));
    }
    let root = RngState::new(config.seed);
    let mut results = Vec::with_capacity(starts.len());
    let mut all = Vec::with_capacity(starts.len());
    for (j, &start) in starts.iter().enumerate() {
        let (context, truth) = window(video, start, plan)?;
        let cfg = SamplerConfig {
            seed: root.fork(j as u64).seed(),
            ..config.clone()
        };
        let samples = rollout_samples(&context, plan, predictor, &cfg, k_samples)?;
        let report = evaluate_prediction(&truth, &samples)?;
        let base = score_sequence(&truth, &copy_last_frame(&context, plan.predict)?)?;
        log::debug!(
            "start {start}: psnr {:.3} (copy-last {:.3})",
            report.mean_psnr,
            base.mean_psnr
        );
        results.push(StartResult {
            start,
            report,
            baseline_psnr: base.mean_psnr,
            baseline_mse: base.mean_mse,
            baseline_ssim: base.mean_ssim,
        });
        all.push(samples);
    }
    let avg = |f: &dyn Fn(&StartResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    let summary = EvalSummary {
        steps: config.steps,
        stochastic: config.stochastic,
        k_samples,
        plan,
        mean_psnr: avg(&|r| r.report.mean_psnr),
        mean_mse: avg(&|r| r.report.mean_mse),
        mean_ssim: avg(&|r| r.report.mean_ssim),
        best_of_k_psnr: avg(&|r| r.report.best_of_k_psnr),
        baseline_psnr: avg(&|r| r.baseline_psnr),
        baseline_mse: avg(&|r| r.baseline_mse),
        baseline_ssim: avg(&|r| r.baseline_ssim),
        starts: results,
    };
    Ok((summary, all))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticKind};
    use crate::metrics::PSNR_CAP;

    #[test]
    fn starts_are_spread_and_in_range() {
        assert_eq!(spaced_starts(20, 2, 10, 1).unwrap(), vec![0]);
        let s = spaced_starts(100, 2, 10, 5).unwrap();
        assert_eq!(s, vec![0, 22, 44, 66, 88]);
        assert!(spaced_starts(11, 2, 10, 1).is_err());
        assert!(spaced_starts(13, 2, 10, 3).is_err());
    }

    #[test]
    fn perfect_predictor_hits_the_cap() {
        let video = generate_synthetic(SyntheticKind::MovingBar, 40, 16, 16, 3).unwrap().frames;
        let plan = RolloutPlan {
            context: 2,
            shift: 1,
            predict: 4,
        };
        // looks the window up in the video by matching its first frame
        let lookup = |b: &FrameBlock, _t: f64| {
            let pos = (0..video.n() - 2)
                .find(|&i| video.frame(i) == b.frame(0))
                .expect("context comes from the video");
            video.frames(pos + 1, 2)
        };
        let cfg = SamplerConfig {
            steps: 1,
            stochastic: false,
            ..Default::default()
        };
        let starts = spaced_starts(40, 2, 4, 3).unwrap();
        let (summary, rollouts) = evaluate_starts(&lookup, &video, plan, &cfg, 2, &starts).unwrap();
        assert_eq!(summary.mean_psnr, PSNR_CAP);
        assert!(summary.psnr_gain() > 0.0);
        assert_eq!(rollouts.len(), 3);
        assert_eq!(rollouts[0].len(), 2);
        assert_eq!(rollouts[0][0].n(), 4);
    }

    #[test]
    fn copy_last_predictor_matches_baseline() {
        let video = generate_synthetic(SyntheticKind::BouncingBall, 30, 16, 16, 1).unwrap().frames;
        let plan = RolloutPlan {
            context: 2,
            shift: 1,
            predict: 3,
        };
        let copy = |b: &FrameBlock, _t: f64| {
            let last = b.frames(1, 1)?;
            FrameBlock::concat(&[&last, &last])
        };
        let cfg = SamplerConfig {
            steps: 1,
            stochastic: false,
            ..Default::default()
        };
        let (summary, _) = evaluate_starts(&copy, &video, plan, &cfg, 1, &[0, 5, 10]).unwrap();
        assert!((summary.mean_psnr - summary.baseline_psnr).abs() < 1e-9);
    }
}
