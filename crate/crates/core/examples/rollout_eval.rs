//! Rolls a trained denoiser out on a held-out clip and scores it against the
//! copy-last-frame baseline, deterministically and with K stochastic samples.
//!
//! cargo run --release --example train_bouncing_ball
//! cargo run --release --example rollout_eval [checkpoint_dir]

use std::path::PathBuf;

use cvp::data::{export_frames, generate_synthetic, PnmFormat, SyntheticKind};
use cvp::denoiser::load_checkpoint;
use cvp::eval::{evaluate_starts, spaced_starts};
use cvp::{Result, RolloutPlan, SamplerConfig};

fn main() -> Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cvp_ball_model"));
    let model = load_checkpoint(&dir)?;
    let video = generate_synthetic(SyntheticKind::BouncingBall, 200, 32, 32, 2)?;
    let plan = RolloutPlan {
        context: 2,
        shift: 1,
        predict: 10,
    };
    let starts = spaced_starts(video.len(), plan.context, plan.predict, 8)?;

    for (stochastic, k) in [(false, 1), (true, 4)] {
        let config = SamplerConfig {
            steps: 25,
            stochastic,
            seed: 5,
            ..Default::default()
        };
        let (summary, rollouts) = evaluate_starts(&model, &video.frames, plan, &config, k, &starts)?;
        println!(
            "stochastic={stochastic} K={k}: PSNR {:.2} dB (best-of-K {:.2}), SSIM {:.3}; copy-last {:.2} dB",
            summary.mean_psnr, summary.best_of_k_psnr, summary.mean_ssim, summary.baseline_psnr
        );
        let out = dir.join(format!("rollout_stochastic_{stochastic}"));
        export_frames(&rollouts[0][0], &out, PnmFormat::for_channels(1)?)?;
        println!("  first rollout frames in {}", out.display());
    }
    Ok(())
}
