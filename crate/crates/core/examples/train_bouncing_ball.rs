//! Trains the small convolutional denoiser on a bouncing-ball clip and saves
//! a checkpoint.
//!
//! cargo run --release --example train_bouncing_ball [steps] [out_dir]

use std::path::PathBuf;

use cvp::data::{generate_synthetic, SyntheticKind};
use cvp::denoiser::save_checkpoint;
use cvp::{train_loop, Denoiser, DenoiserSpec, Result, TrainConfig};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cvp_ball_model"));

    let video = generate_synthetic(SyntheticKind::BouncingBall, 1000, 32, 32, 0)?;
    let spec = DenoiserSpec::conv_small(2, 1, 32, 32);
    let config = TrainConfig {
        steps,
        warmup: 200.min(steps / 2),
        log_every: (steps / 10).max(1),
        ..TrainConfig::desk()
    };
    println!("{} parameters, {steps} steps", spec.num_params());
    let outcome = train_loop(&config, &[video], &spec, |_, _| Ok(()))?;
    for row in &outcome.log {
        println!("step {:>5}  loss {:.5}  lr {:.2e}", row.step, row.loss, row.lr);
    }
    save_checkpoint(&out, &Denoiser::new(spec, outcome.params)?)?;
    println!("checkpoint: {}", out.display());
    Ok(())
}
