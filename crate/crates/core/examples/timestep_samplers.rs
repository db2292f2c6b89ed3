//! Draws training times from each sampler and compares the empirical CDF
//! with its continuous law (`s^2` for sqrt_uniform, `s` otherwise). The
//! discrete grid is expected to fail the uniform KS bound.
//!
//! cargo run --example timestep_samplers

use cvp::schedule::{SamplerKind, TimestepSampler, DEFAULT_CLAMP};
use cvp::verify::{ks_critical, ks_statistic};
use cvp::{Result, RngState};

fn main() -> Result<()> {
    let n = 100_000;
    let root = RngState::new(1);
    for (i, kind) in [SamplerKind::SqrtUniform, SamplerKind::Uniform, SamplerKind::DiscreteGrid].into_iter().enumerate() {
        let sampler = TimestepSampler::new(kind, DEFAULT_CLAMP, 100)?;
        let mut rng = root.fork(i as u64);
        let draws: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let law: fn(f64) -> f64 = match kind {
            SamplerKind::SqrtUniform => |s| s * s,
            _ => |s| s,
        };
        let d = ks_statistic(&draws, law);
        println!(
            "{:<14} mean {:.4}  KS {:.5} (1% critical {:.5})",
            format!("{kind:?}"),
            mean,
            d,
            ks_critical(n, 0.01)
        );
    }
    Ok(())
}
