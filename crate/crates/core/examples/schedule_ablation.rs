//! Compares how much noise the sampler injects under each schedule and step
//! count, in closed form and by Monte Carlo on a scalar process.
//!
//! cargo run --release --example schedule_ablation

use cvp::verify::verify_sampler_noise;
use cvp::{NoiseSchedule, Result, RngState, SamplerConfig};

fn main() -> Result<()> {
    println!("{:<20} {:>5} {:>12} {:>12}", "schedule", "N", "closed form", "empirical");
    for schedule in NoiseSchedule::ALL {
        for steps in [5, 25] {
            let config = SamplerConfig {
                steps,
                schedule,
                ..Default::default()
            };
            let report = verify_sampler_noise(&config, 4000, &mut RngState::new(3))?;
            println!(
                "{:<20} {:>5} {:>12.6} {:>12.6}",
                schedule.name(),
                steps,
                report.expected,
                report.empirical
            );
        }
    }
    Ok(())
}
