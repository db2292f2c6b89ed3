//! Walks one pixel along the bridge from `x` to `y` and shows the noise level
//! and loss weight of every schedule.
//!
//! cargo run --example bridge_process

use cvp::process::{interpolate_bridge, loss_weight, WeightMode};
use cvp::{FrameBlock, NoiseSchedule, Result, RngState};

fn main() -> Result<()> {
    let x = FrameBlock::full(1, 1, 1, 1, 0.2);
    let y = FrameBlock::full(1, 1, 1, 1, 0.8);
    let mut rng = RngState::new(0);
    let z = FrameBlock::new(1, 1, 1, 1, rng.normal_vec(1))?;

    println!("{:<20} {:>6} {:>10} {:>10} {:>12}", "schedule", "t", "s(t)", "x_t", "w(t)");
    for schedule in NoiseSchedule::ALL {
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let x_t = interpolate_bridge(&x, &y, t, &z, schedule)?;
            let w = loss_weight(schedule, t, 1e4, WeightMode::Cvp)?;
            println!(
                "{:<20} {:>6.2} {:>10.6} {:>10.6} {:>12.4}",
                schedule.name(),
                t,
                schedule.base(t)?,
                x_t.data()[0],
                w
            );
        }
    }
    Ok(())
}
