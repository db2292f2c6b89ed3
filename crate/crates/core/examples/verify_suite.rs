//! Runs a reduced derivation-check suite, then the same suite with a flipped
//! gradient sign to show that the gradient check catches it.
//!
//! cargo run --release --example verify_suite

use cvp::verify::{run_suite, Fault, SuiteOptions};
use cvp::Result;

fn main() -> Result<()> {
    let options = SuiteOptions {
        only: ["endpoints", "schedules", "telescoping", "increment", "kl", "bound"]
            .map(String::from)
            .to_vec(),
        mc_samples: 20_000,
        ..Default::default()
    };
    let report = run_suite(&options)?;
    println!("{report}\n");

    let faulty = SuiteOptions {
        only: vec!["gradcheck".into()],
        fault: Some(Fault::GradSign),
        ..Default::default()
    };
    let report = run_suite(&faulty)?;
    for c in report.failures() {
        println!("caught: {}/{}: {}", c.group, c.name, c.detail);
    }
    Ok(())
}
