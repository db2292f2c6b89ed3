//! Continuous video process: next-block video prediction as a noisy bridge
//! between consecutive frame blocks.
//!
//! A block `x` of `n` context frames and the block `y` shifted `k` frames
//! forward are joined by
//!
//! ```text
//! x_t = (1 - t) x + t y + (s(t) / sqrt 2) z,    z ~ N(0, I)
//! ```
//!
//! with a noise schedule `s` that vanishes at both ends. A small denoiser
//! learns to predict `y` from `(x_t, t)`, and the sampler walks the bridge
//! from `x` to a prediction of `y`.

pub mod cli;
pub mod config;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod process;
pub mod rng;
pub mod sampling;
pub mod schedule;
pub mod tensor;
pub mod training;
pub mod verify;

pub use config::RunConfig;
pub use denoiser::{Denoiser, DenoiserParams, DenoiserSpec, Predictor};
pub use error::{CvpError, Result};
pub use rng::RngState;
pub use sampling::{rollout, sample_block, RolloutPlan, SamplerConfig};
pub use schedule::NoiseSchedule;
pub use tensor::{FrameBlock, Tensor};
pub use training::{train_loop, TrainConfig};
