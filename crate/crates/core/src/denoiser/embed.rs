use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};

/// Continuous time is scaled by this before the sinusoids, so `t in [0, 1]`
/// spans the same phase range as an integer step index in `0..1000`.
pub const TIME_BASE_FREQUENCY: f64 = 1000.0;

/// Sinusoidal embedding of a continuous time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding(Vec<f32>);

impl TimeEmbedding {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Entry `2i` is `sin(1000 t w_i)`, entry `2i + 1` is `cos(1000 t w_i)`,
/// with `w_i = 10000^(-2i / dim)`.
pub fn time_embed(t: f64, dim: usize) -> Result<TimeEmbedding> {
    Ok(TimeEmbedding(
        time_embed_f64(t, dim)?.into_iter().map(|v| v as f32).collect(),
    ))
}

pub(crate) fn time_embed_f64(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(CvpError::InvalidArgument(format!(
            "time embedding dimension must be even and >= 2, got {dim}"
        )));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let phase = t * TIME_BASE_FREQUENCY * freq;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}
