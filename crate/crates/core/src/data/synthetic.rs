//! Procedural video generators.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};
use crate::rng::RngState;
use crate::tensor::FrameBlock;

/// Per-frame probability that the stochastic ball picks a new heading.
pub const DIRECTION_RESAMPLE_PROB: f64 = 0.1;

pub const MIN_EXTENT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    BouncingBall,
    StochasticBall,
    MovingBar,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::BouncingBall => "bouncing_ball",
            SyntheticKind::StochasticBall => "stochastic_ball",
            SyntheticKind::MovingBar => "moving_bar",
        }
    }
}

impl FromStr for SyntheticKind {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bouncing_ball" => Ok(SyntheticKind::BouncingBall),
            "stochastic_ball" => Ok(SyntheticKind::StochasticBall),
            "moving_bar" => Ok(SyntheticKind::MovingBar),
            other => Err(CvpError::InvalidArgument(format!(
                "unknown synthetic video kind {other:?}"
            ))),
        }
    }
}

/// A clip of `L` frames stored as an `(L, c, h, w)` block in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub frames: FrameBlock,
    pub generator: String,
    pub seed: u64,
}

impl VideoSequence {
    pub fn new(frames: FrameBlock, generator: impl Into<String>, seed: u64) -> Result<Self> {
        if frames.n() < 2 {
            return Err(CvpError::InvalidArgument(format!(
                "a video needs at least 2 frames, got {}",
                frames.n()
            )));
        }
        Ok(Self {
            frames,
            generator: generator.into(),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.n()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Disc centre per frame plus the frames at which the heading was redrawn.
#[derive(Clone, Debug)]
pub struct BallTrack {
    pub radius: f64,
    pub centers: Vec<(f64, f64)>,
    pub resampled: Vec<bool>,
}

fn check_dims(len: usize, h: usize, w: usize) -> Result<()> {
    if len < 2 {
        return Err(CvpError::InvalidArgument(format!(
            "video length must be >= 2, got {len}"
        )));
    }
    if h < MIN_EXTENT || w < MIN_EXTENT {
        return Err(CvpError::InvalidArgument(format!(
            "frame size {h}x{w} below minimum {MIN_EXTENT}x{MIN_EXTENT}"
        )));
    }
    Ok(())
}

/// Reflects `pos` back into `[lo, hi]`, flipping `vel` on each bounce.
fn reflect(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    while *pos < lo || *pos > hi {
        if *pos < lo {
            *pos = 2.0 * lo - *pos;
        } else {
            *pos = 2.0 * hi - *pos;
        }
        *vel = -*vel;
    }
}

/// Trajectory of the ball generators. `stochastic` redraws the heading with
/// probability [`DIRECTION_RESAMPLE_PROB`] before each move.
pub fn ball_track(len: usize, h: usize, w: usize, stochastic: bool, seed: u64) -> Result<BallTrack> {
    check_dims(len, h, w)?;
    let mut rng = RngState::new(seed);
    let scale = h.min(w) as f64 / 32.0;
    let radius = h.min(w) as f64 / 8.0;
    let (xlo, xhi) = (radius, w as f64 - 1.0 - radius);
    let (ylo, yhi) = (radius, h as f64 - 1.0 - radius);

    let mut cx = xlo + rng.uniform() * (xhi - xlo);
    let mut cy = ylo + rng.uniform() * (yhi - ylo);
    let speed = scale * (1.0 + rng.uniform());
    let heading = rng.uniform() * 2.0 * PI;
    let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());

    let mut centers = Vec::with_capacity(len);
    let mut resampled = Vec::with_capacity(len);
    centers.push((cx, cy));
    resampled.push(false);
    for _ in 1..len {
        let redraw = stochastic && rng.bernoulli(DIRECTION_RESAMPLE_PROB);
        if redraw {
            let heading = rng.uniform() * 2.0 * PI;
            vx = speed * heading.cos();
            vy = speed * heading.sin();
        }
        cx += vx;
        cy += vy;
        reflect(&mut cx, &mut vx, xlo, xhi);
        reflect(&mut cy, &mut vy, ylo, yhi);
        centers.push((cx, cy));
        resampled.push(redraw);
    }
    Ok(BallTrack {
        radius,
        centers,
        resampled,
    })
}

fn render_disc(out: &mut [f32], h: usize, w: usize, cx: f64, cy: f64, r: f64) {
    for py in 0..h {
        for px in 0..w {
            let d = ((px as f64 - cx).powi(2) + (py as f64 - cy).powi(2)).sqrt();
            out[py * w + px] = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
        }
    }
}

fn moving_bar(len: usize, h: usize, w: usize, seed: u64) -> Vec<f32> {
    let mut rng = RngState::new(seed);
    let width = (w as f64 / 8.0).max(2.0);
    let speed = (h.min(w) as f64 / 32.0) * (1.0 + rng.uniform());
    let speed = if rng.bernoulli(0.5) { speed } else { -speed };
    let start = rng.uniform() * w as f64;
    let wf = w as f64;
    let mut data = vec![0.0f32; len * h * w];
    for f in 0..len {
        let left = (start + speed * f as f64).rem_euclid(wf);
        let frame = &mut data[f * h * w..(f + 1) * h * w];
        for px in 0..w {
            // coverage of pixel [px, px+1) by the bar, including its wrapped copies
            let cover: f64 = [-wf, 0.0, wf]
                .iter()
                .map(|&shift| {
                    let lo = (left + shift).max(px as f64);
                    let hi = (left + shift + width).min(px as f64 + 1.0);
                    (hi - lo).max(0.0)
                })
                .sum();
            let v = cover.clamp(0.0, 1.0) as f32;
            for py in 0..h {
                frame[py * w + px] = v;
            }
        }
    }
    data
}

/// Single-channel synthetic clip of `len` frames at `h x w`.
pub fn generate_synthetic(
    kind: SyntheticKind,
    len: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<VideoSequence> {
    check_dims(len, h, w)?;
    let data = match kind {
        SyntheticKind::BouncingBall | SyntheticKind::StochasticBall => {
            let track = ball_track(len, h, w, kind == SyntheticKind::StochasticBall, seed)?;
            let mut data = vec![0.0f32; len * h * w];
            for (f, &(cx, cy)) in track.centers.iter().enumerate() {
                render_disc(&mut data[f * h * w..(f + 1) * h * w], h, w, cx, cy, track.radius);
            }
            data
        }
        SyntheticKind::MovingBar => moving_bar(len, h, w, seed),
    };
    VideoSequence::new(FrameBlock::new(len, 1, h, w, data)?, kind.name(), seed)
}
