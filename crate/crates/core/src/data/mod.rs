//! Synthetic clips, training pairs and file formats.

mod pairs;
mod pnm;
mod synthetic;
mod tensor_file;

pub use pairs::{pair_at, sample_pair, PairSample};
pub use pnm::{
    decode_pnm, encode_pnm, export_frames, load_frame_dir, quantize, read_pnm, PnmFormat,
};
pub use synthetic::{
    ball_track, generate_synthetic, BallTrack, SyntheticKind, VideoSequence,
    DIRECTION_RESAMPLE_PROB, MIN_EXTENT,
};
pub use tensor_file::{
    decode_tensor, encode_tensor, read_tensor, write_tensor, DTYPE_F32_LE, MAGIC, VERSION,
};

use std::path::Path;

use crate::error::Result;
use crate::tensor::FrameBlock;

pub fn write_video(path: impl AsRef<Path>, video: &VideoSequence) -> Result<()> {
    write_tensor(path, video.frames.tensor())
}

pub fn read_video(path: impl AsRef<Path>) -> Result<VideoSequence> {
    let frames = FrameBlock::from_tensor(read_tensor(path)?)?;
    VideoSequence::new(frames, "file", 0)
}
