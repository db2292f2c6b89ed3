//! Generates the three synthetic clips, writes them as tensor files and PGM
//! frames, and reads them back.
//!
//! cargo run --example video_io [out_dir]

use std::path::PathBuf;

use cvp::data::{export_frames, generate_synthetic, load_frame_dir, read_video, write_video, PnmFormat, SyntheticKind};
use cvp::Result;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cvp_video_io"));
    for kind in [SyntheticKind::BouncingBall, SyntheticKind::StochasticBall, SyntheticKind::MovingBar] {
        let video = generate_synthetic(kind, 24, 32, 32, 7)?;
        let dir = out.join(kind.name());
        let path = dir.join("video.cvpt");
        write_video(&path, &video)?;
        let frames = export_frames(&video.frames, dir.join("frames"), PnmFormat::for_channels(1)?)?;

        let back = read_video(&path)?;
        let from_pgm = load_frame_dir(dir.join("frames"))?;
        let max_err = from_pgm.frames.max_abs_diff(&video.frames)?;
        println!(
            "{:<16} {} frames, tensor roundtrip exact: {}, pgm max error {:.4} ({} files)",
            kind.name(),
            video.len(),
            back.frames == video.frames,
            max_err,
            frames.len()
        );
    }
    println!("written under {}", out.display());
    Ok(())
}
