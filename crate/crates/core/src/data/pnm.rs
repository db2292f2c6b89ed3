//! Binary PGM (`P5`) / PPM (`P6`) frame export and import.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};
use crate::tensor::FrameBlock;

use super::VideoSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PnmFormat {
    Pgm,
    Ppm,
}

impl PnmFormat {
    pub fn for_channels(c: usize) -> Result<Self> {
        match c {
            1 => Ok(PnmFormat::Pgm),
            3 => Ok(PnmFormat::Ppm),
            other => Err(CvpError::InvalidArgument(format!(
                "PGM/PPM export supports 1 or 3 channels, got {other}"
            ))),
        }
    }

    fn channels(self) -> usize {
        match self {
            PnmFormat::Pgm => 1,
            PnmFormat::Ppm => 3,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            PnmFormat::Pgm => "pgm",
            PnmFormat::Ppm => "ppm",
        }
    }
}

impl FromStr for PnmFormat {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(PnmFormat::Pgm),
            "ppm" => Ok(PnmFormat::Ppm),
            other => Err(CvpError::InvalidArgument(format!("unknown image format {other:?}"))),
        }
    }
}

/// `round(255 * clamp(v, 0, 1))`, halves rounded up.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) } as f64;
    (255.0 * v + 0.5).floor() as u8
}

/// Encodes one `(c, h, w)` frame.
pub fn encode_pnm(frame: &[f32], c: usize, h: usize, w: usize) -> Result<Vec<u8>> {
    let format = PnmFormat::for_channels(c)?;
    if frame.len() != c * h * w {
        return Err(CvpError::shape(&[c, h, w], &[frame.len()]));
    }
    let magic = match format {
        PnmFormat::Pgm => "P5",
        PnmFormat::Ppm => "P6",
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let hw = h * w;
    out.reserve(c * hw);
    for p in 0..hw {
        for ch in 0..c {
            out.push(quantize(frame[ch * hw + p]));
        }
    }
    Ok(out)
}

/// Writes one file per frame as `dir/NNNNN.{pgm,ppm}`.
pub fn export_frames(block: &FrameBlock, dir: impl AsRef<Path>, format: PnmFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if block.c() != format.channels() {
        return Err(CvpError::InvalidArgument(format!(
            "{} export needs {} channel(s), block has {}",
            format.extension(),
            format.channels(),
            block.c()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| CvpError::io(dir, e))?;
    let mut paths = Vec::with_capacity(block.n());
    for i in 0..block.n() {
        let bytes = encode_pnm(block.frame(i), block.c(), block.h(), block.w())?;
        let path = dir.join(format!("{i:05}.{}", format.extension()));
        fs::write(&path, bytes).map_err(|e| CvpError::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(CvpError::Malformed {
            path: path.into(),
            reason: "unexpected end of header".into(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| CvpError::Malformed {
        path: path.into(),
        reason: "non-ASCII header".into(),
    })
}

/// Decodes a binary 8-bit PGM/PPM into `(c, h, w)` values in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bad = |reason: String| CvpError::Malformed {
        path: path.into(),
        reason,
    };
    let mut pos = 0;
    let c = match header_token(bytes, &mut pos, path)? {
        "P5" => 1,
        "P6" => 3,
        other => return Err(bad(format!("unsupported magic {other:?}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos, path)?
            .parse::<usize>()
            .map_err(|_| bad(format!("bad {what}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(bad(format!("only maxval 255 is supported, got {maxval}")));
    }
    let payload = &bytes[(pos + 1).min(bytes.len())..];
    if payload.len() != c * h * w {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            c * h * w
        )));
    }
    let hw = h * w;
    let mut data = vec![0.0f32; c * hw];
    for p in 0..hw {
        for ch in 0..c {
            data[ch * hw + p] = payload[p * c + ch] as f32 / 255.0;
        }
    }
    Ok((c, h, w, data))
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CvpError::io(path, e))?;
    decode_pnm(&bytes, path)
}

/// Loads every `.pgm`/`.ppm` in `dir`, sorted by file name, as one sequence.
pub fn load_frame_dir(dir: impl AsRef<Path>) -> Result<VideoSequence> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CvpError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    files.sort();
    let mut dims = None;
    let mut data = Vec::new();
    for f in &files {
        let (c, h, w, frame) = read_pnm(f)?;
        match dims {
            None => dims = Some((c, h, w)),
            Some(d) if d != (c, h, w) => {
                return Err(CvpError::Malformed {
                    path: f.clone(),
                    reason: format!("frame size {:?} differs from {:?}", (c, h, w), d),
                })
            }
            _ => {}
        }
        data.extend(frame);
    }
    let (c, h, w) = dims.ok_or_else(|| CvpError::InvalidArgument(format!("no frames in {}", dir.display())))?;
    VideoSequence::new(FrameBlock::new(files.len(), c, h, w, data)?, "frame_dir", 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_fixtures() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn zero_and_one_frames() {
        let zeros = encode_pnm(&[0.0; 12], 1, 3, 4).unwrap();
        assert_eq!(&zeros[..11], b"P5\n4 3\n255\n");
        assert!(zeros[11..].iter().all(|&b| b == 0));
        assert_eq!(zeros.len(), 11 + 12);
        let ones = encode_pnm(&[1.0; 12], 1, 3, 4).unwrap();
        assert!(ones[11..].iter().all(|&b| b == 0xFF));
    }

    #[test]
    fn ppm_interleaves_channels() {
        // one pixel, planar (r, g, b) -> interleaved payload
        let bytes = encode_pnm(&[1.0, 0.0, 0.5], 3, 1, 1).unwrap();
        assert_eq!(&bytes[..11], b"P6\n1 1\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 128]);
    }

    #[test]
    fn unsupported_channels() {
        assert!(encode_pnm(&[0.0; 8], 2, 2, 2).is_err());
        let b = FrameBlock::zeros(1, 2, 2, 2);
        let dir = tempfile::tempdir().unwrap();
        assert!(export_frames(&b, dir.path(), PnmFormat::Pgm).is_err());
    }

    #[test]
    fn export_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 3 * 4 * 5).map(|i| (i % 256) as f32 / 255.0).collect();
        let block = FrameBlock::new(3, 3, 4, 5, data).unwrap();
        let paths = export_frames(&block, dir.path(), PnmFormat::Ppm).unwrap();
        assert_eq!(paths[2].file_name().unwrap(), "00002.ppm");
        let seq = load_frame_dir(dir.path()).unwrap();
        assert_eq!(seq.frames.shape(), block.shape());
        assert!(seq.frames.max_abs_diff(&block).unwrap() < 1e-6);
    }

    #[test]
    fn decoder_handles_comments() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        let (c, h, w, data) = decode_pnm(bytes, Path::new("inline")).unwrap();
        assert_eq!((c, h, w), (1, 1, 2));
        assert_eq!(data, vec![0.0, 1.0]);
        assert!(decode_pnm(b"P5\n2 1\n255\n\x00", Path::new("short")).is_err());
    }
}
