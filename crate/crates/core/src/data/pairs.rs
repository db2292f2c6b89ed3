use crate::error::{CvpError, Result};
use crate::rng::RngState;
use crate::tensor::FrameBlock;

use super::VideoSequence;

/// A training pair: `x` holds frames `start..start+n`, `y` the same window
/// shifted forward by `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub x: FrameBlock,
    pub y: FrameBlock,
    pub start: usize,
    pub n: usize,
    pub k: usize,
}

pub fn pair_at(seq: &VideoSequence, start: usize, n: usize, k: usize) -> Result<PairSample> {
    if n == 0 || k == 0 {
        return Err(CvpError::InvalidArgument(format!(
            "block length and shift must be positive (n = {n}, k = {k})"
        )));
    }
    if start + n + k > seq.len() {
        return Err(CvpError::InvalidArgument(format!(
            "sequence of {} frames too short for start {start}, n = {n}, k = {k}",
            seq.len()
        )));
    }
    Ok(PairSample {
        x: seq.frames.frames(start, n)?,
        y: seq.frames.frames(start + k, n)?,
        start,
        n,
        k,
    })
}

/// Uniformly chosen start in `0..=L-n-k`.
pub fn sample_pair(seq: &VideoSequence, n: usize, k: usize, rng: &mut RngState) -> Result<PairSample> {
    if n + k > seq.len() {
        return Err(CvpError::InvalidArgument(format!(
            "sequence of {} frames too short for n = {n}, k = {k}",
            seq.len()
        )));
    }
    let start = rng.below(seq.len() - n - k + 1);
    pair_at(seq, start, n, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indexed(len: usize) -> VideoSequence {
        // frame i is filled with the value i
        let data = (0..len).flat_map(|i| std::iter::repeat_n(i as f32, 4)).collect();
        VideoSequence::new(FrameBlock::new(len, 1, 2, 2, data).unwrap(), "indexed", 0).unwrap()
    }

    fn ids(b: &FrameBlock) -> Vec<usize> {
        (0..b.n()).map(|i| b.frame(i)[0] as usize).collect()
    }

    #[test]
    fn adjacent_shift() {
        let p = sample_pair(&indexed(3), 2, 1, &mut RngState::new(0)).unwrap();
        assert_eq!(p.start, 0);
        assert_eq!(ids(&p.x), vec![0, 1]);
        assert_eq!(ids(&p.y), vec![1, 2]);
    }

    #[test]
    fn two_frame_shift() {
        let p = sample_pair(&indexed(4), 2, 2, &mut RngState::new(0)).unwrap();
        assert_eq!(ids(&p.x), vec![0, 1]);
        assert_eq!(ids(&p.y), vec![2, 3]);
    }

    #[test]
    fn shift_law_holds_for_every_draw() {
        let seq = indexed(40);
        let mut rng = RngState::new(1);
        let mut starts = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            for (n, k) in [(1, 1), (3, 1), (3, 3), (4, 2)] {
                let p = sample_pair(&seq, n, k, &mut rng).unwrap();
                let xs = ids(&p.x);
                let ys = ids(&p.y);
                assert!(xs.iter().zip(&ys).all(|(a, b)| b - a == k));
                assert_eq!(xs[0], p.start);
                if (n, k) == (3, 3) {
                    assert!(xs.iter().all(|i| !ys.contains(i)));
                }
                if (n, k) == (4, 2) {
                    starts.insert(p.start);
                }
            }
        }
        assert_eq!(starts.len(), 40 - 4 - 2 + 1);
    }

    #[test]
    fn too_short_sequence() {
        assert!(sample_pair(&indexed(3), 2, 2, &mut RngState::new(0)).is_err());
        assert!(pair_at(&indexed(5), 3, 2, 1).is_err());
    }
}
