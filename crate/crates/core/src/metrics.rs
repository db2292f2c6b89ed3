//! Frame-quality metrics: MSE, PSNR, SSIM and best-of-K aggregation.
//!
//! Frames are compared as raw `[0, 1]` values with peak `L = 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CvpError, Result};
use crate::tensor::FrameBlock;

/// PSNR reported when the MSE underflows.
pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CvpError::shape(&[a.len()], &[b.len()]));
    }
    if a.is_empty() {
        return Err(CvpError::InvalidArgument("cannot score empty frames".into()));
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    same_len(a, b)?;
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let src = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = g.iter().zip(&src[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (k, &gk) in g.iter().enumerate() {
            let src = &rows[(r + k) * ow..(r + k + 1) * ow];
            for (o, &s) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += gk * s;
            }
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect()
    };
    let mu_a = filter_valid(a, h, w, g);
    let mu_b = filter_valid(b, h, w, g);
    let aa = filter_valid(&prod(&|p, _| p * p), h, w, g);
    let bb = filter_valid(&prod(&|_, q| q * q), h, w, g);
    let ab = filter_valid(&prod(&|p, q| p * q), h, w, g);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / mu_a.len() as f64
}

/// Mean SSIM of one `(c, h, w)` frame, averaged over channels and valid
/// window positions.
pub fn ssim(a: &[f32], b: &[f32], c: usize, h: usize, w: usize) -> Result<f64> {
    same_len(a, b)?;
    if a.len() != c * h * w {
        return Err(CvpError::shape(&[c, h, w], &[a.len()]));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CvpError::InvalidArgument(format!(
            "frame {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window();
    let plane = h * w;
    let total: f64 = (0..c)
        .map(|ch| {
            let pa: Vec<f64> = a[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
            let pb: Vec<f64> = b[ch * plane..(ch + 1) * plane].iter().map(|&v| v as f64).collect();
            ssim_plane(&pa, &pb, h, w, &g)
        })
        .sum();
    Ok(total / c as f64)
}

/// Per-frame scores of one predicted sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    pub mse: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_mse: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn score_sequence(truth: &FrameBlock, pred: &FrameBlock) -> Result<SequenceScores> {
    truth.ensure_same_shape(pred)?;
    let (c, h, w) = (truth.c(), truth.h(), truth.w());
    let mut s = SequenceScores {
        mse: Vec::with_capacity(truth.n()),
        psnr: Vec::with_capacity(truth.n()),
        ssim: Vec::with_capacity(truth.n()),
        mean_mse: 0.0,
        mean_psnr: 0.0,
        mean_ssim: 0.0,
    };
    for f in 0..truth.n() {
        let m = mse(truth.frame(f), pred.frame(f))?;
        s.mse.push(m);
        s.psnr.push(psnr_from_mse(m, 1.0));
        s.ssim.push(ssim(truth.frame(f), pred.frame(f), c, h, w)?);
    }
    s.mean_mse = mean(&s.mse);
    s.mean_psnr = mean(&s.psnr);
    s.mean_ssim = mean(&s.ssim);
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SequenceScores>,
    /// Highest per-sequence mean PSNR over the samples.
    pub best_of_k_psnr: f64,
    pub best_sample: usize,
    pub mean_mse: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Scores `K >= 1` predicted sequences against the same ground truth.
pub fn evaluate_prediction(truth: &FrameBlock, samples: &[FrameBlock]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(CvpError::InvalidArgument("need at least one sample".into()));
    }
    let scored = samples
        .iter()
        .map(|s| score_sequence(truth, s))
        .collect::<Result<Vec<_>>>()?;
    let (best_sample, best) = scored
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, s)| {
            if s.mean_psnr > acc.1 {
                (i, s.mean_psnr)
            } else {
                acc
            }
        });
    let k = scored.len() as f64;
    Ok(EvalReport {
        best_of_k_psnr: best,
        best_sample,
        mean_mse: scored.iter().map(|s| s.mean_mse).sum::<f64>() / k,
        mean_psnr: scored.iter().map(|s| s.mean_psnr).sum::<f64>() / k,
        mean_ssim: scored.iter().map(|s| s.mean_ssim).sum::<f64>() / k,
        samples: scored,
    })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,frame,mse,psnr,ssim\n");
        for (i, s) in self.samples.iter().enumerate() {
            for f in 0..s.mse.len() {
                let _ = writeln!(out, "{i},{f},{:e},{:e},{:e}", s.mse[f], s.psnr[f], s.ssim[f]);
            }
        }
        out
    }

    /// Writes `report.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CvpError::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| CvpError::io(&json, e))?;
        let csv = dir.join("metrics.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| CvpError::io(&csv, e))
    }
}

/// Baseline predictor: repeats the last context frame `count` times.
pub fn copy_last_frame(context: &FrameBlock, count: usize) -> Result<FrameBlock> {
    let last = context.frames(context.n() - 1, 1)?;
    let copies: Vec<&FrameBlock> = std::iter::repeat_n(&last, count).collect();
    FrameBlock::concat(&copies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct 2-D windowed SSIM for a single channel.
    fn ssim_direct(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
        let g = gaussian_window();
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=h - 11 {
            for c in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j];
                        let p = a[(r + i) * w + c + j] as f64;
                        let q = b[(r + i) * w + c + j] as f64;
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn checker(h: usize, w: usize) -> Vec<f32> {
        (0..h * w).map(|i| ((i / w + i % w) % 2) as f32).collect()
    }

    #[test]
    fn mse_examples() {
        let a = vec![0.2f32; 8];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.5);
        assert!(mse(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = vec![0.3f32; 16];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0, 1.0), 0.0);
        assert!(psnr(&[0.0; 2], &[0.0; 3], 1.0).is_err());
    }

    #[test]
    fn window_is_normalised_and_symmetric() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(g[i], g[10 - i]);
        }
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a: Vec<f32> = (0..256).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        assert!((ssim(&a, &a, 1, 16, 16).unwrap() - 1.0).abs() < 1e-12);
        let k = vec![0.4f32; 256];
        assert!((ssim(&k, &k, 1, 16, 16).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_checkerboard_is_negative() {
        let a = checker(16, 16);
        let b: Vec<f32> = a.iter().map(|v| 1.0 - v).collect();
        let s = ssim(&a, &b, 1, 16, 16).unwrap();
        assert!(s < 0.0, "{s}");
        assert!((s - ssim_direct(&a, &b, 16, 16)).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_window() {
        let a: Vec<f32> = (0..20 * 14).map(|i| ((i * 7919) % 257) as f32 / 256.0).collect();
        let b: Vec<f32> = (0..20 * 14).map(|i| ((i * 104729) % 263) as f32 / 262.0).collect();
        let fast = ssim(&a, &b, 1, 20, 14).unwrap();
        assert!((fast - ssim_direct(&a, &b, 20, 14)).abs() < 1e-12);
    }

    #[test]
    fn ssim_averages_channels() {
        let a = checker(12, 12);
        let b: Vec<f32> = a.iter().map(|v| 1.0 - v).collect();
        let mut two_a = a.clone();
        two_a.extend(&a);
        let mut two_b = a.clone();
        two_b.extend(&b);
        let s = ssim(&two_a, &two_b, 2, 12, 12).unwrap();
        let expect = (1.0 + ssim_direct(&a, &b, 12, 12)) / 2.0;
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = vec![0.0f32; 100];
        assert!(ssim(&a, &a, 1, 10, 10).is_err());
    }

    fn seq(values: &[f32]) -> FrameBlock {
        let data = values.iter().flat_map(|&v| checker(12, 12).into_iter().map(move |c| c * v)).collect();
        FrameBlock::new(values.len(), 1, 12, 12, data).unwrap()
    }

    #[test]
    fn best_of_k_behaviour() {
        let truth = seq(&[0.9, 0.8, 0.7]);
        let a = seq(&[0.5, 0.5, 0.5]);
        let b = seq(&[0.8, 0.8, 0.8]);
        let one = evaluate_prediction(&truth, std::slice::from_ref(&a)).unwrap();
        assert_eq!(one.best_of_k_psnr, one.samples[0].mean_psnr);
        let two = evaluate_prediction(&truth, &[a.clone(), b.clone()]).unwrap();
        assert!(two.best_of_k_psnr >= one.best_of_k_psnr);
        assert_eq!(two.best_sample, 1);
        let with_truth = evaluate_prediction(&truth, &[a, truth.clone(), b]).unwrap();
        assert_eq!(with_truth.best_of_k_psnr, PSNR_CAP);
        assert!(evaluate_prediction(&truth, &[]).is_err());
        assert!(evaluate_prediction(&truth, &[seq(&[0.1])]).is_err());
    }

    #[test]
    fn report_files() {
        let truth = seq(&[0.9, 0.8]);
        let r = evaluate_prediction(&truth, &[seq(&[0.5, 0.5])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let back: EvalReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn copy_last_repeats_final_frame() {
        let ctx = seq(&[0.2, 0.6]);
        let b = copy_last_frame(&ctx, 3).unwrap();
        assert_eq!(b.n(), 3);
        for f in 0..3 {
            assert_eq!(b.frame(f), ctx.frame(1));
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in prop::collection::vec(0f32..=1.0, 144), b in prop::collection::vec(0f32..=1.0, 144)) {
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            let s1 = ssim(&a, &b, 1, 12, 12).unwrap();
            let s2 = ssim(&b, &a, 1, 12, 12).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s1));
        }

        #[test]
        fn psnr_decreasing_in_mse(m1 in 1e-9f64..1.0, m2 in 1e-9f64..1.0) {
            prop_assume!(m1 < m2);
            prop_assert!(psnr_from_mse(m1, 1.0) > psnr_from_mse(m2, 1.0));
        }

        #[test]
        fn best_of_k_is_monotone(vals in prop::collection::vec(0f32..=1.0, 1..6)) {
            let truth = seq(&[0.7, 0.3]);
            let samples: Vec<FrameBlock> = vals.iter().map(|&v| seq(&[v, 1.0 - v])).collect();
            let mut prev = f64::NEG_INFINITY;
            for k in 1..=samples.len() {
                let r = evaluate_prediction(&truth, &samples[..k]).unwrap();
                prop_assert!(r.best_of_k_psnr >= prev);
                prev = r.best_of_k_psnr;
            }
        }
    }
}
