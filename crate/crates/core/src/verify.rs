//! Statistical and numerical self-checks of the process, the denoiser
//! gradients and the sampler.
//!
//! [`run_suite`] bundles everything into named groups so the command line can
//! run all of them or a subset.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::denoiser::{
    denoiser_forward, grad_check_with, init_params, DenoiserParams, DenoiserSpec, GradFault,
};
use crate::error::{CvpError, Result};
use crate::process::{
    forward_increment, interpolate_bridge, kl_isotropic_f64, loss_weight, posterior_mean_f64,
    WeightMode,
};
use crate::rng::RngState;
use crate::sampling::{sample_block, SamplerConfig};
use crate::schedule::{NoiseSchedule, SamplerKind, TimestepSampler, DEFAULT_CLAMP};
use crate::tensor::{FrameBlock, Tensor};
use crate::training::{loss_grad_check, Objective};

pub const MIN_MC_SAMPLES: usize = 10_000;
pub const GRAD_TOL: f64 = 1e-4;
pub const STD_REL_TOL: f64 = 0.02;
pub const BOUND_TOL: f64 = 1e-6;
pub const TELESCOPE_TOL: f32 = 1e-5;
pub const NOISE_VAR_REL_TOL: f64 = 0.05;

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_MC_SAMPLES {
        return Err(CvpError::InvalidArgument(format!(
            "need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {n}"
        )));
    }
    Ok(())
}

/// Empirical law of `x_{t+dt} - x_t` for independently drawn bridge noises.
#[derive(Clone, Debug, Serialize)]
pub struct IncrementReport {
    pub schedule: NoiseSchedule,
    pub t: f64,
    pub dt: f64,
    pub n_samples: usize,
    pub target_mean: Vec<f64>,
    pub empirical_mean: Vec<f64>,
    pub empirical_std: Vec<f64>,
    /// `s(t)`.
    pub target_std: f64,
    /// Mean of `increment - target_mean` pooled over samples and elements.
    pub pooled_mean_error: f64,
    pub mean_se: f64,
    pub pooled_std: f64,
    /// Std of the increment between two independent marginals of the bridge,
    /// `sqrt((s(t)^2 + s(t+dt)^2) / 2)`, for reference.
    pub bridge_std: f64,
    pub mean_ok: bool,
    pub std_ok: bool,
}

impl IncrementReport {
    pub fn passed(&self) -> bool {
        self.mean_ok && self.std_ok
    }
}

/// Draws `n_samples` pairs `(z_t, z_{t+dt})` and forms
/// `x_{t+dt} - x_t = (y - x) dt + s(t)/sqrt(2) (z_{t+dt} - z_t)`,
/// whose std is `s(t)`.
///
/// The mean passes within 3 standard errors of `(y - x) dt`; the std within
/// 2% of `s(t)`. For a zero schedule both must hold to `1e-6` absolute.
pub fn verify_increment_stats(
    x: &FrameBlock,
    y: &FrameBlock,
    t: f64,
    dt: f64,
    n_samples: usize,
    schedule: NoiseSchedule,
    rng: &mut RngState,
) -> Result<IncrementReport> {
    x.ensure_same_shape(y)?;
    check_samples(n_samples)?;
    if !(t > 0.0 && dt > 0.0 && t + dt < 1.0) {
        return Err(CvpError::Domain(format!("need 0 < t < t + dt < 1, got t = {t}, dt = {dt}")));
    }
    let s = schedule.base(t)?;
    let coef = s / 2f64.sqrt();
    let t2 = t + dt;
    let d = x.len();
    let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let ys: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
    let target_mean: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| (b - a) * dt).collect();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for _ in 0..n_samples {
        for e in 0..d {
            let (z1, z2) = (rng.normal(), rng.normal());
            let at_t = (1.0 - t) * xs[e] + t * ys[e] + coef * z1;
            let at_t2 = (1.0 - t2) * xs[e] + t2 * ys[e] + coef * z2;
            let r = (at_t2 - at_t) - target_mean[e];
            sum[e] += r;
            sum_sq[e] += r * r;
        }
    }
    let n = n_samples as f64;
    let empirical_mean: Vec<f64> = sum.iter().zip(&target_mean).map(|(s, m)| s / n + m).collect();
    let empirical_std: Vec<f64> = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| (q / n - (s / n).powi(2)).max(0.0).sqrt())
        .collect();
    let total = n * d as f64;
    let pooled_mean_error = sum.iter().sum::<f64>() / total;
    let pooled_std = (sum_sq.iter().sum::<f64>() / total - pooled_mean_error.powi(2))
        .max(0.0)
        .sqrt();
    let mean_se = pooled_std / total.sqrt();
    let s2 = schedule.base(t2)?;
    let (mean_ok, std_ok) = if s == 0.0 {
        (pooled_mean_error.abs() <= 1e-6, pooled_std <= 1e-6)
    } else {
        (
            pooled_mean_error.abs() <= 3.0 * mean_se,
            (pooled_std - s).abs() <= STD_REL_TOL * s,
        )
    };
    Ok(IncrementReport {
        schedule,
        t,
        dt,
        n_samples,
        target_mean,
        empirical_mean,
        empirical_std,
        target_std: s,
        pooled_mean_error,
        mean_se,
        pooled_std,
        bridge_std: ((s * s + s2 * s2) / 2.0).sqrt(),
        mean_ok,
        std_ok,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct KlReport {
    pub closed_form: f64,
    pub estimate: f64,
    pub se: f64,
    pub n_samples: usize,
    pub passed: bool,
}

/// Monte Carlo estimate of `KL(N(mu_a, sigma^2 I) || N(mu_b, sigma^2 I))` as
/// the mean log-density ratio under draws from the first Gaussian.
pub fn verify_kl_mc(
    mu_a: &Tensor,
    mu_b: &Tensor,
    sigma: f64,
    n_samples: usize,
    rng: &mut RngState,
) -> Result<KlReport> {
    mu_a.ensure_same_shape(mu_b)?;
    check_samples(n_samples)?;
    let a: Vec<f64> = mu_a.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = mu_b.data().iter().map(|&v| v as f64).collect();
    let closed_form = kl_isotropic_f64(&a, &b, sigma)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let mut log_ratio = 0.0;
        for (&ma, &mb) in a.iter().zip(&b) {
            let u = ma + sigma * rng.normal();
            log_ratio += ((u - mb).powi(2) - (u - ma).powi(2)) * inv;
        }
        sum += log_ratio;
        sum_sq += log_ratio * log_ratio;
    }
    let n = n_samples as f64;
    let estimate = sum / n;
    let var = (sum_sq / n - estimate * estimate).max(0.0) * n / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(KlReport {
        closed_form,
        estimate,
        se,
        n_samples,
        passed: (estimate - closed_form).abs() <= 3.0 * se,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub t: f64,
    pub dt: f64,
    pub kl: [f64; 2],
    pub weighted_sq: [f64; 2],
    /// `KL_1 - KL_2`.
    pub kl_diff: f64,
    /// `dt * (w |y - ŷ_1|^2 - w |y - ŷ_2|^2)`.
    pub loss_diff: f64,
    pub passed: bool,
}

/// Compares the KL between the forward posterior and the model transition for
/// two parameter settings with the weighted regression loss they imply.
///
/// Both transitions share `x_t`, `t`, `dt` and the std `s(t) sqrt(dt)`, so the
/// KL is `dt w(t) |y - ŷ|^2` with the uncapped weight `w = 1 / (2 s(t)^2)` and
/// the difference between the two settings must agree to `1e-6`.
#[allow(clippy::too_many_arguments)]
pub fn verify_bound_reduction(
    spec: &DenoiserSpec,
    theta: [&DenoiserParams; 2],
    x: &FrameBlock,
    y: &FrameBlock,
    x_t: &FrameBlock,
    t: f64,
    dt: f64,
    schedule: NoiseSchedule,
) -> Result<BoundReport> {
    let s = schedule.base(t)?;
    if s == 0.0 {
        return Err(CvpError::Domain(format!("schedule {schedule} has no noise at t = {t}")));
    }
    let sigma = s * dt.sqrt();
    let w = loss_weight(schedule, t, f64::INFINITY, WeightMode::Cvp)?;
    let q_mean = posterior_mean_f64(x_t.data(), x.data(), y.data(), dt);
    let mut kl = [0.0; 2];
    let mut weighted_sq = [0.0; 2];
    for (i, p) in theta.iter().enumerate() {
        let (pred, _) = denoiser_forward(p, spec, x_t, t)?;
        let p_mean = posterior_mean_f64(x_t.data(), x.data(), pred.data(), dt);
        kl[i] = kl_isotropic_f64(&q_mean, &p_mean, sigma)?;
        weighted_sq[i] = w * pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>();
    }
    let kl_diff = kl[0] - kl[1];
    let loss_diff = dt * (weighted_sq[0] - weighted_sq[1]);
    Ok(BoundReport {
        t,
        dt,
        kl,
        weighted_sq,
        kl_diff,
        loss_diff,
        passed: (kl_diff - loss_diff).abs() <= BOUND_TOL,
    })
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and
/// `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample critical value `sqrt(-ln(alpha / 2) / 2) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct SamplerLawReport {
    pub n_samples: usize,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub ks_ok: bool,
    pub sqrt_mean: f64,
    pub sqrt_below_half: f64,
    pub uniform_mean: f64,
    pub uniform_se: f64,
    pub uniform_ok: bool,
}

/// KS test of the default `sqrt_uniform` sampler against `F(s) = s^2` at the
/// 1% level and a 3-SE check of the uniform sampler's mean.
pub fn verify_timestep_laws(n_samples: usize, rng: &mut RngState) -> Result<SamplerLawReport> {
    check_samples(n_samples)?;
    let sqrt = TimestepSampler::new(SamplerKind::SqrtUniform, DEFAULT_CLAMP, 2)?;
    let uniform = TimestepSampler::new(SamplerKind::Uniform, DEFAULT_CLAMP, 2)?;
    let draws: Vec<f64> = (0..n_samples).map(|_| sqrt.sample(rng)).collect();
    let d = ks_statistic(&draws, |s| s * s);
    let crit = ks_critical(n_samples, 0.01);
    let u: Vec<f64> = (0..n_samples).map(|_| uniform.sample(rng)).collect();
    let n = n_samples as f64;
    let um = u.iter().sum::<f64>() / n;
    let uvar = u.iter().map(|v| (v - um).powi(2)).sum::<f64>() / (n - 1.0);
    let u_se = (uvar / n).sqrt();
    Ok(SamplerLawReport {
        n_samples,
        ks_statistic: d,
        ks_critical: crit,
        ks_ok: d < crit,
        sqrt_mean: draws.iter().sum::<f64>() / n,
        sqrt_below_half: draws.iter().filter(|&&v| v <= 0.5).count() as f64 / n,
        uniform_mean: um,
        uniform_se: u_se,
        uniform_ok: (um - 0.5).abs() <= 3.0 * u_se,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseVarianceReport {
    pub steps: usize,
    pub rollouts: usize,
    pub expected: f64,
    pub empirical: f64,
    pub rel_err: f64,
    pub passed: bool,
}

/// Runs `rollouts` stochastic samples of a scalar process under a
/// truth-returning predictor and compares `Var(output - y)` with
/// `sum_{i >= 2} s(t_i)^2 d`.
pub fn verify_sampler_noise(
    config: &SamplerConfig,
    rollouts: usize,
    rng: &mut RngState,
) -> Result<NoiseVarianceReport> {
    let x = FrameBlock::full(1, 1, 1, 1, 0.2);
    let y = FrameBlock::full(1, 1, 1, 1, 0.7);
    let oracle = |_: &FrameBlock, _: f64| Ok(y.clone());
    let config = SamplerConfig {
        stochastic: true,
        ..config.clone()
    };
    let mut diffs = Vec::with_capacity(rollouts);
    for _ in 0..rollouts {
        let out = sample_block(&x, &oracle, &config, rng)?;
        diffs.push(out.data()[0] as f64 - 0.7);
    }
    let n = rollouts as f64;
    let m = diffs.iter().sum::<f64>() / n;
    let empirical = diffs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = config.injected_variance()?;
    let rel_err = (empirical - expected).abs() / expected;
    Ok(NoiseVarianceReport {
        steps: config.steps,
        rollouts,
        expected,
        empirical,
        rel_err,
        passed: rel_err <= NOISE_VAR_REL_TOL,
    })
}

/// Deliberate defects for exercising the suite's failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negates the denoiser's backward pass.
    GradSign,
}

impl FromStr for Fault {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad_sign" => Ok(Fault::GradSign),
            other => Err(CvpError::InvalidArgument(format!("unknown fault {other:?}"))),
        }
    }
}

pub const GROUPS: [&str; 9] = [
    "endpoints",
    "schedules",
    "telescoping",
    "gradcheck",
    "increment",
    "kl",
    "sampler",
    "oracle",
    "bound",
];

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Groups to run; empty means all.
    pub only: Vec<String>,
    pub fault: Option<Fault>,
    pub mc_samples: usize,
    pub rollouts: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            only: Vec::new(),
            fault: None,
            mc_samples: 100_000,
            rollouts: 10_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, group: &'static str, name: impl Into<String>, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            group,
            name: name.into(),
            passed,
            detail,
        });
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark} {}/{}: {}", c.group, c.name, c.detail)?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

fn random_block(n: usize, c: usize, h: usize, w: usize, rng: &mut RngState) -> FrameBlock {
    let data = (0..n * c * h * w).map(|_| rng.uniform_f32()).collect();
    FrameBlock::new(n, c, h, w, data).expect("positive extents")
}

/// Small specs on which the gradient checks run.
pub fn gradcheck_specs() -> Vec<(&'static str, DenoiserSpec)> {
    vec![
        (
            "conv_small_toy",
            DenoiserSpec {
                hidden: 8,
                time_dim: 8,
                ..DenoiserSpec::conv_small(2, 1, 8, 8)
            },
        ),
        ("conv_small", DenoiserSpec::conv_small(2, 1, 8, 8)),
        ("mlp", DenoiserSpec::mlp(2, 1, 4, 4)),
    ]
}

fn group_endpoints(report: &mut SuiteReport, rng: &mut RngState) -> Result<()> {
    for schedule in NoiseSchedule::ALL {
        let x = random_block(2, 1, 4, 4, rng);
        let y = random_block(2, 1, 4, 4, rng);
        let z = FrameBlock::new(2, 1, 4, 4, rng.normal_vec(32))?;
        let at0 = interpolate_bridge(&x, &y, 0.0, &z, schedule)?;
        let at1 = interpolate_bridge(&x, &y, 1.0, &z, schedule)?;
        let ok = at0 == x && at1 == y;
        report.push("endpoints", schedule.name(), ok, format!("x_0 == x: {}, x_1 == y: {}", at0 == x, at1 == y));
    }
    Ok(())
}

fn group_schedules(report: &mut SuiteReport) -> Result<()> {
    for schedule in NoiseSchedule::ALL {
        let (a, b) = (schedule.base(0.0)?, schedule.base(1.0)?);
        report.push("schedules", schedule.name(), a == 0.0 && b == 0.0, format!("s(0) = {a}, s(1) = {b}"));
    }
    let mid = NoiseSchedule::NegTLogT.base(0.5)?;
    let expect = 0.346_573_590_279_972_65;
    report.push(
        "schedules",
        "neg_t_log_t(0.5)",
        (mid - expect).abs() < 1e-15,
        format!("{mid} vs {expect}"),
    );
    Ok(())
}

fn group_telescoping(report: &mut SuiteReport, rng: &mut RngState) -> Result<()> {
    let x = random_block(2, 1, 4, 4, rng);
    let y = random_block(2, 1, 4, 4, rng);
    let zero = FrameBlock::zeros(2, 1, 4, 4);
    for n in [1usize, 5, 25, 100] {
        let dt = 1.0 / n as f64;
        let mut cur = x.clone();
        for i in 0..n {
            cur = forward_increment(&cur, &x, &y, i as f64 * dt, dt, &zero, NoiseSchedule::NegTLogT)?;
        }
        let err = cur.max_abs_diff(&y)?;
        report.push("telescoping", format!("N={n}"), err <= TELESCOPE_TOL, format!("max abs err {err:e}"));
    }
    Ok(())
}

fn group_gradcheck(report: &mut SuiteReport, rng: &mut RngState, fault: Option<Fault>) -> Result<()> {
    let gf = match fault {
        Some(Fault::GradSign) => GradFault::FlipSign,
        None => GradFault::None,
    };
    for (name, spec) in gradcheck_specs() {
        let params = init_params(&spec, rng)?;
        let [n, c, h, w] = spec.block_shape();
        let x_t = random_block(n, c, h, w, rng);
        let t = 0.5;
        let check = grad_check_with(&spec, &params, &x_t, t, rng, gf)?;
        report.push(
            "gradcheck",
            name,
            check.max_rel_err < GRAD_TOL,
            format!(
                "max rel err {:e} over {} coords",
                check.max_rel_err, check.coords_checked
            ),
        );
    }
    let (_, spec) = gradcheck_specs().remove(0);
    let params = init_params(&spec, rng)?;
    let [n, c, h, w] = spec.block_shape();
    let x = random_block(n, c, h, w, rng);
    let y = random_block(n, c, h, w, rng);
    let z = FrameBlock::new(n, c, h, w, rng.normal_vec(spec.block_len()))?;
    let objective = Objective {
        schedule: NoiseSchedule::NegTLogT,
        weight_mode: WeightMode::Cvp,
        cap: 1e4,
    };
    let err = loss_grad_check(&params, &spec, &x, &y, 0.5, &z, objective, rng)?;
    report.push("gradcheck", "loss", err < GRAD_TOL, format!("max rel err {err:e}"));
    Ok(())
}

fn group_increment(report: &mut SuiteReport, rng: &mut RngState, samples: usize) -> Result<()> {
    let x = random_block(1, 1, 2, 2, rng);
    let y = random_block(1, 1, 2, 2, rng);
    for t in [0.25, 0.5, 0.75] {
        for dt in [0.01, 0.001] {
            let r = verify_increment_stats(&x, &y, t, dt, samples, NoiseSchedule::NegTLogT, rng)?;
            report.push(
                "increment",
                format!("t={t},dt={dt}"),
                r.passed(),
                format!(
                    "mean err {:.3e} (3 SE = {:.3e}), std {:.6} vs s(t) = {:.6}",
                    r.pooled_mean_error,
                    3.0 * r.mean_se,
                    r.pooled_std,
                    r.target_std
                ),
            );
        }
    }
    let r = verify_increment_stats(&x, &y, 0.5, 0.01, samples, NoiseSchedule::None, rng)?;
    report.push(
        "increment",
        "schedule none",
        r.passed(),
        format!("mean err {:.3e}, std {:.3e}", r.pooled_mean_error, r.pooled_std),
    );
    Ok(())
}

fn group_kl(report: &mut SuiteReport, rng: &mut RngState, samples: usize) -> Result<()> {
    let zeros = Tensor::zeros(&[4]);
    let ones = Tensor::full(&[4], 1.0);
    let cases = [
        ("identical", &ones, &ones, 1.0, 0.0),
        ("ones sigma=1", &ones, &zeros, 1.0, 2.0),
        ("ones sigma=2", &ones, &zeros, 2.0, 0.5),
    ];
    for (name, a, b, sigma, expect) in cases {
        let r = verify_kl_mc(a, b, sigma, samples, rng)?;
        let ok = r.passed && (r.closed_form - expect).abs() < 1e-12;
        report.push(
            "kl",
            name,
            ok,
            format!("closed {} mc {:.5} (3 SE = {:.2e})", r.closed_form, r.estimate, 3.0 * r.se),
        );
    }
    Ok(())
}

fn group_sampler(report: &mut SuiteReport, rng: &mut RngState, samples: usize) -> Result<()> {
    let r = verify_timestep_laws(samples, rng)?;
    report.push(
        "sampler",
        "sqrt_uniform ks",
        r.ks_ok,
        format!("D = {:.5}, 1% critical {:.5}", r.ks_statistic, r.ks_critical),
    );
    report.push(
        "sampler",
        "uniform mean",
        r.uniform_ok,
        format!("{:.5} (3 SE = {:.2e})", r.uniform_mean, 3.0 * r.uniform_se),
    );
    let n = samples as f64;
    let se_half = (0.25 * 0.75 / n).sqrt();
    report.push(
        "sampler",
        "sqrt_uniform P(t<=0.5)",
        (r.sqrt_below_half - 0.25).abs() <= 3.0 * se_half,
        format!("{:.5} vs 0.25", r.sqrt_below_half),
    );
    let se_mean = (0.5f64 - 4.0 / 9.0).sqrt() / n.sqrt();
    report.push(
        "sampler",
        "sqrt_uniform mean",
        (r.sqrt_mean - 2.0 / 3.0).abs() <= 3.0 * se_mean,
        format!("{:.5} vs 2/3", r.sqrt_mean),
    );
    Ok(())
}

fn group_oracle(report: &mut SuiteReport, rng: &mut RngState, rollouts: usize) -> Result<()> {
    let x = random_block(2, 1, 4, 4, rng);
    let y = random_block(2, 1, 4, 4, rng);
    let oracle = |_: &FrameBlock, _: f64| Ok(y.clone());
    for n in [1usize, 5, 25, 100] {
        let cfg = SamplerConfig {
            steps: n,
            stochastic: false,
            ..Default::default()
        };
        let out = sample_block(&x, &oracle, &cfg, rng)?;
        let err = out.max_abs_diff(&y)?;
        report.push("oracle", format!("exact N={n}"), err <= TELESCOPE_TOL, format!("max abs err {err:e}"));
    }
    for n in [5usize, 25] {
        let cfg = SamplerConfig {
            steps: n,
            ..Default::default()
        };
        let r = verify_sampler_noise(&cfg, rollouts, rng)?;
        report.push(
            "oracle",
            format!("noise variance N={n}"),
            r.passed,
            format!("{:.5e} vs {:.5e} ({:.2}%)", r.empirical, r.expected, 100.0 * r.rel_err),
        );
    }
    Ok(())
}

fn group_bound(report: &mut SuiteReport, rng: &mut RngState) -> Result<()> {
    let spec = DenoiserSpec {
        hidden: 8,
        time_dim: 8,
        ..DenoiserSpec::conv_small(2, 1, 8, 8)
    };
    let p1 = init_params(&spec, rng)?;
    let p2 = init_params(&spec, rng)?;
    let [n, c, h, w] = spec.block_shape();
    let x = random_block(n, c, h, w, rng);
    let y = random_block(n, c, h, w, rng);
    let z = FrameBlock::new(n, c, h, w, rng.normal_vec(spec.block_len()))?;
    let t = 0.5;
    let x_t = interpolate_bridge(&x, &y, t, &z, NoiseSchedule::NegTLogT)?;
    for dt in [1.0, 0.01] {
        let r = verify_bound_reduction(&spec, [&p1, &p2], &x, &y, &x_t, t, dt, NoiseSchedule::NegTLogT)?;
        report.push(
            "bound",
            format!("dt={dt}"),
            r.passed,
            format!("kl diff {:.9e} vs loss diff {:.9e}", r.kl_diff, r.loss_diff),
        );
    }
    Ok(())
}

/// Runs the selected check groups; each group draws from its own stream of
/// `options.seed`.
pub fn run_suite(options: &SuiteOptions) -> Result<SuiteReport> {
    for g in &options.only {
        if !GROUPS.contains(&g.as_str()) {
            return Err(CvpError::InvalidArgument(format!(
                "unknown check group {g:?}; expected one of {}",
                GROUPS.join(", ")
            )));
        }
    }
    let root = RngState::new(options.seed);
    let mut report = SuiteReport::default();
    for (i, group) in GROUPS.iter().enumerate() {
        if !options.only.is_empty() && !options.only.iter().any(|g| g == group) {
            continue;
        }
        let rng = &mut root.fork(i as u64);
        log::info!("running check group {group}");
        match *group {
            "endpoints" => group_endpoints(&mut report, rng)?,
            "schedules" => group_schedules(&mut report)?,
            "telescoping" => group_telescoping(&mut report, rng)?,
            "gradcheck" => group_gradcheck(&mut report, rng, options.fault)?,
            "increment" => group_increment(&mut report, rng, options.mc_samples)?,
            "kl" => group_kl(&mut report, rng, options.mc_samples)?,
            "sampler" => group_sampler(&mut report, rng, options.mc_samples)?,
            "oracle" => group_oracle(&mut report, rng, options.rollouts)?,
            "bound" => group_bound(&mut report, rng)?,
            _ => unreachable!(),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SuiteOptions {
        SuiteOptions {
            mc_samples: MIN_MC_SAMPLES,
            rollouts: 4_000,
            ..Default::default()
        }
    }

    #[test]
    fn increment_targets() {
        let x = FrameBlock::full(1, 1, 1, 2, 0.25);
        let y = FrameBlock::full(1, 1, 1, 2, 0.75);
        let r = verify_increment_stats(&x, &y, 0.5, 0.01, 20_000, NoiseSchedule::NegTLogT, &mut RngState::new(1))
            .unwrap();
        assert!((r.target_std - 0.346_573_590_279_972_65).abs() < 1e-15);
        assert!((r.target_mean[0] - 0.005).abs() < 1e-15);
        assert!(r.passed(), "{r:?}");
        assert!(r.bridge_std < r.target_std);
    }

    #[test]
    fn increment_zero_drift_when_x_equals_y() {
        let x = FrameBlock::full(1, 1, 2, 2, 0.4);
        let r = verify_increment_stats(&x, &x, 0.3, 0.001, 10_000, NoiseSchedule::SinPiT, &mut RngState::new(2))
            .unwrap();
        assert!(r.target_mean.iter().all(|&m| m == 0.0));
        assert!(r.passed());
    }

    #[test]
    fn increment_without_noise_is_the_drift() {
        let x = FrameBlock::full(1, 1, 1, 3, 0.1);
        let y = FrameBlock::full(1, 1, 1, 3, 0.9);
        let r = verify_increment_stats(&x, &y, 0.25, 0.01, 10_000, NoiseSchedule::None, &mut RngState::new(3))
            .unwrap();
        assert_eq!(r.target_std, 0.0);
        assert!(r.pooled_std < 1e-12 && r.passed());
    }

    #[test]
    fn increment_rejects_bad_arguments() {
        let x = FrameBlock::zeros(1, 1, 1, 1);
        let mut rng = RngState::new(0);
        assert!(verify_increment_stats(&x, &x, 0.5, 0.01, 100, NoiseSchedule::NegTLogT, &mut rng).is_err());
        assert!(verify_increment_stats(&x, &x, 0.995, 0.01, 10_000, NoiseSchedule::NegTLogT, &mut rng).is_err());
    }

    #[test]
    fn kl_examples() {
        let ones = Tensor::full(&[4], 1.0);
        let zeros = Tensor::zeros(&[4]);
        let mut rng = RngState::new(4);
        let same = verify_kl_mc(&ones, &ones, 1.0, 10_000, &mut rng).unwrap();
        assert_eq!(same.estimate, 0.0);
        assert!(same.passed);
        let r = verify_kl_mc(&ones, &zeros, 1.0, 50_000, &mut rng).unwrap();
        assert_eq!(r.closed_form, 2.0);
        assert!(r.passed, "{r:?}");
        let r = verify_kl_mc(&ones, &zeros, 2.0, 50_000, &mut rng).unwrap();
        assert_eq!(r.closed_form, 0.5);
        assert!(r.passed, "{r:?}");
        assert!(verify_kl_mc(&ones, &zeros, 0.0, 10_000, &mut rng).is_err());
    }

    #[test]
    fn ks_detects_wrong_law() {
        let mut rng = RngState::new(5);
        let u: Vec<f64> = (0..20_000).map(|_| rng.uniform()).collect();
        let crit = ks_critical(u.len(), 0.01);
        assert!(ks_statistic(&u, |s| s) < crit);
        assert!(ks_statistic(&u, |s| s * s) > crit);
        assert!((ks_critical(100_000, 0.01) * 100_000f64.sqrt() - 1.6276).abs() < 1e-4);
    }

    #[test]
    fn bound_reduction_holds_for_other_schedules() {
        let spec = DenoiserSpec::mlp(1, 1, 4, 4);
        let mut rng = RngState::new(6);
        let p1 = init_params(&spec, &mut rng).unwrap();
        let p2 = init_params(&spec, &mut rng).unwrap();
        let x = random_block(1, 1, 4, 4, &mut rng);
        let y = random_block(1, 1, 4, 4, &mut rng);
        for schedule in [NoiseSchedule::SinPiT, NoiseSchedule::SqrtTOneMinusT] {
            let r = verify_bound_reduction(&spec, [&p1, &p2], &x, &y, &x, 0.3, 0.1, schedule).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.kl[0] > 0.0 && r.kl[1] > 0.0);
        }
        assert!(verify_bound_reduction(&spec, [&p1, &p2], &x, &y, &x, 0.3, 0.1, NoiseSchedule::None).is_err());
    }

    #[test]
    fn cheap_groups_pass() {
        let opts = SuiteOptions {
            only: ["endpoints", "schedules", "telescoping", "kl", "sampler", "bound"]
                .map(String::from)
                .to_vec(),
            ..quick()
        };
        let r = run_suite(&opts).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.checks.iter().all(|c| c.group != "gradcheck"));
    }

    #[test]
    fn flipped_gradient_fails_gradcheck() {
        let opts = SuiteOptions {
            only: vec!["gradcheck".into()],
            fault: Some(Fault::GradSign),
            ..quick()
        };
        let r = run_suite(&opts).unwrap();
        assert!(!r.passed());
        assert!(r.failures().all(|c| c.group == "gradcheck"));
    }

    #[test]
    fn unknown_group_is_rejected() {
        let opts = SuiteOptions {
            only: vec!["nope".into()],
            ..quick()
        };
        assert!(run_suite(&opts).is_err());
        assert!("grad_sign".parse::<Fault>().is_ok());
        assert!("other".parse::<Fault>().is_err());
    }
}
