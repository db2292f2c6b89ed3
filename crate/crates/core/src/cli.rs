//! `cvp` command line: `gen-data | train | sample | verify`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{
    export_frames, generate_synthetic, read_video, write_video, PnmFormat, VideoSequence, MIN_EXTENT,
};
use crate::denoiser::{load_checkpoint, save_checkpoint, Denoiser};
use crate::error::CvpError;
use crate::eval::{evaluate_starts, spaced_starts};
use crate::rng::RngState;
use crate::sampling::rollout_samples;
use crate::training::{train_loop, write_log_csv};
use crate::verify::{run_suite, Fault, GROUPS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const USAGE: &str = "\
usage: cvp <gen-data|train|sample|verify> [--config=PATH] [--seed=U64] [--out=DIR] [--section.field=VALUE ...]

shortcuts:
  gen-data  --kind=KIND --frames=L --size=PX
  train     --data=PATH --steps=N
  sample    --data=PATH --checkpoint=DIR --steps=N --pred=P --k-samples=K --deterministic
  verify    --only=GROUP[,GROUP] --inject-fault=grad_sign --mc-samples=N

environment: CVP_LOG=quiet|info|debug";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: CvpError) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Command {
    GenData,
    Train,
    Sample,
    Verify,
}

#[derive(Debug, Default)]
struct Flags {
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    overrides: Vec<(String, String)>,
}

fn parse_command(name: &str) -> Result<Command, CliError> {
    match name {
        "gen-data" => Ok(Command::GenData),
        "train" => Ok(Command::Train),
        "sample" => Ok(Command::Sample),
        "verify" => Ok(Command::Verify),
        other => Err(usage(format!("unknown command {other:?}"))),
    }
}

fn parse_flags(cmd: Command, args: &[String]) -> Result<Flags, CliError> {
    let mut f = Flags::default();
    for arg in args {
        let body = arg
            .strip_prefix("--")
            .ok_or_else(|| usage(format!("unexpected argument {arg:?}")))?;
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        let need = |v: Option<String>| v.ok_or_else(|| usage(format!("--{key} needs a value")));
        let mut set = |k: &str, v: String| f.overrides.push((k.to_string(), v));
        match (key, cmd) {
            ("config", _) => f.config = Some(need(value)?.into()),
            ("out", _) => f.out = Some(need(value)?.into()),
            ("seed", _) => set("seed", need(value)?),
            ("kind", _) => set("data.kind", need(value)?),
            ("frames", _) => set("data.frames", need(value)?),
            ("size", _) => {
                let v = need(value)?;
                set("data.height", v.clone());
                set("data.width", v);
            }
            ("data", _) => set("data.path", need(value)?),
            ("steps", Command::Train) => set("train.steps", need(value)?),
            ("steps", _) => set("sample.steps", need(value)?),
            ("pred", _) => set("sample.pred", need(value)?),
            ("k-samples", _) => set("sample.k_samples", need(value)?),
            ("checkpoint", _) => set("sample.checkpoint", need(value)?),
            ("deterministic", _) => set("sample.stochastic", "false".into()),
            ("only", Command::Verify) => {
                let groups: Vec<String> = need(value)?.split(',').map(str::to_string).collect();
                set("verify.only", serde_json::to_string(&groups).expect("strings serialize"));
            }
            ("inject-fault", Command::Verify) => {
                let v = need(value)?;
                v.parse::<Fault>().map_err(usage)?;
                set("verify.inject_fault", v);
            }
            ("mc-samples", Command::Verify) => {
                let v = need(value)?;
                v.parse::<usize>().map_err(|e| usage(format!("--mc-samples: {e}")))?;
                set("verify.mc_samples", v);
            }
            (k, _) if k.contains('.') => set(k, need(value)?),
            (k, _) => return Err(usage(format!("unknown flag --{k}"))),
        }
    }
    Ok(f)
}

fn init_logging() {
    let level = match std::env::var("CVP_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

/// Runs the command line given the arguments after the program name and
/// returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    init_logging();
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    match dispatch(&args) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\n{USAGE}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(first) = args.first() else {
        return Err(usage("missing command"));
    };
    if first == "--help" || first == "-h" || first == "help" {
        println!("{USAGE}");
        return Ok(());
    }
    let cmd = parse_command(first)?;
    let flags = parse_flags(cmd, &args[1..])?;
    let cfg = RunConfig::resolve(flags.config.as_deref(), &flags.overrides).map_err(usage)?;
    log::debug!("resolved config:\n{}", cfg.to_json().map_err(runtime)?);
    match cmd {
        Command::GenData => gen_data(&cfg, &flags),
        Command::Train => train(&cfg, &flags),
        Command::Sample => sample(&cfg, &flags),
        Command::Verify => verify(&cfg, &flags),
    }
}

fn out_dir(flags: &Flags) -> PathBuf {
    flags.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn existing(path: Option<&Path>, what: &str) -> Result<PathBuf, CliError> {
    let p = path.ok_or_else(|| usage(format!("no {what} given")))?;
    if !p.exists() {
        return Err(usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(p.to_path_buf())
}

fn gen_data(cfg: &RunConfig, flags: &Flags) -> Result<(), CliError> {
    let d = &cfg.data;
    if d.height < MIN_EXTENT || d.width < MIN_EXTENT {
        return Err(usage(format!(
            "frame size {}x{} is below the minimum of {MIN_EXTENT}",
            d.height, d.width
        )));
    }
    if d.frames < 2 {
        return Err(usage(format!("need at least 2 frames, got {}", d.frames)));
    }
    let out = out_dir(flags);
    let video = generate_synthetic(d.kind, d.frames, d.height, d.width, cfg.seed).map_err(usage)?;
    let path = out.join("video.cvpt");
    write_video(&path, &video).map_err(runtime)?;
    let format = PnmFormat::for_channels(video.frames.c()).map_err(runtime)?;
    export_frames(&video.frames, out.join("frames"), format).map_err(runtime)?;
    cfg.echo(&out).map_err(runtime)?;
    println!("{}", path.display());
    Ok(())
}

fn load_video(cfg: &RunConfig) -> Result<VideoSequence, CliError> {
    let path = existing(cfg.data.path.as_deref(), "dataset")?;
    read_video(&path).map_err(runtime)
}

fn train(cfg: &RunConfig, flags: &Flags) -> Result<(), CliError> {
    cfg.train.validate().map_err(usage)?;
    let video = load_video(cfg)?;
    let f = &video.frames;
    let spec = cfg.model.spec(f.c(), f.h(), f.w());
    spec.validate().map_err(usage)?;
    let out = out_dir(flags);
    cfg.echo(&out).map_err(runtime)?;
    let outcome = train_loop(&cfg.train, std::slice::from_ref(&video), &spec, |step, params| {
        let model = Denoiser::new(spec.clone(), params.clone())?;
        save_checkpoint(out.join("checkpoints").join(format!("step_{step:06}")), &model)
    })
    .map_err(runtime)?;
    write_log_csv(out.join("train_log.csv"), &outcome.log).map_err(runtime)?;
    let model = Denoiser::new(spec, outcome.params).map_err(runtime)?;
    let ckpt = out.join("checkpoint");
    save_checkpoint(&ckpt, &model).map_err(runtime)?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        println!("loss {:.6} (step {}) -> {:.6} (step {})", first.loss, first.step, last.loss, last.step);
    }
    println!("{}", ckpt.display());
    Ok(())
}

fn sample(cfg: &RunConfig, flags: &Flags) -> Result<(), CliError> {
    let sampler = cfg.sampler();
    sampler.validate().map_err(usage)?;
    let plan = cfg.rollout_plan();
    plan.validate().map_err(usage)?;
    if cfg.sample.k_samples == 0 || cfg.eval.starts == 0 {
        return Err(usage("k_samples and eval.starts must be >= 1"));
    }
    let ckpt = existing(cfg.sample.checkpoint.as_deref(), "checkpoint")?;
    let video = load_video(cfg)?;
    let model = load_checkpoint(&ckpt).map_err(runtime)?;
    if model.spec.frames != plan.context {
        return Err(usage(format!(
            "checkpoint uses {} context frames but model.context is {}",
            model.spec.frames, plan.context
        )));
    }
    let frames = &video.frames;
    let n = plan.context;
    let starts = if cfg.eval.starts == 1 {
        vec![cfg.sample.start]
    } else {
        spaced_starts(frames.n(), n, plan.predict, cfg.eval.starts).map_err(usage)?
    };
    if let Some(&s) = starts.iter().find(|&&s| s + n > frames.n()) {
        return Err(usage(format!("start {s} leaves no room for {n} context frames")));
    }
    let out = out_dir(flags);
    cfg.echo(&out).map_err(runtime)?;
    let with_truth = starts.iter().all(|&s| s + n + plan.predict <= frames.n());
    let rollouts = if with_truth {
        let (summary, rollouts) =
            evaluate_starts(&model, frames, plan, &sampler, cfg.sample.k_samples, &starts)
                .map_err(runtime)?;
        for r in &summary.starts {
            r.report.write(start_dir(&out, r.start)).map_err(runtime)?;
        }
        let path = out.join("summary.json");
        let json = serde_json::to_string_pretty(&summary).map_err(|e| runtime(e.into()))?;
        std::fs::write(&path, json + "\n").map_err(|e| runtime(CvpError::io(&path, e)))?;
        println!(
            "psnr {:.3} dB (copy-last {:.3} dB, best-of-{} {:.3} dB), ssim {:.4}",
            summary.mean_psnr,
            summary.baseline_psnr,
            summary.k_samples,
            summary.best_of_k_psnr,
            summary.mean_ssim
        );
        rollouts
    } else {
        log::warn!("video too short for ground truth; writing predictions without metrics");
        let root = RngState::new(sampler.seed);
        starts
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let context = frames.frames(s, n)?;
                let cfg_j = crate::sampling::SamplerConfig {
                    seed: root.fork(j as u64).seed(),
                    ..sampler.clone()
                };
                rollout_samples(&context, plan, &model, &cfg_j, cfg.sample.k_samples)
            })
            .collect::<crate::Result<Vec<_>>>()
            .map_err(runtime)?
    };
    if cfg.eval.export_frames {
        let format = PnmFormat::for_channels(frames.c()).map_err(runtime)?;
        for (&s, samples) in starts.iter().zip(&rollouts) {
            for (k, block) in samples.iter().enumerate() {
                let dir = start_dir(&out, s).join(format!("sample_{k:02}"));
                export_frames(block, dir, format).map_err(runtime)?;
            }
        }
    }
    println!("{}", out.display());
    Ok(())
}

fn start_dir(out: &Path, start: usize) -> PathBuf {
    out.join(format!("start_{start:05}"))
}

fn verify(cfg: &RunConfig, flags: &Flags) -> Result<(), CliError> {
    for g in &cfg.verify.only {
        if !GROUPS.contains(&g.as_str()) {
            return Err(usage(format!("unknown check group {g:?}; expected one of {}", GROUPS.join(", "))));
        }
    }
    let options = cfg.verify.suite(cfg.seed);
    let report = run_suite(&options).map_err(|e| match e {
        CvpError::InvalidArgument(m) => CliError::Usage(m),
        other => runtime(other),
    })?;
    println!("{report}");
    if let Some(out) = &flags.out {
        cfg.echo(out).map_err(runtime)?;
        let path = out.join("verify.json");
        let json = serde_json::to_string_pretty(&report).map_err(|e| runtime(e.into()))?;
        std::fs::write(&path, json + "\n").map_err(|e| runtime(CvpError::io(&path, e)))?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = report.failures().map(|c| format!("{}/{}", c.group, c.name)).collect();
        Err(CliError::Runtime(format!("failed checks: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn aliases_map_to_sections() {
        let f = parse_flags(
            Command::Sample,
            &args(&["--steps=25", "--pred=16", "--k-samples=5", "--deterministic", "--size=48"]),
        )
        .unwrap();
        let keys: Vec<&str> = f.overrides.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(
            keys,
            ["sample.steps", "sample.pred", "sample.k_samples", "sample.stochastic", "data.height", "data.width"]
        );
        let t = parse_flags(Command::Train, &args(&["--steps=10"])).unwrap();
        assert_eq!(t.overrides[0].0, "train.steps");
    }

    #[test]
    fn verify_only_flags() {
        let f = parse_flags(Command::Verify, &args(&["--only=kl,bound", "--inject-fault=grad_sign"])).unwrap();
        let cfg = RunConfig::resolve(None, &f.overrides).unwrap();
        assert_eq!(cfg.verify.only, ["kl", "bound"]);
        assert_eq!(cfg.verify.inject_fault, Some(Fault::GradSign));
        assert!(parse_flags(Command::Train, &args(&["--only=kl"])).is_err());
        assert!(parse_flags(Command::Verify, &args(&["--inject-fault=other"])).is_err());
    }

    #[test]
    fn bad_arguments_are_usage_errors() {
        assert_eq!(run(["bogus"]), EXIT_USAGE);
        assert_eq!(run(Vec::<String>::new()), EXIT_USAGE);
        assert_eq!(run(["train", "positional"]), EXIT_USAGE);
        assert_eq!(run(["train", "--nope=1"]), EXIT_USAGE);
        assert_eq!(run(["train", "--train.nope=1"]), EXIT_USAGE);
        assert_eq!(run(["verify", "--only=nothing"]), EXIT_USAGE);
        assert_eq!(run(["--help"]), EXIT_OK);
    }
}
