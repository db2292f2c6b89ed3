//! Run configuration shared by the command-line subcommands.
//!
//! A [`RunConfig`] is a JSON document with one section per stage. Any field
//! can be overridden with a dotted key such as `train.steps=100`; the
//! resolved document is echoed next to every run's outputs and reproduces the
//! run when passed back with `--config`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SyntheticKind;
use crate::denoiser::{DenoiserSpec, Variant};
use crate::error::{CvpError, Result};
use crate::sampling::{RolloutPlan, SamplerConfig, TimeNorm};
use crate::schedule::NoiseSchedule;
use crate::training::TrainConfig;
use crate::verify::{Fault, SuiteOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: SyntheticKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Video tensor consumed by `train` and `sample`.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::BouncingBall,
            frames: 1000,
            height: 32,
            width: 32,
            path: None,
        }
    }
}

/// Denoiser architecture; unset widths fall back to the variant's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Frames per block, `n`.
    pub context: usize,
    pub hidden: Option<usize>,
    pub depth: Option<usize>,
    pub time_dim: Option<usize>,
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ConvSmall,
            context: 2,
            hidden: Some(32),
            depth: None,
            time_dim: None,
            residual: false,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, channels: usize, height: usize, width: usize) -> DenoiserSpec {
        let base = match self.variant {
            Variant::ConvSmall => DenoiserSpec::conv_small(self.context, channels, height, width),
            Variant::Mlp => DenoiserSpec::mlp(self.context, channels, height, width),
        };
        DenoiserSpec {
            hidden: self.hidden.unwrap_or(base.hidden),
            depth: self.depth.unwrap_or(base.depth),
            time_dim: self.time_dim.unwrap_or(base.time_dim),
            residual: self.residual,
            ..base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub steps: usize,
    pub schedule: NoiseSchedule,
    pub stochastic: bool,
    pub time_norm: TimeNorm,
    /// Frames to predict per rollout.
    pub pred: usize,
    pub k_samples: usize,
    /// First context frame when a single start is evaluated.
    pub start: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            schedule: NoiseSchedule::NegTLogT,
            stochastic: true,
            time_norm: TimeNorm::Left,
            pred: 10,
            k_samples: 1,
            start: 0,
            checkpoint: None,
        }
    }
}

impl SampleConfig {
    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            schedule: self.schedule,
            stochastic: self.stochastic,
            time_norm: self.time_norm,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of evaluation windows; more than one spreads them evenly over
    /// the video instead of using `sample.start`.
    pub starts: usize,
    /// Write predicted frames as images.
    pub export_frames: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            starts: 1,
            export_frames: true,
        }
    }
}

/// Options of `cvp verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Check groups to run; empty runs all of them.
    pub only: Vec<String>,
    pub inject_fault: Option<Fault>,
    pub mc_samples: usize,
    pub rollouts: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let d = SuiteOptions::default();
        Self {
            only: d.only,
            inject_fault: d.fault,
            mc_samples: d.mc_samples,
            rollouts: d.rollouts,
        }
    }
}

impl VerifyConfig {
    pub fn suite(&self, seed: u64) -> SuiteOptions {
        SuiteOptions {
            seed,
            only: self.only.clone(),
            fault: self.inject_fault,
            mc_samples: self.mc_samples,
            rollouts: self.rollouts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::desk(),
            sample: SampleConfig::default(),
            eval: EvalConfig::default(),
            verify: VerifyConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            train: TrainConfig::paper(),
            ..Self::desk()
        }
    }

    /// Layers `overrides` (dotted key, raw value) over `base`, or over the
    /// desk preset when `base` is `None`.
    pub fn resolve(base: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = serde_json::to_value(Self::desk())?;
        if let Some(path) = base {
            let text = fs::read_to_string(path).map_err(|e| CvpError::io(path, e))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| CvpError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut doc, file);
        }
        for (key, raw) in overrides {
            set_path(&mut doc, key, parse_value(raw))?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| CvpError::Config(e.to_string()))?;
        cfg.propagate_seed();
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::resolve(Some(path.as_ref()), &[])
    }

    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
    }

    pub fn sampler(&self) -> SamplerConfig {
        self.sample.sampler(self.seed)
    }

    pub fn rollout_plan(&self) -> RolloutPlan {
        RolloutPlan {
            context: self.model.context,
            shift: self.train.shift,
            predict: self.sample.pred,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `config.json` into `dir`.
    pub fn echo(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CvpError::io(dir, e))?;
        let path = dir.join("config.json");
        fs::write(&path, self.to_json()?).map_err(|e| CvpError::io(&path, e))?;
        Ok(path)
    }
}

/// Numbers, booleans, `null` and JSON literals keep their type; anything else
/// is taken as a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(into: &mut Value, from: Value) {
    match (into, from) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Keys that hold file paths and therefore never parse as numbers.
const PATH_KEYS: [&str; 2] = ["data.path", "sample.checkpoint"];

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CvpError::Config(format!("{key}: {part:?} is not a section")))?;
        if !obj.contains_key(*part) {
            return Err(CvpError::Config(format!("unknown config key {key:?}")));
        }
        if i + 1 == parts.len() {
            let slot = obj.get_mut(*part).expect("checked above");
            *slot = match value {
                Value::Number(n) if matches!(slot, Value::String(_)) || PATH_KEYS.contains(&key) => {
                    Value::String(n.to_string())
                }
                v => v,
            };
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked above");
    }
    unreachable!("split yields at least one part")
}
