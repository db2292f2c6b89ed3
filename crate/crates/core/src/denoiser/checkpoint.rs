//! Checkpoint directory: one `CVPT` file per named parameter plus a
//! `spec.json` sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_tensor, write_tensor};
use crate::error::{CvpError, Result};
use crate::tensor::Tensor;

use super::{Denoiser, DenoiserParams, DenoiserSpec, ParamEntry};

const SIDECAR: &str = "spec.json";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    spec: DenoiserSpec,
    layout: Vec<ParamEntry>,
}

pub fn save_checkpoint(dir: impl AsRef<Path>, model: &Denoiser) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CvpError::io(dir, e))?;
    for entry in &model.params.layout {
        let t = Tensor::new(entry.shape.clone(), model.params.values[entry.range()].to_vec())?;
        write_tensor(dir.join(format!("{}.cvpt", entry.name)), &t)?;
    }
    let sidecar = Sidecar {
        spec: model.spec.clone(),
        layout: model.params.layout.clone(),
    };
    let path = dir.join(SIDECAR);
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&path, json + "\n").map_err(|e| CvpError::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Denoiser> {
    let dir = dir.as_ref();
    let path = dir.join(SIDECAR);
    let text = fs::read_to_string(&path).map_err(|e| CvpError::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.layout != sidecar.spec.layout() {
        return Err(CvpError::Malformed {
            path,
            reason: "stored layout disagrees with the spec".into(),
        });
    }
    let mut params = DenoiserParams::zeros(&sidecar.spec);
    for entry in &sidecar.layout {
        let file = dir.join(format!("{}.cvpt", entry.name));
        let t = read_tensor(&file)?;
        if t.shape() != entry.shape.as_slice() {
            return Err(CvpError::shape(&entry.shape, t.shape()));
        }
        params.values[entry.range()].copy_from_slice(t.data());
    }
    Denoiser::new(sidecar.spec, params)
}
