//! The learned predictor `ŷ = y_θ(x_t, t)`.
//!
//! The crate ships two small reference networks behind one parameter layout:
//! a stack of 3x3 convolutions (`conv_small`) and a fully connected stack
//! (`mlp`). Both take the bridge state and a sinusoidal time embedding, which
//! is projected to the hidden width and broadcast-added after the first layer.
//! Anything implementing [`Predictor`] can drive the sampler.

mod checkpoint;
mod embed;
mod gradcheck;
pub(crate) mod layers;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use embed::{time_embed, TimeEmbedding, TIME_BASE_FREQUENCY};
pub use gradcheck::{
    finite_difference_check, grad_check, grad_check_steps, grad_check_with, FdCheck, GradFault, FD_STEP,
    MIN_COORDS,
};
pub use layers::Real;

pub(crate) fn gradcheck_coords(len: usize, rng: &mut RngState) -> Vec<usize> {
    gradcheck::pick_coords(len, MIN_COORDS, rng)
}

use crate::error::{CvpError, Result};
use crate::rng::RngState;
use crate::tensor::FrameBlock;
use layers::{silu, silu_grad, Layer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ConvSmall,
    Mlp,
}

impl std::str::FromStr for Variant {
    type Err = CvpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv_small" => Ok(Variant::ConvSmall),
            "mlp" => Ok(Variant::Mlp),
            other => Err(CvpError::InvalidArgument(format!("unknown denoiser variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSpec {
    pub variant: Variant,
    /// Frames per block.
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    /// Number of layers, including the input and output layers.
    pub depth: usize,
    pub time_dim: usize,
    /// Adds the input block to the output. Off by default: the network
    /// predicts the future block directly.
    #[serde(default)]
    pub residual: bool,
}

impl DenoiserSpec {
    pub fn conv_small(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            variant: Variant::ConvSmall,
            frames,
            channels,
            height,
            width,
            hidden: 16,
            depth: 4,
            time_dim: 16,
            residual: false,
        }
    }

    pub fn mlp(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            variant: Variant::Mlp,
            hidden: 32,
            depth: 3,
            ..Self::conv_small(frames, channels, height, width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(CvpError::InvalidArgument(format!(
                "time embedding dimension must be even and >= 2, got {}",
                self.time_dim
            )));
        }
        if self.depth < 2 {
            return Err(CvpError::InvalidArgument(format!(
                "depth must be at least 2, got {}",
                self.depth
            )));
        }
        if [self.frames, self.channels, self.height, self.width, self.hidden].contains(&0) {
            return Err(CvpError::InvalidArgument(
                "denoiser extents must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn block_shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn block_len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    fn layers(&self) -> Vec<Layer> {
        let io = self.frames * self.channels;
        let f = self.hidden;
        (0..self.depth)
            .map(|l| {
                let (cin, cout) = match l {
                    0 => (io, f),
                    l if l == self.depth - 1 => (f, io),
                    _ => (f, f),
                };
                match self.variant {
                    Variant::ConvSmall => Layer::Conv3x3 {
                        cin,
                        cout,
                        h: self.height,
                        w: self.width,
                    },
                    Variant::Mlp => {
                        let d = io * self.height * self.width;
                        Layer::Dense {
                            inputs: if l == 0 { d } else { cin },
                            outputs: if l == self.depth - 1 { d } else { cout },
                        }
                    }
                }
            })
            .collect()
    }

    fn layer_prefix(&self) -> &'static str {
        match self.variant {
            Variant::ConvSmall => "conv",
            Variant::Mlp => "fc",
        }
    }

    pub fn layout(&self) -> Vec<ParamEntry> {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product::<usize>();
            entries.push(ParamEntry {
                name,
                shape,
                offset,
            });
            offset += len;
        };
        for (i, layer) in self.layers().iter().enumerate() {
            push(format!("{}{i}.weight", self.layer_prefix()), layer.weight_shape());
            push(format!("{}{i}.bias", self.layer_prefix()), vec![layer.out_channels()]);
        }
        push("time.weight".into(), vec![self.hidden, self.time_dim]);
        push("time.bias".into(), vec![self.hidden]);
        entries
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(ParamEntry::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector with its named layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub values: Vec<f32>,
    pub layout: Vec<ParamEntry>,
}

impl DenoiserParams {
    pub fn zeros(spec: &DenoiserSpec) -> Self {
        Self {
            values: vec![0.0; spec.num_params()],
            layout: spec.layout(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.entry(name).map(|e| &self.values[e.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_against(&self, spec: &DenoiserSpec) -> Result<()> {
        if self.layout != spec.layout() || self.values.len() != spec.num_params() {
            return Err(CvpError::InvalidArgument(
                "parameter layout does not match denoiser spec".into(),
            ));
        }
        Ok(())
    }
}

/// He-normal weights (`N(0, 2 / fan_in)`), zero biases.
pub fn init_params(spec: &DenoiserSpec, rng: &mut RngState) -> Result<DenoiserParams> {
    spec.validate()?;
    let mut params = DenoiserParams::zeros(spec);
    let fan_ins: Vec<usize> = spec
        .layers()
        .iter()
        .map(Layer::fan_in)
        .chain(std::iter::once(spec.time_dim))
        .collect();
    let weights = params
        .layout
        .iter()
        .filter(|e| e.name.ends_with(".weight"))
        .cloned()
        .collect::<Vec<_>>();
    for (entry, fan_in) in weights.iter().zip(fan_ins) {
        let std = (2.0 / fan_in as f64).sqrt() as f32;
        rng.fill_normal(&mut params.values[entry.range()], std);
    }
    Ok(params)
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T = f32> {
    fingerprint: u64,
    temb: Vec<T>,
    /// Input to each layer.
    inputs: Vec<Vec<T>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<T>>,
}

fn fingerprint<T: Real>(spec: &DenoiserSpec, params: &[T]) -> u64 {
    let mut h = DefaultHasher::new();
    spec.hash(&mut h);
    for v in params {
        v.as_f64().to_bits().hash(&mut h);
    }
    h.finish()
}

pub(crate) fn forward_generic<T: Real>(
    spec: &DenoiserSpec,
    params: &[T],
    x: &[T],
    t: f64,
) -> Result<(Vec<T>, ForwardCache<T>)> {
    spec.validate()?;
    if params.len() != spec.num_params() {
        return Err(CvpError::InvalidArgument(format!(
            "expected {} parameters, got {}",
            spec.num_params(),
            params.len()
        )));
    }
    if x.len() != spec.block_len() {
        return Err(CvpError::shape(&spec.block_shape(), &[x.len()]));
    }
    let layout = spec.layout();
    let layers = spec.layers();
    let depth = layers.len();

    let temb: Vec<T> = embed::time_embed_f64(t, spec.time_dim)?
        .into_iter()
        .map(T::of)
        .collect();
    let tw = &params[layout[2 * depth].range()];
    let tb = &params[layout[2 * depth + 1].range()];
    let tproj: Vec<T> = (0..spec.hidden)
        .map(|f| {
            let row = &tw[f * spec.time_dim..(f + 1) * spec.time_dim];
            tb[f] + row.iter().zip(&temb).map(|(&a, &b)| a * b).sum::<T>()
        })
        .collect();

    let mut inputs = Vec::with_capacity(depth);
    let mut pre = Vec::with_capacity(depth - 1);
    let mut act = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let w = &params[layout[2 * l].range()];
        let b = &params[layout[2 * l + 1].range()];
        let mut z = vec![T::zero(); layer.output_len()];
        layer.forward(w, b, &act, &mut z);
        if l == 0 {
            let plane = layer.plane();
            for (f, &tp) in tproj.iter().enumerate() {
                for v in &mut z[f * plane..(f + 1) * plane] {
                    *v += tp;
                }
            }
        }
        inputs.push(std::mem::take(&mut act));
        if l + 1 < depth {
            act = z.iter().map(|&v| silu(v)).collect();
            pre.push(z);
        } else {
            act = z;
        }
    }
    if spec.residual {
        for (o, &xi) in act.iter_mut().zip(x) {
            *o += xi;
        }
    }
    Ok((
        act,
        ForwardCache {
            fingerprint: fingerprint(spec, params),
            temb,
            inputs,
            pre,
        },
    ))
}

pub(crate) fn backward_generic<T: Real>(
    spec: &DenoiserSpec,
    params: &[T],
    cache: &ForwardCache<T>,
    grad_out: &[T],
    fault: GradFault,
) -> Result<Vec<T>> {
    if cache.fingerprint != fingerprint(spec, params) {
        return Err(CvpError::StaleCache(
            "cache was produced with different parameters or spec".into(),
        ));
    }
    if grad_out.len() != spec.block_len() {
        return Err(CvpError::shape(&spec.block_shape(), &[grad_out.len()]));
    }
    let layout = spec.layout();
    let layers = spec.layers();
    let depth = layers.len();
    let mut grads = vec![T::zero(); params.len()];
    let mut g = grad_out.to_vec();

    for l in (0..depth).rev() {
        let layer = &layers[l];
        let gz: Vec<T> = if l + 1 < depth {
            g.iter()
                .zip(&cache.pre[l])
                .map(|(&gv, &z)| gv * silu_grad(z))
                .collect()
        } else {
            g
        };
        let w = &params[layout[2 * l].range()];
        let (wr, br) = (layout[2 * l].range(), layout[2 * l + 1].range());
        debug_assert_eq!(wr.end, br.start);
        let (gw, gb) = grads[wr.start..br.end].split_at_mut(wr.len());
        let mut gin = (l > 0).then(|| vec![T::zero(); layer.input_len()]);
        layer.backward(w, &cache.inputs[l], &gz, gw, gb, gin.as_deref_mut());

        if l == 0 {
            let plane = layer.plane();
            let twr = layout[2 * depth].range();
            let tbr = layout[2 * depth + 1].range();
            for f in 0..spec.hidden {
                let gt: T = gz[f * plane..(f + 1) * plane].iter().copied().sum();
                grads[tbr.start + f] += gt;
                let row = &mut grads[twr.start + f * spec.time_dim..twr.start + (f + 1) * spec.time_dim];
                for (gr, &e) in row.iter_mut().zip(&cache.temb) {
                    *gr += gt * e;
                }
            }
        }
        g = gin.unwrap_or_default();
        if fault == GradFault::FlipSign && l + 1 == depth {
            for v in &mut g {
                *v = -*v;
            }
        }
    }
    Ok(grads)
}

fn check_block(spec: &DenoiserSpec, block: &FrameBlock) -> Result<()> {
    if block.shape() != spec.block_shape() {
        return Err(CvpError::shape(&spec.block_shape(), block.shape()));
    }
    Ok(())
}

/// Runs the network on one block. Returns the prediction and the activations
/// needed by [`denoiser_backward`].
pub fn denoiser_forward(
    params: &DenoiserParams,
    spec: &DenoiserSpec,
    x_t: &FrameBlock,
    t: f64,
) -> Result<(FrameBlock, ForwardCache)> {
    params.check_against(spec)?;
    check_block(spec, x_t)?;
    let (out, cache) = forward_generic(spec, &params.values, x_t.data(), t)?;
    let [n, c, h, w] = spec.block_shape();
    Ok((FrameBlock::new(n, c, h, w, out)?, cache))
}

/// Exact parameter gradient of a scalar loss whose derivative with respect to
/// the prediction is `grad_out`.
pub fn denoiser_backward(
    params: &DenoiserParams,
    spec: &DenoiserSpec,
    cache: &ForwardCache,
    grad_out: &FrameBlock,
) -> Result<Vec<f32>> {
    params.check_against(spec)?;
    check_block(spec, grad_out)?;
    backward_generic(spec, &params.values, cache, grad_out.data(), GradFault::None)
}

/// Anything that can estimate the future block from a bridge state.
pub trait Predictor {
    fn predict(&self, x_t: &FrameBlock, t: f64) -> Result<FrameBlock>;
}

/// A parameterised network ready for inference.
#[derive(Clone, Debug)]
pub struct Denoiser {
    pub spec: DenoiserSpec,
    pub params: DenoiserParams,
}

impl Denoiser {
    pub fn new(spec: DenoiserSpec, params: DenoiserParams) -> Result<Self> {
        spec.validate()?;
        params.check_against(&spec)?;
        Ok(Self { spec, params })
    }
}

impl Predictor for Denoiser {
    fn predict(&self, x_t: &FrameBlock, t: f64) -> Result<FrameBlock> {
        denoiser_forward(&self.params, &self.spec, x_t, t).map(|(y, _)| y)
    }
}

impl<F> Predictor for F
where
    F: Fn(&FrameBlock, f64) -> Result<FrameBlock>,
{
    fn predict(&self, x_t: &FrameBlock, t: f64) -> Result<FrameBlock> {
        self(x_t, t)
    }
}
