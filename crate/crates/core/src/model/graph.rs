//! Layer-level description of a network and its evaluation.
//!
//! A model is a small DAG of [`Layer`]s in topological order. The same
//! description drives the autodiff forward pass, tape-free inference, and the
//! receptive-field and cost analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{kernels, FuseMode, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::model::CnpConfig;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Input { channels: usize },
    /// Square convolution with padding `kernel / 2`.
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize },
    /// 3×3 stride-2 transposed convolution, doubles H and W.
    Deconv { in_ch: usize, out_ch: usize },
    Prelu { channels: usize },
    /// 2×2 stride-2 pooling.
    Pool(PoolKind),
    Fuse(FuseMode),
    /// `inputs[0] + inputs[1][:, start..start + count]`.
    Residual { start: usize, count: usize },
}

impl LayerKind {
    /// Kernel size, stride and whether the layer upsamples, for analysis.
    pub fn geometry(&self) -> Option<(usize, usize)> {
        match *self {
            LayerKind::Conv { kernel, stride, .. } => Some((kernel, stride)),
            LayerKind::Pool(_) => Some((2, 2)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    /// Pyramid level the layer belongs to; level-`i` layers run at `1/2^i`
    /// resolution except upsampling layers, which produce level `i − 1`.
    pub level: usize,
    pub kind: LayerKind,
    pub inputs: Vec<LayerId>,
    pub params: Vec<ParamId>,
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// He-normal with the given fan-in, multiplied by `gain`.
    HeNormal { fan_in: usize, gain: f64 },
    Zero,
    Constant(f64),
    /// Per-channel bilinear ×2 kernel plus Gaussian noise of the given std.
    Bilinear { noise: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: ParamInit,
}

/// Which builder produced an architecture; enough to rebuild it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Cnp,
    SingleLevel { layers: usize },
    SimpleMultiscale { branch_channels: usize },
}

/// Layers plus parameter declarations; independent of precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub config: CnpConfig,
    pub layers: Vec<Layer>,
    pub param_specs: Vec<ParamSpec>,
    pub output: LayerId,
}

impl Architecture {
    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[id.0]
    }

    pub fn find(&self, name: &str) -> Option<LayerId> {
        self.layers.iter().position(|l| l.name == name).map(LayerId)
    }

    pub fn input_channels(&self) -> usize {
        self.config.input_channels
    }

    /// Number of pyramid levels the layers span.
    pub fn levels(&self) -> usize {
        self.layers.iter().map(|l| l.level).max().unwrap_or(0) + 1
    }

    /// Spatial sizes must be multiples of this factor.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn param_count(&self) -> usize {
        self.param_specs.iter().map(|p| p.shape.numel()).sum()
    }

    /// For each layer, the index of its last consumer (or itself).
    pub fn last_use(&self) -> Vec<usize> {
        let mut last: Vec<usize> = (0..self.layers.len()).collect();
        for (i, layer) in self.layers.iter().enumerate() {
            for inp in &layer.inputs {
                last[inp.0] = last[inp.0].max(i);
            }
        }
        last[self.output.0] = usize::MAX;
        last
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.config.input_channels {
            return Err(Error::shape(
                "forward",
                format!("model expects {} input channels, got {s}", self.config.input_channels),
            ));
        }
        let m = self.size_multiple();
        if s.h % m != 0 || s.w % m != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::NeedsPadding {
                height: s.h,
                width: s.w,
                multiple: m,
            });
        }
        Ok(())
    }

    /// Records the forward pass onto `tape` with the parameters in `params`
    /// (which must follow this architecture's parameter order) as leaves.
    pub fn record<T: Real>(
        &self,
        params: &ParamStore<T>,
        tape: &mut Tape<T>,
        input: Var,
        opts: ForwardOptions,
    ) -> Result<Var> {
        self.check_input(tape.shape(input))?;
        let param_vars: Vec<Var> = (0..params.len()).map(|i| tape.param(params, ParamId(i))).collect();
        let mut vals: Vec<Option<Var>> = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            if !opts.active(layer.level) {
                continue;
            }
            let arg = |k: usize| vals[layer.inputs[k].0];
            let p = |k: usize| param_vars[layer.params[k].0];
            let out = match &layer.kind {
                LayerKind::Input { .. } => input,
                &LayerKind::Conv { kernel, stride, .. } => {
                    tape.conv2d(need(arg(0), layer)?, p(0), Some(p(1)), stride, kernel / 2)?
                }
                LayerKind::Deconv { .. } => tape.deconv2d(need(arg(0), layer)?, p(0), Some(p(1)))?,
                LayerKind::Prelu { .. } => tape.prelu(need(arg(0), layer)?, p(0))?,
                LayerKind::Pool(kind) => {
                    let x = need(arg(0), layer)?;
                    if opts.average_pooling || *kind == PoolKind::Avg {
                        tape.avgpool2d(x)?
                    } else {
                        tape.maxpool2d(x)?
                    }
                }
                LayerKind::Fuse(mode) => {
                    let a = need(arg(0), layer)?;
                    match (arg(1), mode) {
                        (Some(b), _) => tape.fuse(a, b, *mode)?,
                        (None, FuseMode::Sum) => a,
                        (None, FuseMode::Concat) => {
                            let z = tape.constant(Tensor::zeros(tape.shape(a)));
                            tape.concat(a, z)?
                        }
                    }
                }
                &LayerKind::Residual { start, count } => {
                    let pred = need(arg(0), layer)?;
                    let src = need(arg(1), layer)?;
                    let skip = tape.channels(src, start, count)?;
                    tape.add(pred, skip)?
                }
            };
            vals[i] = Some(out);
        }
        need(vals[self.output.0], self.layer(self.output))
    }
}

/// Options that alter evaluation without changing the architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    /// Evaluate only levels `0..n`; fused contributions from deeper levels
    /// are treated as zero.
    pub active_levels: Option<usize>,
    /// Replace every pooling layer with 2×2 average pooling.
    pub average_pooling: bool,
}

impl ForwardOptions {
    fn active(&self, level: usize) -> bool {
        self.active_levels.is_none_or(|n| level < n)
    }
}

/// A built network: architecture plus named parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph<T: Real = f32> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Real> ModelGraph<T> {
    /// Allocates parameters for `arch`. Weights start at zero, biases at
    /// zero and slopes at their constant; call [`ModelGraph::init_params`]
    /// for a random start.
    pub fn from_arch(arch: Architecture) -> Result<Self> {
        let mut params = ParamStore::new();
        for spec in &arch.param_specs {
            let value = match spec.init {
                ParamInit::Constant(c) => Tensor::full(spec.shape, T::from_f64(c)),
                _ => Tensor::zeros(spec.shape),
            };
            params.insert(spec.name.clone(), value)?;
        }
        Ok(ModelGraph { arch, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        ModelGraph {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Deterministic random initialization from `seed`.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, spec) in self.arch.param_specs.iter().enumerate() {
            let value = init_tensor::<T, _>(spec, &mut rng);
            self.params.get_mut(ParamId(i)).value = value;
        }
        self.params.zero_grad();
    }

    /// Records the forward pass onto `tape`, with parameters as leaves.
    pub fn forward_tape(&self, tape: &mut Tape<T>, input: Var, opts: ForwardOptions) -> Result<Var> {
        self.arch.record(&self.params, tape, input, opts)
    }

    /// Inference without a tape; intermediate maps are dropped after their
    /// last use.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_with(input, ForwardOptions::default())
    }

    pub fn forward_with(&self, input: &Tensor<T>, opts: ForwardOptions) -> Result<Tensor<T>> {
        self.arch.check_input(input.shape())?;
        let last = self.arch.last_use();
        let mut vals: Vec<Option<Tensor<T>>> = vec![None; self.arch.layers.len()];
        for (i, layer) in self.arch.layers.iter().enumerate() {
            if !opts.active(layer.level) {
                continue;
            }
            let get = |k: usize| vals[layer.inputs[k].0].as_ref();
            let p = |k: usize| &self.params.get(layer.params[k]).value;
            let out = match &layer.kind {
                LayerKind::Input { .. } => input.clone(),
                &LayerKind::Conv { kernel, stride, .. } => {
                    kernels::conv2d_forward(need(get(0), layer)?, p(0), Some(p(1)), stride, kernel / 2)
                }
                LayerKind::Deconv { .. } => kernels::deconv2d_forward(need(get(0), layer)?, p(0), Some(p(1))),
                LayerKind::Prelu { .. } => kernels::prelu_forward(need(get(0), layer)?, p(0).data()),
                LayerKind::Pool(kind) => {
                    let x = need(get(0), layer)?;
                    if opts.average_pooling || *kind == PoolKind::Avg {
                        kernels::avgpool2_forward(x)
                    } else {
                        kernels::maxpool2_forward(x).0
                    }
                }
                LayerKind::Fuse(mode) => {
                    let a = need(get(0), layer)?;
                    match (get(1), mode) {
                        (Some(b), FuseMode::Sum) => {
                            let mut s = a.clone();
                            s.add_assign(b);
                            s
                        }
                        (Some(b), FuseMode::Concat) => Tensor::concat_channels(a, b)?,
                        (None, FuseMode::Sum) => a.clone(),
                        (None, FuseMode::Concat) => Tensor::concat_channels(a, &Tensor::zeros(a.shape()))?,
                    }
                }
                &LayerKind::Residual { start, count } => {
                    let mut s = need(get(0), layer)?.clone();
                    s.add_assign(&need(get(1), layer)?.channels(start, count)?);
                    s
                }
            };
            for inp in &layer.inputs {
                if last[inp.0] == i {
                    vals[inp.0] = None;
                }
            }
            vals[i] = Some(out);
        }
        vals[self.arch.output.0]
            .take()
            .ok_or_else(|| Error::Config("output layer was not evaluated".into()))
    }
}

fn need<V>(v: Option<V>, layer: &Layer) -> Result<V> {
    v.ok_or_else(|| {
        Error::Config(format!(
            "layer {} depends on a blocked level; only upper levels can be blocked",
            layer.name
        ))
    })
}

fn init_tensor<T: Real, R: Rng>(spec: &ParamSpec, rng: &mut R) -> Tensor<T> {
    match spec.init {
        ParamInit::HeNormal { fan_in, gain } => {
            Tensor::randn(spec.shape, gain * (2.0 / fan_in as f64).sqrt(), rng)
        }
        ParamInit::Zero => Tensor::zeros(spec.shape),
        ParamInit::Constant(c) => Tensor::full(spec.shape, T::from_f64(c)),
        ParamInit::Bilinear { noise } => {
            let s = spec.shape;
            let taps = [0.5, 1.0, 0.5];
            Tensor::from_fn(s, |ic, oc, kh, kw| {
                let n: f64 = StandardNormal.sample(rng);
                let base = if ic % s.c == oc { taps[kh] * taps[kw] } else { 0.0 };
                T::from_f64(base + noise * n)
            })
        }
    }
}
