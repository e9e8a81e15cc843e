//! Builders for the pyramid network and its two comparison baselines.

use crate::autodiff::{FuseMode, ParamId};
use crate::error::{Error, Result};
use crate::model::graph::{
    Architecture, Layer, LayerId, LayerKind, ModelGraph, ModelKind, ParamInit, ParamSpec, PoolKind,
};
use crate::model::{CnpConfig, DownsampleMode};
use crate::tensor::Shape;

/// Std of the noise added to bilinear upsampling kernels at init.
const UPSAMPLE_INIT_NOISE: f64 = 1e-3;
/// Gain on the output convolution's init when the model predicts a residual,
/// so an untrained model starts close to the identity.
const RESIDUAL_OUTPUT_GAIN: f64 = 1e-3;

struct Builder {
    layers: Vec<Layer>,
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            layers: Vec::new(),
            specs: Vec::new(),
        }
    }

    fn param(&mut self, name: String, shape: Shape, init: ParamInit) -> ParamId {
        self.specs.push(ParamSpec { name, shape, init });
        ParamId(self.specs.len() - 1)
    }

    fn push(&mut self, name: String, level: usize, kind: LayerKind, inputs: Vec<LayerId>, params: Vec<ParamId>) -> LayerId {
        self.layers.push(Layer {
            name,
            level,
            kind,
            inputs,
            params,
        });
        LayerId(self.layers.len() - 1)
    }

    fn input(&mut self, channels: usize) -> LayerId {
        self.push("input".into(), 0, LayerKind::Input { channels }, vec![], vec![])
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_with_gain(
        &mut self,
        name: &str,
        level: usize,
        x: LayerId,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> LayerId {
        let w = self.param(
            format!("{name}.weight"),
            Shape::new(out_ch, in_ch, kernel, kernel),
            ParamInit::HeNormal {
                fan_in: in_ch * kernel * kernel,
                gain,
            },
        );
        let b = self.param(format!("{name}.bias"), Shape::new(1, out_ch, 1, 1), ParamInit::Zero);
        self.push(
            name.to_string(),
            level,
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
            },
            vec![x],
            vec![w, b],
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, name: &str, level: usize, x: LayerId, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> LayerId {
        self.conv_with_gain(name, level, x, in_ch, out_ch, kernel, stride, 1.0)
    }

    fn prelu(&mut self, name: &str, level: usize, x: LayerId, channels: usize) -> LayerId {
        let a = self.param(format!("{name}.slope"), Shape::new(1, channels, 1, 1), ParamInit::Constant(0.25));
        self.push(name.to_string(), level, LayerKind::Prelu { channels }, vec![x], vec![a])
    }

    fn deconv(&mut self, name: &str, level: usize, x: LayerId, in_ch: usize, out_ch: usize) -> LayerId {
        let w = self.param(
            format!("{name}.weight"),
            Shape::new(in_ch, out_ch, 3, 3),
            ParamInit::Bilinear {
                noise: UPSAMPLE_INIT_NOISE,
            },
        );
        let b = self.param(format!("{name}.bias"), Shape::new(1, out_ch, 1, 1), ParamInit::Zero);
        self.push(name.to_string(), level, LayerKind::Deconv { in_ch, out_ch }, vec![x], vec![w, b])
    }

    fn pool(&mut self, name: &str, level: usize, x: LayerId, kind: PoolKind) -> LayerId {
        self.push(name.to_string(), level, LayerKind::Pool(kind), vec![x], vec![])
    }

    fn fuse(&mut self, name: &str, level: usize, a: LayerId, b: LayerId, mode: FuseMode) -> LayerId {
        self.push(name.to_string(), level, LayerKind::Fuse(mode), vec![a, b], vec![])
    }

    /// Two 3×3 convolutions, each followed by PReLU.
    fn extraction(&mut self, prefix: &str, level: usize, x: LayerId, in_ch: usize, f: usize) -> LayerId {
        let c1 = self.conv(&format!("{prefix}.extract.conv1"), level, x, in_ch, f, 3, 1);
        let a1 = self.prelu(&format!("{prefix}.extract.prelu1"), level, c1, f);
        let c2 = self.conv(&format!("{prefix}.extract.conv2"), level, a1, f, f, 3, 1);
        self.prelu(&format!("{prefix}.extract.prelu2"), level, c2, f)
    }

    /// Shrink (1×1 to E), S × [3×3 conv + PReLU], expand (1×1 back to F).
    fn mapping(&mut self, prefix: &str, level: usize, x: LayerId, f: usize, e: usize, s: usize) -> LayerId {
        let mut h = self.conv(&format!("{prefix}.map.shrink"), level, x, f, e, 1, 1);
        for j in 1..=s {
            let c = self.conv(&format!("{prefix}.map.transform{j}"), level, h, e, e, 3, 1);
            h = self.prelu(&format!("{prefix}.map.transform{j}.prelu"), level, c, e);
        }
        self.conv(&format!("{prefix}.map.expand"), level, h, e, f, 1, 1)
    }

    /// PReLU + 3×3 conv, twice, ending in the output channel count.
    fn adjustment(&mut self, x: LayerId, cfg: &CnpConfig, f: usize) -> LayerId {
        let a1 = self.prelu("adjust.prelu1", 0, x, f);
        let c1 = self.conv("adjust.conv1", 0, a1, f, f, 3, 1);
        let a2 = self.prelu("adjust.prelu2", 0, c1, f);
        let gain = if cfg.residual { RESIDUAL_OUTPUT_GAIN } else { 1.0 };
        self.conv_with_gain("adjust.conv2", 0, a2, f, cfg.output_channels, 3, 1, gain)
    }

    fn residual(&mut self, pred: LayerId, input: LayerId, cfg: &CnpConfig) -> LayerId {
        if !cfg.residual {
            return pred;
        }
        self.push(
            "residual".into(),
            0,
            LayerKind::Residual {
                start: cfg.residual_channel,
                count: cfg.output_channels,
            },
            vec![pred, input],
            vec![],
        )
    }

    fn finish(self, kind: ModelKind, config: CnpConfig, output: LayerId) -> Architecture {
        Architecture {
            kind,
            config,
            layers: self.layers,
            param_specs: self.specs,
            output,
        }
    }
}

/// The convolutional neural pyramid.
///
/// Level 0 extracts features from the raw input with two 3×3 convolutions.
/// Each deeper level downsamples the previous level's extracted features and
/// runs one more extraction module, so level `i` sees `2(i+1)` extraction
/// convolutions. Every level has its own mapping branch. Reconstruction runs
/// from the deepest level up: upsample ×2 with a learned 3×3 transposed
/// convolution and fuse with the next finer level's mapping output. Two
/// adjustment convolutions produce the output.
pub fn build_cnp(config: &CnpConfig) -> Result<ModelGraph> {
    ModelGraph::from_arch(cnp_arch(config)?)
}

fn cnp_arch(config: &CnpConfig) -> Result<Architecture> {
    config.validate()?;
    let (f, e, s) = (config.feature_channels, config.embed_channels, config.transform_layers);
    let mut b = Builder::new();
    let input = b.input(config.input_channels);

    let mut extracted = Vec::with_capacity(config.levels);
    let mut x = b.extraction("L0", 0, input, config.input_channels, f);
    extracted.push(x);
    for level in 1..config.levels {
        let name = format!("L{level}.down");
        let down = match config.downsample {
            DownsampleMode::MaxPool => b.pool(&name, level, x, PoolKind::Max),
            DownsampleMode::StridedConv => b.conv(&name, level, x, f, f, 3, 2),
        };
        x = b.extraction(&format!("L{level}"), level, down, f, f);
        extracted.push(x);
    }

    let mapped: Vec<LayerId> = extracted
        .iter()
        .enumerate()
        .map(|(level, &feat)| b.mapping(&format!("L{level}"), level, feat, f, e, s))
        .collect();

    let mut recon = mapped[config.levels - 1];
    for level in (0..config.levels - 1).rev() {
        let up = b.deconv(&format!("L{}.up", level + 1), level + 1, recon, f, f);
        recon = b.fuse(&format!("L{level}.fuse"), level, mapped[level], up, config.fusion);
        if config.fusion == FuseMode::Concat {
            recon = b.conv(&format!("L{level}.fuse.project"), level, recon, 2 * f, f, 1, 1);
        }
    }

    let out = b.adjustment(recon, config, f);
    let out = b.residual(out, input, config);
    Ok(b.finish(ModelKind::Cnp, config.clone(), out))
}

/// Plain stack of `layers − 1` 3×3 conv + PReLU stages and a 1×1 output
/// conv, with no pyramid. Widths and channel counts come from `config`.
pub fn build_single_level(layers: usize, config: &CnpConfig) -> Result<ModelGraph> {
    if layers < 2 {
        return Err(Error::Config(format!("single-level model needs at least 2 layers, got {layers}")));
    }
    let config = CnpConfig {
        levels: 1,
        ..config.clone()
    };
    config.validate()?;
    let f = config.feature_channels;
    let mut b = Builder::new();
    let input = b.input(config.input_channels);
    let mut x = input;
    let mut in_ch = config.input_channels;
    for j in 1..layers {
        let c = b.conv(&format!("conv{j}"), 0, x, in_ch, f, 3, 1);
        x = b.prelu(&format!("prelu{j}"), 0, c, f);
        in_ch = f;
    }
    let gain = if config.residual { RESIDUAL_OUTPUT_GAIN } else { 1.0 };
    let out = b.conv_with_gain("output", 0, x, f, config.output_channels, 1, 1, gain);
    let out = b.residual(out, input, &config);
    ModelGraph::from_arch(b.finish(ModelKind::SingleLevel { layers }, config, out))
}

/// Baseline that runs identical, independent branches on 2^i-downsampled
/// copies of the raw input and sums their full-resolution outputs.
///
/// Each branch is one extraction module + mapping + `i` ×2 upsamplings.
/// There is no cross-level feature flow and no adaptive depth. The branch
/// width is chosen so the parameter count matches [`build_cnp`] on the same
/// config as closely as possible.
pub fn build_simple_multiscale(config: &CnpConfig) -> Result<ModelGraph> {
    config.validate()?;
    let target = cnp_arch(config)?.param_count();
    let mut best = (usize::MAX, config.feature_channels);
    for width in config.embed_channels + 1..=4 * config.feature_channels {
        let count = simple_arch(config, width)?.param_count();
        let diff = count.abs_diff(target);
        if diff < best.0 {
            best = (diff, width);
        }
    }
    simple_multiscale_with_width(config, best.1)
}

/// [`build_simple_multiscale`] with an explicit branch width.
pub fn simple_multiscale_with_width(config: &CnpConfig, width: usize) -> Result<ModelGraph> {
    ModelGraph::from_arch(simple_arch(config, width)?)
}

fn simple_arch(config: &CnpConfig, width: usize) -> Result<Architecture> {
    config.validate()?;
    if width <= config.embed_channels {
        return Err(Error::Config(format!(
            "branch width {width} must exceed embed channels {}",
            config.embed_channels
        )));
    }
    let (e, s) = (config.embed_channels, config.transform_layers);
    let f = width;
    let mut b = Builder::new();
    let input = b.input(config.input_channels);
    let mut total: Option<LayerId> = None;
    for level in 0..config.levels {
        let prefix = format!("B{level}");
        let mut x = input;
        for j in 1..=level {
            x = b.pool(&format!("{prefix}.down{j}"), level, x, PoolKind::Avg);
        }
        let feat = b.extraction(&prefix, level, x, config.input_channels, f);
        let mut y = b.mapping(&prefix, level, feat, f, e, s);
        for j in 1..=level {
            y = b.deconv(&format!("{prefix}.up{j}"), level, y, f, f);
        }
        total = Some(match total {
            None => y,
            Some(acc) => b.fuse(&format!("B{level}.sum"), 0, acc, y, FuseMode::Sum),
        });
    }
    let out = b.adjustment(total.expect("at least one level"), config, f);
    let out = b.residual(out, input, config);
    Ok(b.finish(ModelKind::SimpleMultiscale { branch_channels: width }, config.clone(), out))
}

/// Rebuilds an architecture from its kind and config.
pub fn rebuild(kind: &ModelKind, config: &CnpConfig) -> Result<ModelGraph> {
    match *kind {
        ModelKind::Cnp => build_cnp(config),
        ModelKind::SingleLevel { layers } => build_single_level(layers, config),
        ModelKind::SimpleMultiscale { branch_channels } => simple_multiscale_with_width(config, branch_channels),
    }
}
