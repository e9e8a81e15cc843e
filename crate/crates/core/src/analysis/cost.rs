//! Analytic compute and memory model.
//!
//! Convolutions cost `outC·outH·outW·inC·k²` multiply-accumulates; a
//! transposed convolution costs the same as the convolution it is the
//! adjoint of. Pooling, PReLU, fusion and residual adds count one op per
//! output element. Memory is measured in activation elements for a batch of
//! one.

use crate::analysis::rf::analytic_rf;
use crate::model::{Architecture, LayerKind};
use crate::tensor::Shape;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub level: usize,
    pub output: Shape,
    pub macs: u64,
    pub params: u64,
}

/// Totals for one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct LevelCost {
    pub macs: u64,
    pub params: u64,
    /// Sum of the output sizes of the level's layers.
    pub activations: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerCost>,
    pub levels: Vec<LevelCost>,
    pub total: LevelCost,
    /// Largest number of simultaneously live activation elements when the
    /// layers run in order and each map is freed after its last consumer.
    pub peak_live: u64,
    pub receptive_field: usize,
}

impl CostReport {
    /// MACs summed over layers whose name starts with `prefix`.
    pub fn macs_with_prefix(&self, prefix: &str) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.name.starts_with(prefix))
            .map(|l| l.macs)
            .sum()
    }

    /// MACs of the feature-extraction module at pyramid level `level`.
    pub fn extraction_macs(&self, level: usize) -> u64 {
        self.macs_with_prefix(&format!("L{level}.extract."))
    }
}

/// Cost of one forward pass on an `height × width` input.
pub fn cost_report(arch: &Architecture, height: usize, width: usize) -> CostReport {
    let mut shapes: Vec<Shape> = Vec::with_capacity(arch.layers.len());
    let mut layers = Vec::with_capacity(arch.layers.len());
    for layer in &arch.layers {
        let input = layer.inputs.first().map(|x| shapes[x.0]);
        let (out, macs) = match layer.kind {
            LayerKind::Input { channels } => (Shape::new(1, channels, height, width), 0),
            LayerKind::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let s = input.expect("conv input");
                let pad = kernel / 2;
                let oh = (s.h + 2 * pad - kernel) / stride + 1;
                let ow = (s.w + 2 * pad - kernel) / stride + 1;
                let out = Shape::new(1, out_ch, oh, ow);
                (out, (out_ch * oh * ow * in_ch * kernel * kernel) as u64)
            }
            LayerKind::Deconv { in_ch, out_ch } => {
                let s = input.expect("deconv input");
                let out = Shape::new(1, out_ch, 2 * s.h, 2 * s.w);
                (out, (in_ch * s.h * s.w * out_ch * 9) as u64)
            }
            LayerKind::Pool(_) => {
                let s = input.expect("pool input");
                let out = s.with_spatial(s.h / 2, s.w / 2);
                (out, out.numel() as u64)
            }
            LayerKind::Fuse(mode) => {
                let a = input.expect("fuse input");
                let b = shapes[layer.inputs[1].0];
                let out = match mode {
                    crate::autodiff::FuseMode::Sum => a,
                    crate::autodiff::FuseMode::Concat => a.with_channels(a.c + b.c),
                };
                (out, out.numel() as u64)
            }
            LayerKind::Prelu { .. } | LayerKind::Residual { .. } => {
                let s = input.expect("elementwise input");
                (s, s.numel() as u64)
            }
        };
        shapes.push(out);
        layers.push(LayerCost {
            name: layer.name.clone(),
            level: layer.level,
            output: out,
            macs,
            params: layer
                .params
                .iter()
                .map(|p| arch.param_specs[p.0].shape.numel() as u64)
                .sum(),
        });
    }

    let mut levels = vec![LevelCost::default(); arch.levels()];
    for l in &layers {
        let e = &mut levels[l.level];
        e.macs += l.macs;
        e.params += l.params;
        e.activations += l.output.numel() as u64;
    }
    let total = levels.iter().fold(LevelCost::default(), |acc, l| LevelCost {
        macs: acc.macs + l.macs,
        params: acc.params + l.params,
        activations: acc.activations + l.activations,
    });

    let last = arch.last_use();
    let mut live = 0u64;
    let mut peak = 0u64;
    for (i, layer) in arch.layers.iter().enumerate() {
        live += shapes[i].numel() as u64;
        peak = peak.max(live);
        for inp in &layer.inputs {
            if last[inp.0] == i {
                live -= shapes[inp.0].numel() as u64;
            }
        }
    }

    CostReport {
        height,
        width,
        layers,
        levels,
        total,
        peak_live: peak,
        receptive_field: analytic_rf(arch).rf,
    }
}
