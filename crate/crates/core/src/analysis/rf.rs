//! Receptive fields, computed from the layer description and measured by
//! backpropagation.
//!
//! Support is tracked one axis at a time (every kernel is square, so the 2-D
//! support of a position is the product of its row and column supports).
//! For each layer the input interval that can influence one position is
//! found by walking the DAG backwards and mapping intervals through each op
//! exactly. Positions below a pyramid level do not all see the same extent:
//! after a stride-2 transposed convolution even outputs read one input and
//! odd outputs read two. The reported field is therefore the maximum over
//! one full period of positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{Architecture, ForwardOptions, LayerId, LayerKind, ModelGraph};
use crate::tensor::{Real, Shape, Tensor};

/// Receptive field of one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfTrace {
    pub layer: String,
    /// Side of the largest input-pixel support of any single position.
    pub rf: usize,
    /// Input pixels between adjacent positions of this layer's map.
    pub jump: usize,
}

/// Receptive field of a model's output, with a per-layer trace in layer
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RfState {
    pub rf: usize,
    pub jump: usize,
    pub trace: Vec<RfTrace>,
}

/// Offset that keeps probe coordinates non-negative.
const ORIGIN: i64 = 1 << 24;

/// Input interval (inclusive) a layer-input must cover for the layer to
/// produce outputs `[lo, hi]`.
fn map_back(kind: &LayerKind, (lo, hi): (i64, i64)) -> (i64, i64) {
    match *kind {
        LayerKind::Conv { kernel, stride, .. } => {
            let (k, s, p) = (kernel as i64, stride as i64, (kernel / 2) as i64);
            (s * lo - p, s * hi - p + k - 1)
        }
        LayerKind::Pool(_) => (2 * lo, 2 * hi + 1),
        // out = 2·in − 1 + t for taps t ∈ {0, 1, 2}, so in ∈ [⌈(lo−1)/2⌉, ⌊(hi+1)/2⌋]
        LayerKind::Deconv { .. } => (lo.div_euclid(2), (hi + 1).div_euclid(2)),
        _ => (lo, hi),
    }
}

/// Input-pixel interval influencing positions `[lo, hi]` of `target`.
pub fn support(arch: &Architecture, target: LayerId, lo: i64, hi: i64) -> (i64, i64) {
    let mut span: Vec<Option<(i64, i64)>> = vec![None; arch.layers.len()];
    span[target.0] = Some((lo, hi));
    let mut result = (lo, hi);
    for i in (0..=target.0).rev() {
        let Some(iv) = span[i] else { continue };
        let layer = &arch.layers[i];
        if let LayerKind::Input { .. } = layer.kind {
            result = iv;
            continue;
        }
        let back = map_back(&layer.kind, iv);
        for inp in &layer.inputs {
            span[inp.0] = Some(match span[inp.0] {
                None => back,
                Some((a, b)) => (a.min(back.0), b.max(back.1)),
            });
        }
    }
    result
}

/// Input pixels per position for every layer.
pub fn jumps(arch: &Architecture) -> Vec<usize> {
    let mut jump = vec![1usize; arch.layers.len()];
    for (i, layer) in arch.layers.iter().enumerate() {
        let base = layer.inputs.first().map_or(1, |x| jump[x.0]);
        jump[i] = match layer.kind {
            LayerKind::Input { .. } => 1,
            LayerKind::Conv { stride, .. } => base * stride,
            LayerKind::Pool(_) => base * 2,
            LayerKind::Deconv { .. } => (base / 2).max(1),
            _ => base,
        };
    }
    jump
}

fn period(arch: &Architecture) -> i64 {
    jumps(arch).into_iter().max().unwrap_or(1) as i64
}

fn layer_rf(arch: &Architecture, id: LayerId, period: i64) -> usize {
    (0..period)
        .map(|t| {
            let (a, b) = support(arch, id, ORIGIN + t, ORIGIN + t);
            (b - a + 1) as usize
        })
        .max()
        .unwrap_or(1)
}

/// Receptive field of the output, composed layer by layer.
pub fn analytic_rf(arch: &Architecture) -> RfState {
    let p = period(arch);
    let jump = jumps(arch);
    let trace: Vec<RfTrace> = arch
        .layers
        .iter()
        .enumerate()
        .map(|(i, layer)| RfTrace {
            layer: layer.name.clone(),
            rf: layer_rf(arch, LayerId(i), p),
            jump: jump[i],
        })
        .collect();
    let out = &trace[arch.output.0];
    RfState {
        rf: out.rf,
        jump: out.jump,
        trace,
    }
}

/// Smallest valid square input for which the probe positions' supports fit
/// inside the image.
pub fn probe_min_size(arch: &Architecture) -> usize {
    let m = arch.size_multiple();
    let mut size = m;
    loop {
        if probe_fits(arch, size) {
            return size;
        }
        size += m;
    }
}

fn probe_center(arch: &Architecture, size: usize) -> usize {
    let m = arch.size_multiple();
    (size / 2) / m * m
}

fn probe_fits(arch: &Architecture, size: usize) -> bool {
    let c = probe_center(arch, size) as i64;
    (0..period(arch)).all(|t| {
        let (a, b) = support(arch, arch.output, c + t, c + t);
        a >= 0 && b < size as i64 && c + t < size as i64
    })
}

/// Measures the receptive field by backpropagating a unit gradient from
/// output positions near the centre and taking the bounding box of nonzero
/// input gradients.
///
/// The probe re-initializes a 64-bit copy of the model with random weights,
/// keeps PReLU slopes positive and swaps max pooling for average pooling, so
/// no path is masked and the architectural support is what gets measured.
/// One position per phase of the deepest level is probed and the largest
/// box is returned.
pub fn empirical_rf<T: Real>(graph: &ModelGraph<T>, input_size: usize) -> Result<usize> {
    let arch = &graph.arch;
    let required = probe_min_size(arch);
    if input_size < required || input_size % arch.size_multiple() != 0 || !probe_fits(arch, input_size) {
        return Err(Error::ProbeTooSmall {
            given: input_size,
            required,
        });
    }
    let mut probe: ModelGraph<f64> = graph.cast();
    probe.init_params(0x5eed_cafe);
    for p in probe.params.iter_mut() {
        if p.name.ends_with(".slope") {
            p.value.fill(0.25);
        }
    }
    let opts = ForwardOptions {
        active_levels: None,
        average_pooling: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let shape = Shape::new(1, arch.input_channels(), input_size, input_size);
    let image = Tensor::<f64>::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0));
    let c = probe_center(arch, input_size);

    let mut tape = Tape::new();
    let x = tape.leaf(image);
    let y = probe.forward_tape(&mut tape, x, opts)?;
    let mut best = 0;
    for t in 0..period(arch) as usize {
        let mut seed = Tensor::zeros(tape.shape(y));
        seed.set(0, 0, c + t, c + t, 1.0);
        let grads = tape.backward_from(y, seed);
        let g = grads.get(x).expect("input gradient");
        best = best.max(support_side(g));
    }
    Ok(best)
}

/// Side of the bounding box of exactly-nonzero entries (over all channels).
fn support_side(g: &Tensor<f64>) -> usize {
    let s = g.shape();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for c in 0..s.c {
        for h in 0..s.h {
            for w in 0..s.w {
                if g.at(0, c, h, w) != 0.0 {
                    r0 = r0.min(h);
                    r1 = r1.max(h);
                    c0 = c0.min(w);
                    c1 = c1.max(w);
                }
            }
        }
    }
    if r0 == usize::MAX {
        0
    } else {
        (r1 - r0 + 1).max(c1 - c0 + 1)
    }
}
