//! Reverse-mode autodiff over a linear tape.
//!
//! Every op appends a node holding its forward value. Inputs always precede
//! their consumers, so walking the tape backwards is a valid reverse
//! topological order and each node is visited exactly once.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::autodiff::kernels;
use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuseMode {
    Sum,
    Concat,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    Deconv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    MaxPool {
        x: usize,
        argmax: Vec<u32>,
    },
    AvgPool {
        x: usize,
    },
    Prelu {
        x: usize,
        slope: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Channels {
        x: usize,
        start: usize,
    },
    Crop {
        x: usize,
        top: usize,
        left: usize,
    },
    Scale {
        x: usize,
        k: T,
    },
    ImageGradient {
        x: usize,
    },
    MeanSquare {
        x: usize,
    },
    Sum {
        x: usize,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of every node with respect to a seeded output.
#[derive(Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Hash of every data-dependent branch taken so far: max-pool winners and
    /// PReLU input signs. Two evaluations with equal signatures lie in the
    /// same piecewise-linear region.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::MaxPool { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                &Op::Prelu { x, .. } => {
                    i.hash(&mut h);
                    for chunk in self.nodes[x].value.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (k, v)| acc | ((*v >= T::zero()) as u64) << k);
                        bits.hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Differentiable input (gradients are tracked).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Snapshot of a parameter; [`Tape::backward`] routes its gradient back.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).value.clone());
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws.c != xs.c {
            return Err(Error::shape(
                "conv2d",
                format!("weight expects {} input channels, input has {} ({xs})", ws.c, xs.c),
            ));
        }
        if ws.h != ws.w {
            return Err(Error::shape("conv2d", format!("kernel must be square, got {}x{}", ws.h, ws.w)));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        if xs.h + 2 * pad < ws.h || xs.w + 2 * pad < ws.w {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {} larger than padded input {}x{}", ws.h, xs.h + 2 * pad, xs.w + 2 * pad),
            ));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias has {} values for {} output channels", bs.numel(), ws.n),
                ));
            }
        }
        let value = kernels::conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            pad,
        );
        let needs = self.needs(x.0) || self.needs(weight.0) || bias.is_some_and(|b| self.needs(b.0));
        Ok(self.push(
            value,
            Op::Conv2d {
                x: x.0,
                w: weight.0,
                b: bias.map(|b| b.0),
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Stride-2, 3×3 transposed convolution with output exactly 2× the input.
    /// `weight` is `[inC, outC, 3, 3]`.
    pub fn deconv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws.n != xs.c {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("weight expects {} input channels, input has {} ({xs})", ws.n, xs.c),
            ));
        }
        if ws.h != 3 || ws.w != 3 {
            return Err(Error::shape("transposed_conv2d", format!("kernel must be 3x3, got {}x{}", ws.h, ws.w)));
        }
        if let Some(b) = bias {
            if self.shape(b).numel() != ws.c {
                return Err(Error::shape(
                    "transposed_conv2d",
                    format!("bias has {} values for {} output channels", self.shape(b).numel(), ws.c),
                ));
            }
        }
        let value = kernels::deconv2d_forward(self.value(x), self.value(weight), bias.map(|b| self.value(b)));
        let needs = self.needs(x.0) || self.needs(weight.0) || bias.is_some_and(|b| self.needs(b.0));
        Ok(self.push(
            value,
            Op::Deconv2d {
                x: x.0,
                w: weight.0,
                b: bias.map(|b| b.0),
            },
            needs,
        ))
    }

    fn check_even(&self, op: &'static str, x: Var) -> Result<()> {
        let s = self.shape(x);
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::shape(
                op,
                format!("spatial dims {}x{} must be even; reflect-pad the input to a multiple of 2^(levels-1)", s.h, s.w),
            ));
        }
        Ok(())
    }

    /// 2×2 stride-2 max pooling.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        self.check_even("maxpool2d", x)?;
        let (value, argmax) = kernels::maxpool2_forward(self.value(x));
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::MaxPool { x: x.0, argmax }, needs))
    }

    /// 2×2 stride-2 average pooling.
    pub fn avgpool2d(&mut self, x: Var) -> Result<Var> {
        self.check_even("avgpool2d", x)?;
        let value = kernels::avgpool2_forward(self.value(x));
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::AvgPool { x: x.0 }, needs))
    }

    /// Per-channel PReLU; `slope` must hold one value per channel.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let c = self.shape(x).c;
        let n = self.shape(slope).numel();
        if n != c {
            return Err(Error::shape("prelu", format!("{n} slopes for {c} channels")));
        }
        let value = kernels::prelu_forward(self.value(x), self.value(slope).data());
        let needs = self.needs(x.0) || self.needs(slope.0);
        Ok(self.push(value, Op::Prelu { x: x.0, slope: slope.0 }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", format!("{sa} vs {sb}")));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("sub", format!("{sa} vs {sb}")));
        }
        let mut value = self.value(a).clone();
        for (d, &v) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *d -= v;
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Sub { a: a.0, b: b.0 }, needs))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Concat { a: a.0, b: b.0 }, needs))
    }

    pub fn fuse(&mut self, a: Var, b: Var, mode: FuseMode) -> Result<Var> {
        match mode {
            FuseMode::Sum => self.add(a, b),
            FuseMode::Concat => self.concat(a, b),
        }
    }

    /// Channels `start..start + count`.
    pub fn channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let value = self.value(x).channels(start, count)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Channels { x: x.0, start }, needs))
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let value = self.value(x).crop(top, left, h, w)?;
        let needs = self.needs(x.0);
        Ok(self.push(value, Op::Crop { x: x.0, top, left }, needs))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let value = self.value(x).map(|v| v * k);
        let needs = self.needs(x.0);
        self.push(value, Op::Scale { x: x.0, k }, needs)
    }

    /// Forward-difference image gradient, `2C` output channels (dx then dy).
    pub fn image_gradient(&mut self, x: Var) -> Var {
        let value = kernels::image_gradient_forward(self.value(x));
        let needs = self.needs(x.0);
        self.push(value, Op::ImageGradient { x: x.0 }, needs)
    }

    /// Mean of squared elements, as a 1×1×1×1 tensor.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let mut acc = 0.0f64;
        for &v in t.data() {
            let v = v.as_f64();
            acc += v * v;
        }
        let value = Tensor::scalar(T::from_f64(acc / t.numel().max(1) as f64));
        let needs = self.needs(x.0);
        self.push(value, Op::MeanSquare { x: x.0 }, needs)
    }

    /// Sum of all elements, as a 1×1×1×1 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(T::from_f64(self.value(x).sum()));
        let needs = self.needs(x.0);
        self.push(value, Op::Sum { x: x.0 }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Backpropagates from a scalar loss and accumulates parameter gradients
    /// (`+=`) into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward_scalar(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(id), Some(g)) = (node.param, grads.grads[i].as_ref()) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    /// Gradients of a scalar with respect to every node.
    pub fn backward_scalar(&self, loss: Var) -> Result<Gradients<T>> {
        let s = self.shape(loss);
        if s != Shape::SCALAR {
            return Err(Error::NonScalarLoss(s.to_string()));
        }
        Ok(self.backward_from(loss, Tensor::scalar(T::one())))
    }

    /// Vector-Jacobian product: gradients of `⟨output, seed⟩`.
    pub fn backward_from(&self, output: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(output), "seed shape must match output");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], i: usize) -> Option<&'g mut Tensor<T>> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let shape = self.nodes[i].value.shape();
        Some(grads[i].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b, stride, pad } => {
                let mut gx = self.take_slot(grads, x);
                let mut gw = self.take_slot(grads, w);
                let mut gb = b.and_then(|b| self.take_slot(grads, b));
                kernels::conv2d_backward(
                    &self.nodes[x].value,
                    &self.nodes[w].value,
                    g,
                    stride,
                    pad,
                    gx.as_mut(),
                    gw.as_mut(),
                    gb.as_mut(),
                );
                restore(grads, x, gx);
                restore(grads, w, gw);
                if let Some(b) = b {
                    restore(grads, b, gb);
                }
            }
            &Op::Deconv2d { x, w, b } => {
                let mut gx = self.take_slot(grads, x);
                let mut gw = self.take_slot(grads, w);
                let mut gb = b.and_then(|b| self.take_slot(grads, b));
                kernels::deconv2d_backward(
                    &self.nodes[x].value,
                    &self.nodes[w].value,
                    g,
                    gx.as_mut(),
                    gw.as_mut(),
                    gb.as_mut(),
                );
                restore(grads, x, gx);
                restore(grads, w, gw);
                if let Some(b) = b {
                    restore(grads, b, gb);
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(gx) = self.slot(grads, *x) {
                    kernels::maxpool2_backward(argmax, g, gx);
                }
            }
            &Op::AvgPool { x } => {
                if let Some(gx) = self.slot(grads, x) {
                    kernels::avgpool2_backward(g, gx);
                }
            }
            &Op::Prelu { x, slope } => {
                let mut gx = self.take_slot(grads, x);
                let mut gs = self.take_slot(grads, slope);
                kernels::prelu_backward(
                    &self.nodes[x].value,
                    self.nodes[slope].value.data(),
                    g,
                    gx.as_mut(),
                    gs.as_mut().map(|t| t.data_mut()),
                );
                restore(grads, x, gx);
                restore(grads, slope, gs);
            }
            &Op::Add { a, b } => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, b) {
                    gb.add_assign(g);
                }
            }
            &Op::Sub { a, b } => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, b) {
                    for (d, &v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *d -= v;
                    }
                }
            }
            &Op::Concat { a, b } => {
                let ca = self.nodes[a].value.shape().c;
                let cb = self.nodes[b].value.shape().c;
                if let Some(ga) = self.slot(grads, a) {
                    ga.add_assign(&g.channels(0, ca).expect("concat grad split"));
                }
                if let Some(gb) = self.slot(grads, b) {
                    gb.add_assign(&g.channels(ca, cb).expect("concat grad split"));
                }
            }
            &Op::Channels { x, start } => {
                if let Some(gx) = self.slot(grads, x) {
                    let xs = gx.shape();
                    let gs = g.shape();
                    let plane = xs.plane();
                    for n in 0..xs.n {
                        let dst = &mut gx.data_mut()[(n * xs.c + start) * plane..(n * xs.c + start + gs.c) * plane];
                        let src = &g.data()[n * gs.item()..(n + 1) * gs.item()];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
            &Op::Crop { x, top, left } => {
                if let Some(gx) = self.slot(grads, x) {
                    let xs = gx.shape();
                    let gs = g.shape();
                    for p in 0..xs.n * xs.c {
                        for r in 0..gs.h {
                            let dst = (p * xs.h + top + r) * xs.w + left;
                            let src = (p * gs.h + r) * gs.w;
                            for c in 0..gs.w {
                                gx.data_mut()[dst + c] += g.data()[src + c];
                            }
                        }
                    }
                }
            }
            &Op::Scale { x, k } => {
                if let Some(gx) = self.slot(grads, x) {
                    for (d, &v) in gx.data_mut().iter_mut().zip(g.data()) {
                        *d += k * v;
                    }
                }
            }
            &Op::ImageGradient { x } => {
                if let Some(gx) = self.slot(grads, x) {
                    kernels::image_gradient_backward(g, gx);
                }
            }
            &Op::MeanSquare { x } => {
                let xv = &self.nodes[x].value;
                let k = T::from_f64(2.0 / xv.numel().max(1) as f64) * g.item();
                if let Some(gx) = self.slot(grads, x) {
                    for (d, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        *d += k * v;
                    }
                }
            }
            &Op::Sum { x } => {
                let s = g.item();
                if let Some(gx) = self.slot(grads, x) {
                    for d in gx.data_mut() {
                        *d += s;
                    }
                }
            }
        }
    }

    /// Moves a gradient slot out so several can be borrowed mutably at once.
    fn take_slot(&self, grads: &mut [Option<Tensor<T>>], i: usize) -> Option<Tensor<T>> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let shape = self.nodes[i].value.shape();
        Some(grads[i].take().unwrap_or_else(|| Tensor::zeros(shape)))
    }
}

fn restore<T: Real>(grads: &mut [Option<Tensor<T>>], i: usize, g: Option<Tensor<T>>) {
    if g.is_some() {
        grads[i] = g;
    }
}
