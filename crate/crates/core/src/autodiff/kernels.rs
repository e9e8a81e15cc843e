//! Forward and backward kernels on raw buffers. These know nothing about the
//! tape; `tape.rs` wires them together.

use crate::tensor::{Real, Shape, Tensor};

/// Geometry of a square-kernel convolution over one plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let out = |len: usize| (len + 2 * pad - kernel) / stride + 1;
        ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: out(height),
            out_w: out(width),
        }
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1, stride 1, no padding: the column matrix is the input itself.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `ow` whose input column `ow·stride + kw − pad` lies
/// inside `0..width`.
fn valid_span(g: &ConvGeom, kw: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kw).div_ceil(g.stride).min(g.out_w);
    let hi = (g.width + g.pad).saturating_sub(kw).div_ceil(g.stride).clamp(lo, g.out_w);
    (lo, hi)
}

/// Unfolds one C×H×W image into a `(C·k·k) × (outH·outW)` column matrix.
/// Row index is `(c·k + kh)·k + kw`, matching `[outC, inC, k, k]` weights.
pub fn im2col<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    debug_assert_eq!(cols.len(), g.rows() * plane);
    for c in 0..g.channels {
        let src = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..k {
            for kw in 0..k {
                let (lo, hi) = valid_span(g, kw);
                let row = (c * k + kh) * k + kw;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    let line = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let first = lo * g.stride + kw - g.pad;
                    let src_row = &src[ih as usize * g.width..(ih as usize + 1) * g.width];
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src_row[first..first + hi - lo]);
                    } else {
                        for (v, &x) in line[lo..hi].iter_mut().zip(src_row[first..].iter().step_by(g.stride)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a C×H×W image.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let k = g.kernel;
    let plane = g.out_plane();
    for c in 0..g.channels {
        let dst = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for kh in 0..k {
            for kw in 0..k {
                let (lo, hi) = valid_span(g, kw);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kw - g.pad;
                let row = (c * k + kh) * k + kw;
                let src = &cols[row * plane..(row + 1) * plane];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[ih as usize * g.width + first..(ih as usize + 1) * g.width];
                    let line = &src[oh * g.out_w + lo..oh * g.out_w + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst_row.iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst_row.iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation forward. `weight` is `[outC, inC, k, k]`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let xs = x.shape();
    let ws = weight.shape();
    let g = ConvGeom::new(xs.c, xs.h, xs.w, ws.h, stride, pad);
    let out_c = ws.n;
    let plane = g.out_plane();
    let rows = g.rows();
    let mut out = Tensor::zeros(Shape::new(xs.n, out_c, g.out_h, g.out_w));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plane] };
    for n in 0..xs.n {
        let img = &x.data()[n * xs.item()..(n + 1) * xs.item()];
        let b: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, &g, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[n * out_c * plane..(n + 1) * out_c * plane];
        if let Some(bias) = bias {
            for (oc, chunk) in dst.chunks_exact_mut(plane).enumerate() {
                chunk.fill(bias.data()[oc]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            out_c,
            rows,
            plane,
            weight.data(),
            (rows as isize, 1),
            b,
            (plane as isize, 1),
            beta,
            dst,
            plane as isize,
        );
    }
    out
}

/// Accumulates gradients of a convolution. Any of the outputs can be skipped.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    mut grad_x: Option<&mut Tensor<T>>,
    mut grad_w: Option<&mut Tensor<T>>,
    mut grad_b: Option<&mut Tensor<T>>,
) {
    let xs = x.shape();
    let ws = weight.shape();
    let g = ConvGeom::new(xs.c, xs.h, xs.w, ws.h, stride, pad);
    let out_c = ws.n;
    let plane = g.out_plane();
    let rows = g.rows();
    let mut cols = vec![T::zero(); rows * plane];
    for n in 0..xs.n {
        let go = &grad_out.data()[n * out_c * plane..(n + 1) * out_c * plane];
        if let Some(gb) = grad_b.as_deref_mut() {
            for (oc, chunk) in go.chunks_exact(plane).enumerate() {
                let mut s = T::zero();
                for &v in chunk {
                    s += v;
                }
                gb.data_mut()[oc] += s;
            }
        }
        if let Some(gw) = grad_w.as_deref_mut() {
            let img = &x.data()[n * xs.item()..(n + 1) * xs.item()];
            let b: &[T] = if g.is_pointwise() {
                img
            } else {
                im2col(img, &g, &mut cols);
                &cols
            };
            // dW[oc, r] += Σ_p dOut[oc, p] · cols[r, p]
            T::gemm(
                out_c,
                plane,
                rows,
                go,
                (plane as isize, 1),
                b,
                (1, plane as isize),
                T::one(),
                gw.data_mut(),
                rows as isize,
            );
        }
        if let Some(gx) = grad_x.as_deref_mut() {
            let dst = &mut gx.data_mut()[n * xs.item()..(n + 1) * xs.item()];
            if g.is_pointwise() {
                T::gemm(
                    rows,
                    out_c,
                    plane,
                    weight.data(),
                    (1, rows as isize),
                    go,
                    (plane as isize, 1),
                    T::one(),
                    dst,
                    plane as isize,
                );
            } else {
                T::gemm(
                    rows,
                    out_c,
                    plane,
                    weight.data(),
                    (1, rows as isize),
                    go,
                    (plane as isize, 1),
                    T::zero(),
                    &mut cols,
                    plane as isize,
                );
                col2im(&cols, &g, dst);
            }
        }
    }
}

/// Geometry of the stride-2 transposed convolution that exactly doubles H
/// and W (kernel 3, padding 1, output padding 1), expressed as the conv it
/// is the adjoint of.
pub fn deconv_geom(out_channels: usize, in_h: usize, in_w: usize) -> ConvGeom {
    let g = ConvGeom::new(out_channels, 2 * in_h, 2 * in_w, 3, 2, 1);
    debug_assert_eq!((g.out_h, g.out_w), (in_h, in_w));
    g
}

/// Transposed convolution forward. `weight` is `[inC, outC, 3, 3]`.
pub fn deconv2d_forward<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let xs = x.shape();
    let out_c = weight.shape().c;
    let g = deconv_geom(out_c, xs.h, xs.w);
    let rows = g.rows();
    let plane_in = xs.plane();
    let plane_out = g.height * g.width;
    let mut out = Tensor::zeros(Shape::new(xs.n, out_c, g.height, g.width));
    let mut cols = vec![T::zero(); rows * plane_in];
    for n in 0..xs.n {
        let img = &x.data()[n * xs.item()..(n + 1) * xs.item()];
        // cols[r, p] = Σ_ic W[ic, r] · x[ic, p]
        T::gemm(
            rows,
            xs.c,
            plane_in,
            weight.data(),
            (1, rows as isize),
            img,
            (plane_in as isize, 1),
            T::zero(),
            &mut cols,
            plane_in as isize,
        );
        let dst = &mut out.data_mut()[n * out_c * plane_out..(n + 1) * out_c * plane_out];
        col2im(&cols, &g, dst);
        if let Some(bias) = bias {
            for (oc, chunk) in dst.chunks_exact_mut(plane_out).enumerate() {
                let b = bias.data()[oc];
                for v in chunk {
                    *v += b;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn deconv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    mut grad_x: Option<&mut Tensor<T>>,
    mut grad_w: Option<&mut Tensor<T>>,
    mut grad_b: Option<&mut Tensor<T>>,
) {
    let xs = x.shape();
    let out_c = weight.shape().c;
    let g = deconv_geom(out_c, xs.h, xs.w);
    let rows = g.rows();
    let plane_in = xs.plane();
    let plane_out = g.height * g.width;
    let mut cols = vec![T::zero(); rows * plane_in];
    for n in 0..xs.n {
        let go = &grad_out.data()[n * out_c * plane_out..(n + 1) * out_c * plane_out];
        if let Some(gb) = grad_b.as_deref_mut() {
            for (oc, chunk) in go.chunks_exact(plane_out).enumerate() {
                let mut s = T::zero();
                for &v in chunk {
                    s += v;
                }
                gb.data_mut()[oc] += s;
            }
        }
        if grad_x.is_none() && grad_w.is_none() {
            continue;
        }
        im2col(go, &g, &mut cols);
        if let Some(gx) = grad_x.as_deref_mut() {
            let dst = &mut gx.data_mut()[n * xs.item()..(n + 1) * xs.item()];
            T::gemm(
                xs.c,
                rows,
                plane_in,
                weight.data(),
                (rows as isize, 1),
                &cols,
                (plane_in as isize, 1),
                T::one(),
                dst,
                plane_in as isize,
            );
        }
        if let Some(gw) = grad_w.as_deref_mut() {
            let img = &x.data()[n * xs.item()..(n + 1) * xs.item()];
            T::gemm(
                xs.c,
                plane_in,
                rows,
                img,
                (plane_in as isize, 1),
                &cols,
                (1, plane_in as isize),
                T::one(),
                gw.data_mut(),
                rows as isize,
            );
        }
    }
}

/// 2×2 stride-2 max pooling. Returns the output and, per output element, the
/// flat input index of the winner (ties go to the first in scan order).
pub fn maxpool2_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut argmax = Vec::with_capacity(out.numel());
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for p in 0..s.n * s.c {
        let base = p * s.plane();
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * s.w + 2 * j;
                let candidates = [top, top + 1, top + s.w, top + s.w + 1];
                let mut best = candidates[0];
                for &c in &candidates[1..] {
                    if src[c] > src[best] {
                        best = c;
                    }
                }
                dst[o] = src[best];
                argmax.push(best as u32);
                o += 1;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward<T: Real>(argmax: &[u32], grad_out: &Tensor<T>, grad_x: &mut Tensor<T>) {
    let gx = grad_x.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gx[idx as usize] += g;
    }
}

/// 2×2 stride-2 average pooling.
pub fn avgpool2_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let quarter = T::from_f64(0.25);
    let src = x.data();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let dst = out.data_mut();
    let mut o = 0;
    for p in 0..s.n * s.c {
        let base = p * s.plane();
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * s.w + 2 * j;
                dst[o] = quarter * (src[top] + src[top + 1] + src[top + s.w] + src[top + s.w + 1]);
                o += 1;
            }
        }
    }
    out
}

pub fn avgpool2_backward<T: Real>(grad_out: &Tensor<T>, grad_x: &mut Tensor<T>) {
    let s = grad_x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let quarter = T::from_f64(0.25);
    let go = grad_out.data();
    let gx = grad_x.data_mut();
    let mut o = 0;
    for p in 0..s.n * s.c {
        let base = p * s.plane();
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * s.w + 2 * j;
                let g = quarter * go[o];
                gx[top] += g;
                gx[top + 1] += g;
                gx[top + s.w] += g;
                gx[top + s.w + 1] += g;
                o += 1;
            }
        }
    }
}

/// Per-channel PReLU; `slope` holds one value per channel.
pub fn prelu_forward<T: Real>(x: &Tensor<T>, slope: &[T]) -> Tensor<T> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = x.clone();
    for (p, chunk) in out.data_mut().chunks_exact_mut(plane.max(1)).enumerate() {
        let a = slope[p % s.c];
        for v in chunk {
            if *v < T::zero() {
                *v = a * *v;
            }
        }
    }
    out
}

pub fn prelu_backward<T: Real>(
    x: &Tensor<T>,
    slope: &[T],
    grad_out: &Tensor<T>,
    grad_x: Option<&mut Tensor<T>>,
    grad_slope: Option<&mut [T]>,
) {
    let s = x.shape();
    let plane = s.plane().max(1);
    if let Some(gx) = grad_x {
        for (p, (dst, (src, go))) in gx
            .data_mut()
            .chunks_exact_mut(plane)
            .zip(x.data().chunks_exact(plane).zip(grad_out.data().chunks_exact(plane)))
            .enumerate()
        {
            let a = slope[p % s.c];
            for ((d, &v), &g) in dst.iter_mut().zip(src).zip(go) {
                *d += if v < T::zero() { a * g } else { g };
            }
        }
    }
    if let Some(gs) = grad_slope {
        for (p, (src, go)) in x
            .data()
            .chunks_exact(plane)
            .zip(grad_out.data().chunks_exact(plane))
            .enumerate()
        {
            let mut acc = T::zero();
            for (&v, &g) in src.iter().zip(go) {
                if v < T::zero() {
                    acc += v * g;
                }
            }
            gs[p % s.c] += acc;
        }
    }
}

/// Forward differences along width then height. Output has `2C` channels:
/// `dx` for channels `0..C` and `dy` for `C..2C`, zero on the last column/row.
pub fn image_gradient_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut out = Tensor::zeros(s.with_channels(2 * s.c));
    let src = x.data();
    let (h, w) = (s.h, s.w);
    for n in 0..s.n {
        for c in 0..s.c {
            let xin = &src[(n * s.c + c) * h * w..(n * s.c + c + 1) * h * w];
            let dx_base = (n * 2 * s.c + c) * h * w;
            let dy_base = (n * 2 * s.c + s.c + c) * h * w;
            let dst = out.data_mut();
            for i in 0..h {
                for j in 0..w {
                    let v = xin[i * w + j];
                    if j + 1 < w {
                        dst[dx_base + i * w + j] = xin[i * w + j + 1] - v;
                    }
                    if i + 1 < h {
                        dst[dy_base + i * w + j] = xin[(i + 1) * w + j] - v;
                    }
                }
            }
        }
    }
    out
}

pub fn image_gradient_backward<T: Real>(grad_out: &Tensor<T>, grad_x: &mut Tensor<T>) {
    let s = grad_x.shape();
    let (h, w) = (s.h, s.w);
    let go = grad_out.data();
    let gx = grad_x.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * h * w;
            let dx_base = (n * 2 * s.c + c) * h * w;
            let dy_base = (n * 2 * s.c + s.c + c) * h * w;
            for i in 0..h {
                for j in 0..w {
                    if j + 1 < w {
                        let g = go[dx_base + i * w + j];
                        gx[base + i * w + j + 1] += g;
                        gx[base + i * w + j] -= g;
                    }
                    if i + 1 < h {
                        let g = go[dy_base + i * w + j];
                        gx[base + (i + 1) * w + j] += g;
                        gx[base + i * w + j] -= g;
                    }
                }
            }
        }
    }
}
