//! Dense 4-D tensors in NCHW layout.

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Dtype code used by the checkpoint format.
    const DTYPE: u8;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a·b + beta·c` with explicit row/column strides, `a` is `m×k`,
    /// `b` is `k×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_row_stride: isize,
    );
}

macro_rules! gemm_bounds {
    ($m:expr, $k:expr, $n:expr, $a:expr, $sa:expr, $b:expr, $sb:expr, $c:expr, $rc:expr) => {
        debug_assert!($m == 0 || $k == 0 || span($m, $k, $sa) <= $a.len());
        debug_assert!($k == 0 || $n == 0 || span($k, $n, $sb) <= $b.len());
        debug_assert!($m == 0 || $n == 0 || span($m, $n, ($rc, 1)) <= $c.len());
    };
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

impl Real for f32 {
    const DTYPE: u8 = 0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        sa: (isize, isize),
        b: &[f32],
        sb: (isize, isize),
        beta: f32,
        c: &mut [f32],
        rc: isize,
    ) {
        gemm_bounds!(m, k, n, a, sa, b, sb, c, rc);
        // SAFETY: the strides and extents were checked against the slice
        // lengths by the callers (and by the debug assertions above).
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                rc,
                1,
            );
        }
    }
}

impl Real for f64 {
    const DTYPE: u8 = 1;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        sa: (isize, isize),
        b: &[f64],
        sb: (isize, isize),
        beta: f64,
        c: &mut [f64],
        rc: isize,
    ) {
        gemm_bounds!(m, k, n, a, sa, b, sb, c, rc);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                sa.0,
                sa.1,
                b.as_ptr(),
                sb.0,
                sb.1,
                beta,
                c.as_mut_ptr(),
                rc,
                1,
            );
        }
    }
}

/// Batch, channel, height and width counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape {
        n: 1,
        c: 1,
        h: 1,
        w: 1,
    };

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one spatial plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn with_spatial(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from([n, c, h, w]: [usize; 4]) -> Self {
        Shape { n, c, h, w }
    }
}

/// Contiguous row-major NCHW tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape::SCALAR, value)
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} values do not fill shape {shape}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Standard-normal samples scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape>, std: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * std)
            })
            .collect();
        Tensor { shape, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Shape>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| T::from_f64(rng.random_range(lo..hi)))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// The single value of a 1x1x1x1 tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Inner product over all elements.
    pub fn dot(&self, other: &Tensor<T>) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of batch item `n` as a 1×C×H×W tensor.
    pub fn batch_item(&self, n: usize) -> Tensor<T> {
        let item = self.shape.item();
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[n * item..(n + 1) * item].to_vec(),
        }
    }

    /// Channels `start..start + count` of every batch item.
    pub fn channels(&self, start: usize, count: usize) -> Result<Tensor<T>> {
        if start + count > self.shape.c {
            return Err(Error::shape(
                "channels",
                format!("channels {start}..{} out of {}", start + count, self.shape.c),
            ));
        }
        let plane = self.shape.plane();
        let mut data = Vec::with_capacity(self.shape.n * count * plane);
        for n in 0..self.shape.n {
            let base = (n * self.shape.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Tensor {
            shape: self.shape.with_channels(count),
            data,
        })
    }

    /// Stacks tensors along the batch axis; all must share C, H, W.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?
            .shape;
        let mut data = Vec::with_capacity(first.item() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c != first.c || t.shape.h != first.h || t.shape.w != first.w {
                return Err(Error::shape(
                    "stack",
                    format!("{} does not match {}", t.shape, first),
                ));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape { n, ..first },
            data,
        })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (a.shape, b.shape);
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::shape(
                "concat",
                format!("batch/spatial dims differ: {sa} vs {sb}"),
            ));
        }
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for n in 0..sa.n {
            data.extend_from_slice(&a.data[n * sa.item()..(n + 1) * sa.item()]);
            data.extend_from_slice(&b.data[n * sb.item()..(n + 1) * sb.item()]);
        }
        Ok(Tensor {
            shape: sa.with_channels(sa.c + sb.c),
            data,
        })
    }

    /// Spatial window `[top, top+h) × [left, left+w)` of every plane.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let s = self.shape;
        if top + h > s.h || left + w > s.w {
            return Err(Error::shape(
                "crop",
                format!("window {h}x{w} at ({top},{left}) exceeds {}x{}", s.h, s.w),
            ));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for plane in self.data.chunks_exact(s.plane().max(1)).take(s.n * s.c) {
            for row in top..top + h {
                data.extend_from_slice(&plane[row * s.w + left..row * s.w + left + w]);
            }
        }
        Ok(Tensor {
            shape: s.with_spatial(h, w),
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(0, 0, 1, 0), 3.0);
    }

    #[test]
    fn concat_and_channels_are_inverse() {
        let a = Tensor::<f64>::from_fn([2, 2, 3, 3], |n, c, h, w| (n * 100 + c * 10 + h * 3 + w) as f64);
        let b = Tensor::<f64>::from_fn([2, 3, 3, 3], |n, c, h, w| -((n * 100 + c * 10 + h * 3 + w) as f64));
        let ab = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), Shape::new(2, 5, 3, 3));
        assert_eq!(ab.channels(0, 2).unwrap(), a);
        assert_eq!(ab.channels(2, 3).unwrap(), b);
    }

    #[test]
    fn crop_takes_window() {
        let t = Tensor::<f32>::from_fn([1, 1, 4, 4], |_, _, h, w| (h * 4 + w) as f32);
        let c = t.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(t.crop(3, 3, 2, 2).is_err());
    }
}
