//! Brute-force reference implementations, written from the definitions and
//! independent of the library kernels.
#![allow(dead_code)]

use cnp::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(dims: [usize; 4], seed: u64) -> Tensor<f64> {
    Tensor::randn(dims, 1.0, &mut rng(seed))
}

/// Values drawn from `{-2, -1, 0, 1, 2}` so pooling windows tie often.
pub fn small_ints(dims: [usize; 4], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut r = rng(seed);
    Tensor::from_fn(Shape::from(dims), |_, _, _, _| r.random_range(-2i32..=2) as f64)
}

pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, o, i, j| {
        let mut acc = b.map_or(0.0, |b| b.data()[o]);
        for c in 0..xs.c {
            for u in 0..k {
                for v in 0..k {
                    let y = (i * stride + u) as isize - pad as isize;
                    let x_ = (j * stride + v) as isize - pad as isize;
                    if y >= 0 && x_ >= 0 && (y as usize) < xs.h && (x_ as usize) < xs.w {
                        acc += x.at(n, c, y as usize, x_ as usize) * w.at(o, c, u, v);
                    }
                }
            }
        }
        acc
    })
}

/// Stride-2, 3×3, padding 1, output padding 1 transposed convolution as a
/// scatter: input pixel `(i, j)` adds `x · w[c, o, u, v]` at `(2i − 1 + u, 2j − 1 + v)`.
pub fn deconv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (oh, ow) = (2 * xs.h, 2 * xs.w);
    let mut out = Tensor::from_fn(Shape::new(xs.n, ws.c, oh, ow), |_, o, _, _| b.map_or(0.0, |b| b.data()[o]));
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                for j in 0..xs.w {
                    for o in 0..ws.c {
                        for u in 0..3 {
                            for v in 0..3 {
                                let y = (2 * i + u) as isize - 1;
                                let x_ = (2 * j + v) as isize - 1;
                                if y >= 0 && x_ >= 0 && (y as usize) < oh && (x_ as usize) < ow {
                                    let (y, x_) = (y as usize, x_ as usize);
                                    let cur = out.at(n, o, y, x_);
                                    out.set(n, o, y, x_, cur + x.at(n, c, i, j) * w.at(c, o, u, v));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Max pooling with the winner's position; ties go to the first element in
/// row-major order within the window.
pub fn maxpool2(x: &Tensor<f64>) -> (Tensor<f64>, Vec<(usize, usize, usize, usize)>) {
    let s = x.shape();
    let mut winners = Vec::new();
    let out = Tensor::from_fn(Shape::new(s.n, s.c, s.h / 2, s.w / 2), |n, c, i, j| {
        let mut best = (f64::NEG_INFINITY, (0, 0));
        for (u, v) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let val = x.at(n, c, 2 * i + u, 2 * j + v);
            if val > best.0 {
                best = (val, (2 * i + u, 2 * j + v));
            }
        }
        winners.push((n, c, best.1 .0, best.1 .1));
        best.0
    });
    (out, winners)
}

pub fn avgpool2(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h / 2, s.w / 2), |n, c, i, j| {
        (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i, 2 * j + 1) + x.at(n, c, 2 * i + 1, 2 * j) + x.at(n, c, 2 * i + 1, 2 * j + 1)) / 4.0
    })
}

/// `dx` in channels `0..C`, `dy` in `C..2C`, zero on the trailing border.
pub fn image_gradient(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, 2 * s.c, s.h, s.w), |n, c, i, j| {
        if c < s.c {
            if j + 1 < s.w {
                x.at(n, c, i, j + 1) - x.at(n, c, i, j)
            } else {
                0.0
            }
        } else if i + 1 < s.h {
            x.at(n, c - s.c, i + 1, j) - x.at(n, c - s.c, i, j)
        } else {
            0.0
        }
    })
}

pub fn loss(pred: &Tensor<f64>, target: &Tensor<f64>, lambda: f64) -> f64 {
    let s = pred.shape();
    let count = (s.n * s.c * s.h * s.w) as f64;
    let mut intensity = 0.0;
    let mut gradient = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..s.h {
                for j in 0..s.w {
                    let d = |y: usize, x: usize| pred.at(n, c, y, x) - target.at(n, c, y, x);
                    intensity += d(i, j).powi(2);
                    if j + 1 < s.w {
                        gradient += (d(i, j + 1) - d(i, j)).powi(2);
                    }
                    if i + 1 < s.h {
                        gradient += (d(i + 1, j) - d(i, j)).powi(2);
                    }
                }
            }
        }
    }
    intensity / count + lambda * gradient / (2.0 * count)
}

/// Largest `|a − b| / max(|b|, 1)` over all elements.
pub fn max_rel_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
