//! Procedural piecewise-smooth scenes with aligned color and depth.
//!
//! A scene is a background plane overpainted by random ellipses, rotated
//! rectangles and triangles. Each region gets its own depth plane and its
//! own shaded, lightly textured color, so color and depth share region
//! boundaries while their values are unrelated.

use rand::Rng;

use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug)]
pub struct Scene {
    /// `1×3×H×W` in `[0, 1]`.
    pub rgb: Tensor,
    /// `1×1×H×W` in `[0, 1]`.
    pub depth: Tensor,
}

impl Scene {
    pub fn gray(&self) -> Tensor {
        luminance(&self.rgb)
    }
}

/// Rec. 601 luma: `0.299 R + 0.587 G + 0.114 B`.
pub fn luminance<T: Real>(rgb: &Tensor<T>) -> Tensor<T> {
    let s = rgb.shape();
    assert_eq!(s.c, 3, "luminance needs three channels");
    let (r, g, b) = (T::from_f64(0.299), T::from_f64(0.587), T::from_f64(0.114));
    Tensor::from_fn(s.with_channels(1), |n, _, y, x| {
        r * rgb.at(n, 0, y, x) + g * rgb.at(n, 1, y, x) + b * rgb.at(n, 2, y, x)
    })
}

enum Region {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, cos: f64, sin: f64 },
    Rect { cx: f64, cy: f64, hx: f64, hy: f64, cos: f64, sin: f64 },
    Triangle([(f64, f64); 3]),
}

impl Region {
    fn random<R: Rng + ?Sized>(rng: &mut R, h: f64, w: f64) -> Self {
        let scale = h.min(w);
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = angle.sin_cos();
        let side = |rng: &mut R| rng.random_range(0.06..0.3) * scale;
        match rng.random_range(0..3) {
            0 => Region::Ellipse {
                cx,
                cy,
                rx: side(rng),
                ry: side(rng),
                cos,
                sin,
            },
            1 => Region::Rect {
                cx,
                cy,
                hx: side(rng),
                hy: side(rng),
                cos,
                sin,
            },
            _ => {
                let r = rng.random_range(0.1..0.35) * scale;
                let mut pts = [(0.0, 0.0); 3];
                for (k, p) in pts.iter_mut().enumerate() {
                    let a = angle + k as f64 * 2.0 * std::f64::consts::PI / 3.0 + rng.random_range(-0.5..0.5);
                    *p = (cx + r * a.cos(), cy + r * a.sin());
                }
                Region::Triangle(pts)
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Ellipse {
                cx,
                cy,
                rx,
                ry,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Region::Rect {
                cx,
                cy,
                hx,
                hy,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                u.abs() <= hx && v.abs() <= hy
            }
            Region::Triangle(p) => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let (d0, d1, d2) = (edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0]));
                (d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0) || (d0 <= 0.0 && d1 <= 0.0 && d2 <= 0.0)
            }
        }
    }
}

/// Affine function of normalized image coordinates.
#[derive(Clone, Copy)]
struct Plane {
    base: f64,
    gx: f64,
    gy: f64,
}

impl Plane {
    fn at(&self, u: f64, v: f64) -> f64 {
        self.base + self.gx * (u - 0.5) + self.gy * (v - 0.5)
    }
}

struct Appearance {
    depth: Plane,
    color: [Plane; 3],
    texture: (f64, f64, f64, f64),
}

impl Appearance {
    fn random<R: Rng + ?Sized>(rng: &mut R, depth: (f64, f64)) -> Self {
        let slope = 0.25;
        let depth = Plane {
            base: rng.random_range(depth.0..depth.1),
            gx: rng.random_range(-slope..slope),
            gy: rng.random_range(-slope..slope),
        };
        let shade_x = rng.random_range(-0.3..0.3);
        let shade_y = rng.random_range(-0.3..0.3);
        let color = std::array::from_fn(|_| Plane {
            base: rng.random_range(0.1..0.9),
            gx: shade_x,
            gy: shade_y,
        });
        let freq: f64 = rng.random_range(4.0..24.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let amp = if rng.random_bool(0.5) { rng.random_range(0.0..0.06) } else { 0.0 };
        Appearance {
            depth,
            color,
            texture: (freq * angle.cos(), freq * angle.sin(), amp, rng.random_range(0.0..6.3)),
        }
    }
}

/// Generates an `height × width` scene.
pub fn generate_scene<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Scene {
    let (h, w) = (height as f64, width as f64);
    let count = rng.random_range(4..=10);
    let mut looks = vec![Appearance::random(rng, (0.55, 0.95))];
    let mut regions = Vec::with_capacity(count);
    for _ in 0..count {
        regions.push(Region::random(rng, h, w));
        looks.push(Appearance::random(rng, (0.1, 0.8)));
    }
    let mut rgb = Tensor::zeros(Shape::new(1, 3, height, width));
    let mut depth = Tensor::zeros(Shape::new(1, 1, height, width));
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let id = regions.iter().rposition(|r| r.contains(px, py)).map_or(0, |i| i + 1);
            let look = &looks[id];
            let (u, v) = (px / w, py / h);
            depth.set(0, 0, y, x, look.depth.at(u, v).clamp(0.0, 1.0) as f32);
            let (fx, fy, amp, phase) = look.texture;
            let tex = amp * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
            for c in 0..3 {
                rgb.set(0, c, y, x, (look.color[c].at(u, v) + tex).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Scene { rgb, depth }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_and_in_range() {
        let a = generate_scene(40, 50, &mut ChaCha8Rng::seed_from_u64(5));
        let b = generate_scene(40, 50, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.depth.shape(), Shape::new(1, 1, 40, 50));
        assert!(a.rgb.data().iter().chain(a.depth.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn luma_weights() {
        let rgb = Tensor::<f64>::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 0.0, 0.5]).unwrap();
        assert!((luminance(&rgb).item() - 0.356).abs() < 1e-12);
    }
}
