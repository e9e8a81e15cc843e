//! Synthetic corruptions: depth holes, sparse visibility, and sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DegradationKind {
    /// Rectangles and random-walk blobs removed from the depth channel, with
    /// Gaussian noise on the surviving values. Input is
    /// `[guide, holed signal, mask]`.
    DepthHoles {
        /// Inclusive range for the number of rectangles.
        rects: (usize, usize),
        min_side: usize,
        max_side: usize,
        /// Inclusive range for the fraction of pixels covered by blobs.
        blob_fraction: (f64, f64),
        noise_sigma: f64,
    },
    /// Each pixel kept with probability `visible_fraction`, then the visible
    /// set is dilated by a square of radius `dilate_radius`. Input is
    /// `[masked signal, mask]`.
    SparseVisible { visible_fraction: f64, dilate_radius: usize },
    /// Optional Poisson shot noise at `photon_scale` counts per unit
    /// intensity, then Gaussian noise, clipped to `[0, 1]`.
    AdditiveNoise {
        gaussian_sigma: f64,
        poisson: bool,
        photon_scale: f64,
    },
}

impl DegradationKind {
    pub fn depth_holes() -> Self {
        DegradationKind::DepthHoles {
            rects: (1, 4),
            min_side: 4,
            max_side: 64,
            blob_fraction: (0.05, 0.15),
            noise_sigma: 0.01,
        }
    }

    pub fn sparse_visible() -> Self {
        DegradationKind::SparseVisible {
            visible_fraction: 0.05,
            dilate_radius: 4,
        }
    }

    pub fn additive_noise() -> Self {
        DegradationKind::AdditiveNoise {
            gaussian_sigma: 0.01,
            poisson: true,
            photon_scale: 255.0,
        }
    }

    /// Default parameters for `depth-holes`, `sparse-visible` or
    /// `additive-noise`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "depth-holes" => Ok(Self::depth_holes()),
            "sparse-visible" => Ok(Self::sparse_visible()),
            "additive-noise" => Ok(Self::additive_noise()),
            _ => Err(Error::Config(format!(
                "unknown degradation kind {name:?} (expected depth-holes, sparse-visible or additive-noise)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DegradationKind::DepthHoles { .. } => "depth-holes",
            DegradationKind::SparseVisible { .. } => "sparse-visible",
            DegradationKind::AdditiveNoise { .. } => "additive-noise",
        }
    }

    /// Index of the input channel that holds the degraded signal.
    pub fn signal_channel(&self, guide_channels: usize) -> usize {
        match self {
            DegradationKind::DepthHoles { .. } => guide_channels,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            DegradationKind::DepthHoles {
                rects,
                min_side,
                max_side,
                blob_fraction,
                noise_sigma,
            } => {
                if rects.0 > rects.1 || min_side == 0 || min_side > max_side {
                    return bad(format!("bad hole geometry: rects {rects:?}, sides {min_side}..{max_side}"));
                }
                if !(0.0..=1.0).contains(&blob_fraction.0) || blob_fraction.0 > blob_fraction.1 || blob_fraction.1 > 1.0
                {
                    return bad(format!("bad blob fraction {blob_fraction:?}"));
                }
                if !(noise_sigma >= 0.0) {
                    return bad(format!("bad noise sigma {noise_sigma}"));
                }
            }
            DegradationKind::SparseVisible { visible_fraction, .. } => {
                if !(0.0..=1.0).contains(&visible_fraction) {
                    return bad(format!("bad visible fraction {visible_fraction}"));
                }
            }
            DegradationKind::AdditiveNoise {
                gaussian_sigma,
                photon_scale,
                ..
            } => {
                if !(gaussian_sigma >= 0.0) || !(photon_scale > 0.0) {
                    return bad(format!("bad noise parameters sigma {gaussian_sigma}, scale {photon_scale}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub seed: u64,
}

/// Clean data a degradation starts from.
#[derive(Clone, Debug)]
pub struct CleanSample<'a> {
    /// Uncorrupted side information, such as the gray image for depth.
    pub guide: Option<&'a Tensor>,
    /// The signal to corrupt and recover. Also the target.
    pub signal: &'a Tensor,
}

/// A network input and its target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub target: Tensor,
}

pub fn check_binary_mask(mask: &Tensor) -> Result<()> {
    match mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(Error::Config(format!("mask is not binary: found value {v}"))),
        None => Ok(()),
    }
}

/// Square-element dilation of a binary mask.
pub fn dilate(mask: &[bool], h: usize, w: usize, radius: usize) -> Vec<bool> {
    let pass = |src: &[bool], along_rows: bool| {
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                let (pos, len) = if along_rows { (x, w) } else { (y, h) };
                let lo = pos.saturating_sub(radius);
                let hi = (pos + radius).min(len - 1);
                out[y * w + x] = (lo..=hi).any(|p| if along_rows { src[y * w + p] } else { src[p * w + x] });
            }
        }
        out
    };
    pass(&pass(mask, true), false)
}

/// Keep mask of a sparse-visible corruption: before and after dilation.
pub fn sparse_visible_mask<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    fraction: f64,
    radius: usize,
    rng: &mut R,
) -> (Vec<bool>, Vec<bool>) {
    let seeds: Vec<bool> = (0..h * w).map(|_| rng.random_bool(fraction)).collect();
    let dilated = dilate(&seeds, h, w, radius);
    (seeds, dilated)
}

fn stamp_disk(hole: &mut [bool], h: usize, w: usize, cy: i64, cx: i64, r: i64) {
    for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
            if (y - cy).pow(2) + (x - cx).pow(2) <= r * r {
                hole[y as usize * w + x as usize] = true;
            }
        }
    }
}

/// Hole mask (true = missing) of rectangles plus random-walk blobs.
pub fn hole_mask<R: Rng + ?Sized>(
    h: usize,
    w: usize,
    rects: (usize, usize),
    sides: (usize, usize),
    blob_fraction: (f64, f64),
    rng: &mut R,
) -> Vec<bool> {
    let mut hole = vec![false; h * w];
    let n_rects = rng.random_range(rects.0..=rects.1);
    for _ in 0..n_rects {
        let rh = rng.random_range(sides.0..=sides.1).min(h);
        let rw = rng.random_range(sides.0..=sides.1).min(w);
        let top = rng.random_range(0..=h - rh);
        let left = rng.random_range(0..=w - rw);
        for y in top..top + rh {
            hole[y * w + left..y * w + left + rw].fill(true);
        }
    }
    let target = if blob_fraction.1 > 0.0 {
        rng.random_range(blob_fraction.0..=blob_fraction.1)
    } else {
        0.0
    };
    let want = (target * (h * w) as f64).round() as usize;
    let mut blob = vec![false; h * w];
    let mut covered = 0;
    let mut budget = 50 * h * w + 1000;
    while covered < want && budget > 0 {
        let (mut y, mut x) = (rng.random_range(0..h) as i64, rng.random_range(0..w) as i64);
        let r = rng.random_range(1..=3);
        for _ in 0..rng.random_range(20..200) {
            stamp_disk(&mut blob, h, w, y, x, r);
            y = (y + rng.random_range(-1..=1) * r).clamp(0, h as i64 - 1);
            x = (x + rng.random_range(-1..=1) * r).clamp(0, w as i64 - 1);
            budget = budget.saturating_sub(1);
        }
        covered = blob.iter().filter(|&&b| b).count();
    }
    for (h, b) in hole.iter_mut().zip(blob) {
        *h |= b;
    }
    hole
}

fn mask_tensor(keep: &[bool], shape: Shape) -> Tensor {
    Tensor::from_vec(shape, keep.iter().map(|&k| k as u8 as f32).collect()).expect("mask size")
}

/// Applies `spec` to one clean sample. The target is always the clean
/// signal.
pub fn degrade(clean: &CleanSample<'_>, spec: &DegradationSpec) -> Result<Sample> {
    spec.kind.validate()?;
    let signal = clean.signal;
    let s = signal.shape();
    if s.n != 1 {
        return Err(Error::shape("degrade", format!("expected one image, got batch {}", s.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plane = s.h * s.w;
    let input = match spec.kind {
        DegradationKind::DepthHoles {
            rects,
            min_side,
            max_side,
            blob_fraction,
            noise_sigma,
        } => {
            let guide = clean
                .guide
                .ok_or_else(|| Error::Config("depth-holes needs a guide image".into()))?;
            if guide.shape().with_channels(s.c) != s {
                return Err(Error::shape("degrade", format!("guide {} vs signal {s}", guide.shape())));
            }
            let hole = hole_mask(s.h, s.w, rects, (min_side, max_side), blob_fraction, &mut rng);
            let keep: Vec<bool> = hole.iter().map(|&h| !h).collect();
            let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut holed = signal.clone();
            for (i, v) in holed.data_mut().iter_mut().enumerate() {
                *v = if keep[i % plane] {
                    let n = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (*v as f64 + n).clamp(0.0, 1.0) as f32
                } else {
                    0.0
                };
            }
            let mask = mask_tensor(&keep, s.with_channels(1));
            Tensor::concat_channels(&Tensor::concat_channels(guide, &holed)?, &mask)?
        }
        DegradationKind::SparseVisible {
            visible_fraction,
            dilate_radius,
        } => {
            let (_, keep) = sparse_visible_mask(s.h, s.w, visible_fraction, dilate_radius, &mut rng);
            let mut masked = signal.clone();
            for (i, v) in masked.data_mut().iter_mut().enumerate() {
                if !keep[i % plane] {
                    *v = 0.0;
                }
            }
            Tensor::concat_channels(&masked, &mask_tensor(&keep, s.with_channels(1)))?
        }
        DegradationKind::AdditiveNoise {
            gaussian_sigma,
            poisson,
            photon_scale,
        } => {
            let noise = Normal::new(0.0, gaussian_sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut noisy = signal.clone();
            for v in noisy.data_mut() {
                let mut x = *v as f64;
                if poisson && x > 0.0 {
                    let counts: f64 = Poisson::new(x * photon_scale)
                        .map_err(|e| Error::Config(e.to_string()))?
                        .sample(&mut rng);
                    x = counts / photon_scale;
                }
                if gaussian_sigma > 0.0 {
                    x += noise.sample(&mut rng);
                }
                *v = x.clamp(0.0, 1.0) as f32;
            }
            noisy
        }
    };
    Ok(Sample {
        input,
        target: signal.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(v: f32, h: usize, w: usize) -> Tensor {
        Tensor::full(Shape::new(1, 1, h, w), v)
    }

    #[test]
    fn zero_holes_is_identity() {
        let depth = Tensor::from_fn(Shape::new(1, 1, 20, 30), |_, _, y, x| (y * 30 + x) as f32 / 600.0);
        let g = gray(0.3, 20, 30);
        let spec = DegradationSpec {
            kind: DegradationKind::DepthHoles {
                rects: (0, 0),
                min_side: 4,
                max_side: 64,
                blob_fraction: (0.0, 0.0),
                noise_sigma: 0.0,
            },
            seed: 9,
        };
        let out = degrade(
            &CleanSample {
                guide: Some(&g),
                signal: &depth,
            },
            &spec,
        )
        .unwrap();
        assert_eq!(out.input.channels(1, 1).unwrap(), depth);
        assert!(out.input.channels(2, 1).unwrap().data().iter().all(|&m| m == 1.0));
        assert_eq!(out.target, depth);
    }

    #[test]
    fn holes_are_zero_under_mask() {
        let depth = gray(0.7, 96, 96);
        let g = gray(0.2, 96, 96);
        let spec = DegradationSpec {
            kind: DegradationKind::depth_holes(),
            seed: 4,
        };
        let out = degrade(
            &CleanSample {
                guide: Some(&g),
                signal: &depth,
            },
            &spec,
        )
        .unwrap();
        let holed = out.input.channels(1, 1).unwrap();
        let mask = out.input.channels(2, 1).unwrap();
        check_binary_mask(&mask).unwrap();
        let missing = mask.data().iter().filter(|&&m| m == 0.0).count() as f64 / (96.0 * 96.0);
        assert!(missing >= 0.05, "{missing}");
        for (d, m) in holed.data().iter().zip(mask.data()) {
            if *m == 0.0 {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!(DegradationKind::from_name("salt-and-pepper").is_err());
        assert!(check_binary_mask(&gray(0.5, 2, 2)).is_err());
    }

    #[test]
    fn dilation_grows_a_square() {
        let mut m = vec![false; 81];
        m[40] = true;
        let d = dilate(&m, 9, 9, 2);
        assert_eq!(d.iter().filter(|&&b| b).count(), 25);
        assert!(d[2 * 9 + 2] && d[6 * 9 + 6] && !d[9 + 1]);
    }
}
