//! Reference filters that produce targets for filter learning.
//!
//! Windows are truncated at the image border and the weights renormalized
//! over the pixels that exist.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterSpec {
    Box { size: usize },
    Gaussian { size: usize, sigma: f64 },
    /// Range distance is Euclidean over all channels.
    Bilateral { size: usize, sigma_space: f64, sigma_range: f64 },
}

impl FilterSpec {
    pub fn size(&self) -> usize {
        match *self {
            FilterSpec::Box { size } | FilterSpec::Gaussian { size, .. } | FilterSpec::Bilateral { size, .. } => size,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterSpec::Box { .. } => "box",
            FilterSpec::Gaussian { .. } => "gaussian",
            FilterSpec::Bilateral { .. } => "bilateral",
        }
    }

    fn validate(&self) -> Result<()> {
        let size = self.size();
        if size % 2 == 0 {
            return Err(Error::Config(format!("filter kernel size must be odd, got {size}")));
        }
        let positive = match *self {
            FilterSpec::Box { .. } => true,
            FilterSpec::Gaussian { sigma, .. } => sigma > 0.0,
            FilterSpec::Bilateral {
                sigma_space,
                sigma_range,
                ..
            } => sigma_space > 0.0 && sigma_range > 0.0,
        };
        if !positive {
            return Err(Error::Config(format!("filter sigmas must be positive: {self:?}")));
        }
        Ok(())
    }
}

fn spatial_weights(spec: &FilterSpec) -> Vec<f64> {
    let size = spec.size();
    let r = (size / 2) as f64;
    let sigma = match *spec {
        FilterSpec::Box { .. } => None,
        FilterSpec::Gaussian { sigma, .. } => Some(sigma),
        FilterSpec::Bilateral { sigma_space, .. } => Some(sigma_space),
    };
    let mut w = Vec::with_capacity(size * size);
    for dy in 0..size {
        for dx in 0..size {
            let d2 = (dy as f64 - r).powi(2) + (dx as f64 - r).powi(2);
            w.push(sigma.map_or(1.0, |s| (-d2 / (2.0 * s * s)).exp()));
        }
    }
    w
}

/// Brute-force filtering of every batch item.
pub fn oracle_filter<T: Real>(img: &Tensor<T>, spec: FilterSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let s = img.shape();
    let size = spec.size();
    let r = size / 2;
    let spatial = spatial_weights(&spec);
    let range = match spec {
        FilterSpec::Bilateral { sigma_range, .. } => Some(1.0 / (2.0 * sigma_range * sigma_range)),
        _ => None,
    };
    let mut out = Tensor::zeros(s);
    let mut acc = vec![0.0f64; s.c];
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                acc.fill(0.0);
                let mut total = 0.0;
                for ky in 0..size {
                    let Some(yy) = (y + ky).checked_sub(r).filter(|&v| v < s.h) else {
                        continue;
                    };
                    for kx in 0..size {
                        let Some(xx) = (x + kx).checked_sub(r).filter(|&v| v < s.w) else {
                            continue;
                        };
                        let mut wgt = spatial[ky * size + kx];
                        if let Some(k) = range {
                            let d2: f64 = (0..s.c)
                                .map(|c| (img.at(n, c, yy, xx).as_f64() - img.at(n, c, y, x).as_f64()).powi(2))
                                .sum();
                            wgt *= (-d2 * k).exp();
                        }
                        total += wgt;
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += wgt * img.at(n, c, yy, xx).as_f64();
                        }
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    out.set(n, c, y, x, T::from_f64(a / total));
                }
            }
        }
    }
    Ok(out)
}
