//! Image quality metrics.

use crate::tensor::{Real, Tensor};

/// Value reported when two images are identical.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse of differently shaped images");
    let n = a.numel().max(1) as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / n
}

/// PSNR for a given mean squared error, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP)
}

/// `10·log10(maxVal² / MSE)` over every element.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> f64 {
    psnr_from_mse(mse(a, b), max_val)
}
