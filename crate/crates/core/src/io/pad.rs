//! Reflect padding to a size multiple, and the matching crop.

use crate::tensor::{Real, Tensor};

/// Original spatial size of a padded tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub height: usize,
    pub width: usize,
}

impl Crop {
    pub fn apply<T: Real>(&self, t: &Tensor<T>) -> Tensor<T> {
        t.crop(0, 0, self.height, self.width)
            .expect("crop record larger than the padded tensor")
    }
}

/// Mirror index without repeating the edge sample: `n, n+1, ...` map to
/// `n-2, n-3, ...`. Wraps around for pads longer than the signal.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

pub fn round_up(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

/// Reflect-pads the bottom and right edges so both spatial sizes are
/// multiples of `multiple`.
pub fn pad_reflect<T: Real>(img: &Tensor<T>, multiple: usize) -> (Tensor<T>, Crop) {
    let multiple = multiple.max(1);
    let s = img.shape();
    let crop = Crop {
        height: s.h,
        width: s.w,
    };
    let (h, w) = (round_up(s.h, multiple), round_up(s.w, multiple));
    if (h, w) == (s.h, s.w) {
        return (img.clone(), crop);
    }
    let out = Tensor::from_fn(s.with_spatial(h, w), |n, c, y, x| {
        img.at(n, c, reflect_index(y, s.h), reflect_index(x, s.w))
    });
    (out, crop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn pads_to_multiple_and_crops_back() {
        let img = Tensor::<f32>::from_fn(Shape::new(1, 2, 81, 81), |_, c, y, x| (c * 10000 + y * 100 + x) as f32);
        let (p, crop) = pad_reflect(&img, 16);
        assert_eq!(p.shape(), Shape::new(1, 2, 96, 96));
        assert_eq!(crop.apply(&p), img);
        assert_eq!(p.at(0, 1, 81, 3), img.at(0, 1, 79, 3));
        assert_eq!(p.at(0, 0, 2, 83), img.at(0, 0, 2, 77));
    }

    #[test]
    fn aligned_is_unchanged() {
        let img = Tensor::<f32>::from_fn(Shape::new(1, 1, 64, 64), |_, _, y, x| (y * x) as f32);
        assert_eq!(pad_reflect(&img, 16).0, img);
    }

    #[test]
    fn long_pads_wrap() {
        let idx: Vec<usize> = (0..8).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(idx, [0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(reflect_index(5, 1), 0);
    }
}
