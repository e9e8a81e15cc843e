//! Intensity plus gradient regression loss.

use crate::autodiff::{kernels, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `mean((X − X̂)²) + λ·mean((∇X − ∇X̂)²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub lambda: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec { lambda: 1.0 }
    }
}

impl LossSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("loss lambda must be finite and non-negative, got {lambda}")));
        }
        Ok(LossSpec { lambda })
    }

    /// Records the loss on `tape`. The gradient operator is linear, so the
    /// gradient term is taken on the difference.
    pub fn record<T: Real>(&self, tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
        let diff = tape.sub(pred, target)?;
        let intensity = tape.mean_square(diff);
        if self.lambda == 0.0 {
            return Ok(intensity);
        }
        let grad = tape.image_gradient(diff);
        let g = tape.mean_square(grad);
        let g = tape.scale(g, self.lambda);
        tape.add(intensity, g)
    }

    /// Loss value without recording a tape.
    pub fn value<T: Real>(&self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        if pred.shape() != target.shape() {
            return Err(Error::shape(
                "loss",
                format!("prediction {} vs target {}", pred.shape(), target.shape()),
            ));
        }
        let diff = Tensor::from_vec(
            pred.shape(),
            pred.data().iter().zip(target.data()).map(|(&a, &b)| a - b).collect(),
        )?;
        let ms = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / t.numel() as f64;
        let mut l = ms(&diff);
        if self.lambda != 0.0 {
            l += self.lambda * ms(&kernels::image_gradient_forward(&diff));
        }
        Ok(l)
    }
}
