//! Central finite-difference checks against the tape's analytic gradients.
//!
//! The networks checked here are piecewise polynomial: with PReLU signs and
//! max-pool winners held fixed, a squared loss is exactly quadratic along
//! any single coordinate, so central differences carry no truncation error.
//! When `x ± ε` would land in a different region (a kink between the
//! stencil points) the check instead uses the one-sided three-point stencil
//! on the side that stays in the region, which is also exact for
//! quadratics, and shrinks `ε` if neither side qualifies.

use crate::autodiff::params::ParamStore;
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Flat index (or parameter coordinate) where it occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates where a kink forced the one-sided stencil.
    pub one_sided: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            one_sided: 0,
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let err = (analytic - numeric).abs() / denom;
        if self.checked == 0 || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst_index = index;
            self.analytic = analytic;
            self.numeric = numeric;
        }
        self.checked += 1;
    }

    /// Combines two reports, keeping the worse one's details.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let one_sided = self.one_sided + other.one_sided;
        let mut worst = if other.max_rel_error > self.max_rel_error { other } else { self };
        worst.checked = checked;
        worst.one_sided = one_sided;
        worst
    }
}

/// Numeric derivative along one coordinate. `eval(t)` evaluates the function
/// with the coordinate shifted by `t` and returns the value and the tape's
/// branch signature. The flag is set when the one-sided stencil was used.
fn derivative<E>(mut eval: E, epsilon: f64) -> Result<(f64, bool)>
where
    E: FnMut(f64) -> Result<(f64, u64)>,
{
    let (f0, s0) = eval(0.0)?;
    let mut eps = epsilon;
    let mut last = 0.0;
    for _ in 0..6 {
        let (fp, sp) = eval(eps)?;
        let (fm, sm) = eval(-eps)?;
        last = (fp - fm) / (2.0 * eps);
        if sp == s0 && sm == s0 {
            return Ok((last, false));
        }
        if sm == s0 {
            let (fm2, sm2) = eval(-2.0 * eps)?;
            if sm2 == s0 {
                return Ok(((4.0 * (f0 - fm) - (f0 - fm2)) / (2.0 * eps), true));
            }
        }
        if sp == s0 {
            let (fp2, sp2) = eval(2.0 * eps)?;
            if sp2 == s0 {
                return Ok(((4.0 * (fp - f0) - (fp2 - f0)) / (2.0 * eps), true));
            }
        }
        eps /= 10.0;
    }
    Ok((last, false))
}

/// Checks the gradient of a scalar function of one tensor at `point`.
///
/// `f` records its computation onto the given tape, starting from the leaf
/// it receives, and returns the scalar output node.
pub fn gradcheck<F>(f: F, point: &Tensor<f64>, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |x: &Tensor<f64>| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = f(&mut tape, v)?;
        Ok((tape.value(out).item(), tape.branch_signature()))
    };

    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward_scalar(out)?;
    let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut report = GradCheckReport::new();
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        let (numeric, one_sided) = derivative(
            |t| {
                probe.data_mut()[i] = orig + t;
                eval(&probe)
            },
            epsilon,
        )?;
        probe.data_mut()[i] = orig;
        report.record(i, analytic.data()[i], numeric);
        report.one_sided += one_sided as usize;
    }
    Ok(report)
}

/// Checks the gradient of a scalar function with respect to every scalar in
/// `store`. Coordinates are numbered in store order.
pub fn gradcheck_params<F>(f: F, store: &mut ParamStore<f64>, epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    store.zero_grad();
    tape.backward(out, store)?;
    let analytic: Vec<Tensor<f64>> = store.iter().map(|p| p.grad.clone()).collect();

    let eval = |s: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok((tape.value(out).item(), tape.branch_signature()))
    };

    let mut report = GradCheckReport::new();
    let mut coord = 0;
    for (pi, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let id = crate::autodiff::ParamId(pi);
            let orig = store.get(id).value.data()[i];
            let (numeric, one_sided) = derivative(
                |t| {
                    store.get_mut(id).value.data_mut()[i] = orig + t;
                    eval(store)
                },
                epsilon,
            )?;
            store.get_mut(id).value.data_mut()[i] = orig;
            report.record(coord, grad.data()[i], numeric);
            report.one_sided += one_sided as usize;
            coord += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_squared_norm_is_exact() {
        // Entries bounded away from zero, so the roundoff of f (about one
        // ulp over 2ε) stays far below 1e-9 of every gradient entry.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform([1, 1, 2, 4], 0.5, 1.5, &mut rng).map(|v| if v > 1.0 { v } else { -v });
        let report = gradcheck(
            |t, v| {
                let m = t.mean_square(v);
                let n = t.value(v).numel() as f64;
                Ok(t.scale(m, 0.5 * n))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, 8);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        let x = Tensor::<f64>::full([1, 1, 2, 2], 1.5);
        let good = gradcheck(|t, v| Ok(t.sum(v)), &x, 1e-5).unwrap();
        assert!(good.max_rel_error < 1e-9);
        let mut r = GradCheckReport::new();
        r.record(0, 1.0, 2.0);
        assert!((r.max_rel_error - 0.5).abs() < 1e-12);
    }
}
