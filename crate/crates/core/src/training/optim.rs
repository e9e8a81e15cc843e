//! First-order optimizers over a parameter store.

use std::fmt;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `sgd` or `adam` with default hyperparameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(Self::sgd()),
            "adam" => Ok(Self::adam()),
            _ => Err(Error::Config(format!("unknown optimizer {name:?} (expected sgd or adam)"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd { momentum } => write!(f, "sgd-momentum({momentum})"),
            OptimizerKind::Adam { beta1, beta2, .. } => write!(f, "adam({beta1},{beta2})"),
        }
    }
}

/// Learning-rate multiplier over the course of training.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine from 1 down to `floor` at the last step.
    Cosine { floor: f64 },
}

impl Schedule {
    /// Multiplier for 1-based `step` of `total`.
    pub fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::Cosine { floor } => {
                let t = if total > 1 { (step - 1) as f64 / (total - 1) as f64 } else { 1.0 };
                floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine { floor: 0.01 }),
            other => Err(Error::Config(format!("unknown schedule `{other}` (expected constant or cosine)"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant => write!(f, "constant"),
            Schedule::Cosine { floor } => write!(f, "cosine({floor})"),
        }
    }
}

/// Optimizer with per-parameter state, created lazily on the first step.
pub struct Optimizer<T: Real = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: i32,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    /// Applies one update from the accumulated gradients. Gradients are
    /// left in place.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        if self.first.is_empty() {
            self.first = store.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
            if let OptimizerKind::Adam { .. } = self.kind {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                let (mu, lr) = (T::from_f64(momentum), T::from_f64(lr));
                for (p, vel) in store.iter_mut().zip(&mut self.first) {
                    let g = p.grad.data();
                    let mut delta = Vec::with_capacity(g.len());
                    for (v, &g) in vel.iter_mut().zip(g) {
                        *v = mu * *v + g;
                        delta.push(lr * *v);
                    }
                    for (w, d) in p.value.data_mut().iter_mut().zip(delta) {
                        *w -= d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                let step = T::from_f64(lr * c2.sqrt() / c1);
                let (b1, b2, eps) = (T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps * c2.sqrt()));
                let one = T::one();
                for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let g: Vec<T> = p.grad.data().to_vec();
                    for (((w, m), v), g) in p.value.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        *w -= step * *m / (v.sqrt() + eps);
                    }
                }
            }
        }
    }
}
