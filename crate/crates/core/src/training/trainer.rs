//! The optimization loop and held-out evaluation.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::io::{pad_reflect, save_checkpoint};
use crate::model::{ForwardOptions, ModelGraph};
use crate::tensor::{Real, Tensor};
use crate::training::data::Dataset;
use crate::training::loss::LossSpec;
use crate::training::metrics::psnr;
use crate::training::optim::{Optimizer, OptimizerKind, Schedule};
use crate::training::sampler::sample_patches;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub steps: usize,
    /// Held-out PSNR is measured every `eval_every` steps and after the last
    /// step; 0 measures only at the end.
    pub eval_every: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 81,
            batch_size: 32,
            learning_rate: 1e-5,
            optimizer: OptimizerKind::sgd(),
            schedule: Schedule::Constant,
            steps: 1000,
            eval_every: 0,
            seed: 0,
            checkpoint: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Metadata string stored alongside checkpoints.
    pub fn metadata(&self) -> String {
        format!(
            "optimizer={} lr={} schedule={} batch={} patch={} steps={} seed={}",
            self.optimizer, self.learning_rate, self.schedule, self.batch_size, self.patch_size, self.steps, self.seed
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    /// 1-based step index.
    pub step: usize,
    pub loss: f64,
    pub heldout_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub heldout_psnr: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "step,loss,heldout_psnr";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for p in &self.curve {
            let psnr = p.heldout_psnr.map_or_else(String::new, |v| format!("{v:.4}"));
            let _ = writeln!(s, "{},{:.8e},{psnr}", p.step, p.loss);
        }
        s
    }

    /// Trailing moving average of the loss over `window` steps.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.curve.len());
        let mut sum = 0.0;
        for (i, p) in self.curve.iter().enumerate() {
            sum += p.loss;
            if i >= window {
                sum -= self.curve[i - window].loss;
            }
            out.push(sum / (i + 1).min(window) as f64);
        }
        out
    }
}

/// Runs a full-image forward pass, reflect-padding to the model's size
/// multiple and cropping back.
pub fn predict<T: Real>(graph: &ModelGraph<T>, input: &Tensor<T>, opts: ForwardOptions) -> Result<Tensor<T>> {
    let (padded, crop) = pad_reflect(input, graph.arch.size_multiple());
    Ok(crop.apply(&graph.forward_with(&padded, opts)?))
}

/// Mean PSNR of the predictions over `test`, on the target channels of
/// whole images.
pub fn evaluate<T: Real>(graph: &ModelGraph<T>, test: &Dataset, max_val: f64) -> Result<f64> {
    evaluate_with(graph, test, max_val, ForwardOptions::default())
}

pub fn evaluate_with<T: Real>(graph: &ModelGraph<T>, test: &Dataset, max_val: f64, opts: ForwardOptions) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in &test.samples {
        let pred = predict(graph, &s.input.cast::<T>(), opts)?;
        total += psnr(&pred, &s.target.cast::<T>(), max_val);
    }
    Ok(total / test.len() as f64)
}

/// One recorded step: loss, then gradients accumulated into the store.
pub fn train_step<T: Real>(graph: &mut ModelGraph<T>, input: Tensor<T>, target: Tensor<T>, loss: &LossSpec) -> Result<f64> {
    let (h, w) = (target.shape().h, target.shape().w);
    let mut tape = Tape::new();
    let x = tape.constant(input);
    let y = graph.forward_tape(&mut tape, x, ForwardOptions::default())?;
    let y = if tape.shape(y).h != h || tape.shape(y).w != w {
        tape.crop(y, 0, 0, h, w)?
    } else {
        y
    };
    let t = tape.constant(target);
    let l = loss.record(&mut tape, y, t)?;
    let value = tape.value(l).item().as_f64();
    if value.is_finite() {
        tape.backward(l, &mut graph.params)?;
    }
    Ok(value)
}

pub fn train_loop<T: Real>(
    graph: &mut ModelGraph<T>,
    train: &Dataset,
    heldout: &Dataset,
    cfg: &TrainConfig,
    loss: &LossSpec,
) -> Result<TrainReport> {
    train_loop_with(graph, train, heldout, cfg, loss, |_| {})
}

/// [`train_loop`] with a callback invoked after every step.
pub fn train_loop_with<T: Real>(
    graph: &mut ModelGraph<T>,
    train: &Dataset,
    heldout: &Dataset,
    cfg: &TrainConfig,
    loss: &LossSpec,
    mut observe: impl FnMut(&CurvePoint),
) -> Result<TrainReport> {
    if cfg.steps == 0 || cfg.batch_size == 0 || cfg.patch_size == 0 {
        return Err(Error::Config("steps, batch size and patch size must be positive".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let multiple = graph.arch.size_multiple();
    let metadata = cfg.metadata();
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut last_finite = f64::NAN;
    let mut last_psnr = f64::NAN;
    for step in 1..=cfg.steps {
        let batch = sample_patches::<T>(train, cfg.patch_size, cfg.batch_size, multiple, cfg.seed, step as u64)?;
        graph.params.zero_grad();
        let value = train_step(graph, batch.input, batch.target, loss)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, last_finite });
        }
        last_finite = value;
        opt.learning_rate = cfg.learning_rate * cfg.schedule.factor(step, cfg.steps);
        opt.step(&mut graph.params);

        let eval_now = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        let heldout_psnr = if eval_now && !heldout.is_empty() {
            last_psnr = evaluate(graph, heldout, 1.0)?;
            Some(last_psnr)
        } else {
            None
        };
        let point = CurvePoint {
            step,
            loss: value,
            heldout_psnr,
        };
        observe(&point);
        curve.push(point);

        if let Some(path) = &cfg.checkpoint {
            if step == cfg.steps || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
                save_checkpoint(graph, &metadata, path)?;
            }
        }
    }
    Ok(TrainReport {
        curve,
        heldout_psnr: last_psnr,
    })
}
