//! Level and fusion ablations on the synthetic depth-restoration task.
//!
//! One run trains the pyramid at several depths and the simple multiscale
//! baseline at matching depths on the same data and budget, then probes the
//! deepest pyramid with its upper levels blocked on a test set of holes
//! larger than the shallow receptive fields.

use std::fmt::Write as _;
use std::time::Instant;

use crate::analysis::analytic_rf;
use crate::error::{Error, Result};
use crate::model::{build_cnp, build_simple_multiscale, CnpConfig, ForwardOptions, ModelGraph};
use crate::training::{
    evaluate_with, psnr, train_loop_with, Dataset, DegradationKind, LossSpec, OptimizerKind, Schedule, Task, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Cnp,
    Simple,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Cnp => "cnp",
            Family::Simple => "simple",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub task: Task,
    /// Degradation of the blocked-level probe set.
    pub probe_task: Task,
    pub image_size: usize,
    pub train_images: usize,
    pub heldout_images: usize,
    pub probe_images: usize,
    pub features: usize,
    pub embed: usize,
    pub transform_layers: usize,
    pub cnp_levels: Vec<usize>,
    pub simple_levels: Vec<usize>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl AblationConfig {
    /// Desk-scale protocol: 128² scenes with holes of 4 to 64 px, 16-wide
    /// features, 32k Adam steps on 64² patches.
    pub fn desk() -> Self {
        AblationConfig {
            task: Task::Degrade(DegradationKind::DepthHoles {
                rects: (6, 10),
                min_side: 4,
                max_side: 64,
                blob_fraction: (0.05, 0.15),
                noise_sigma: 0.01,
            }),
            probe_task: Task::Degrade(DegradationKind::DepthHoles {
                rects: (2, 3),
                min_side: 48,
                max_side: 80,
                blob_fraction: (0.0, 0.0),
                noise_sigma: 0.01,
            }),
            image_size: 128,
            train_images: 2048,
            heldout_images: 32,
            probe_images: 32,
            features: 16,
            embed: 8,
            transform_layers: 1,
            cnp_levels: vec![1, 2, 3, 5],
            simple_levels: vec![2, 3, 5],
            train: TrainConfig {
                patch_size: 64,
                batch_size: 4,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::adam(),
                schedule: Schedule::Cosine { floor: 0.01 },
                steps: 32_000,
                eval_every: 4_000,
                ..TrainConfig::default()
            },
            seed: 0,
        }
    }

    /// Same protocol shrunk to run in seconds.
    pub fn smoke() -> Self {
        let mut cfg = AblationConfig::desk();
        cfg.image_size = 32;
        cfg.train_images = 8;
        cfg.heldout_images = 4;
        cfg.probe_images = 4;
        cfg.features = 8;
        cfg.embed = 4;
        cfg.cnp_levels = vec![1, 2];
        cfg.simple_levels = vec![2];
        cfg.task = Task::Degrade(DegradationKind::depth_holes());
        cfg.probe_task = Task::Degrade(DegradationKind::DepthHoles {
            rects: (1, 2),
            min_side: 8,
            max_side: 16,
            blob_fraction: (0.0, 0.0),
            noise_sigma: 0.01,
        });
        cfg.train.patch_size = 16;
        cfg.train.steps = 20;
        cfg.train.eval_every = 0;
        cfg
    }

    pub fn model_config(&self, levels: usize) -> CnpConfig {
        CnpConfig::default()
            .with_levels(levels)
            .with_transform_layers(self.transform_layers)
            .with_width(self.features, self.embed)
            .with_channels(self.task.input_channels(), self.task.output_channels())
            .with_residual(self.task.residual_channel())
    }

    fn build(&self, family: Family, levels: usize) -> Result<ModelGraph> {
        let cfg = self.model_config(levels);
        match family {
            Family::Cnp => build_cnp(&cfg),
            Family::Simple => build_simple_multiscale(&cfg),
        }
    }

    fn probe_levels(&self) -> Option<usize> {
        self.cnp_levels.iter().copied().max()
    }

    fn validate(&self) -> Result<()> {
        if self.cnp_levels.is_empty() && self.simple_levels.is_empty() {
            return Err(Error::Config("ablation needs at least one model".into()));
        }
        if self.task.output_channels() != self.probe_task.output_channels() || self.task.input_channels() != self.probe_task.input_channels() {
            return Err(Error::Config("probe task must share the training task's channels".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub family: Family,
    pub levels: usize,
    pub params: usize,
    pub rf: usize,
    pub heldout_psnr: f64,
    pub final_loss: f64,
}

/// PSNR of the deepest pyramid with only levels `0..active` evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbePoint {
    pub active: usize,
    pub rf: usize,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub probe: Vec<ProbePoint>,
    /// PSNR of the degraded input channel itself on the held-out set.
    pub input_psnr: f64,
    pub probe_input_psnr: f64,
}

impl AblationReport {
    pub const CSV_HEADER: &'static str = "section,model,levels,active,params,rf,psnr,final_loss";

    pub fn psnr(&self, family: Family, levels: usize) -> Option<f64> {
        self.runs.iter().find(|r| r.family == family && r.levels == levels).map(|r| r.heldout_psnr)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        let _ = writeln!(s, "baseline,input,0,0,0,0,{:.4},", self.input_psnr);
        for r in &self.runs {
            let _ = writeln!(
                s,
                "train,{},{},{},{},{},{:.4},{:.6e}",
                r.family.name(),
                r.levels,
                r.levels,
                r.params,
                r.rf,
                r.heldout_psnr,
                r.final_loss
            );
        }
        let _ = writeln!(s, "probe,input,0,0,0,0,{:.4},", self.probe_input_psnr);
        let levels = self.probe.len();
        for p in &self.probe {
            let _ = writeln!(s, "probe,cnp,{levels},{},,{},{:.4},", p.active, p.rf, p.psnr);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Config(format!("malformed ablation row `{line}`"));
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(Error::Config("ablation CSV header mismatch".into()));
        }
        let mut report = AblationReport {
            runs: Vec::new(),
            probe: Vec::new(),
            input_psnr: f64::NAN,
            probe_input_psnr: f64::NAN,
        };
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].parse::<usize>().map_err(|_| bad(line));
            let real = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
            match (f[0], f[1]) {
                ("baseline", "input") => report.input_psnr = real(6)?,
                ("probe", "input") => report.probe_input_psnr = real(6)?,
                ("probe", _) => report.probe.push(ProbePoint {
                    active: num(3)?,
                    rf: num(5)?,
                    psnr: real(6)?,
                }),
                ("train", model) => report.runs.push(AblationRun {
                    family: match model {
                        "cnp" => Family::Cnp,
                        "simple" => Family::Simple,
                        _ => return Err(bad(line)),
                    },
                    levels: num(2)?,
                    params: num(4)?,
                    rf: num(5)?,
                    heldout_psnr: real(6)?,
                    final_loss: real(7)?,
                }),
                _ => return Err(bad(line)),
            }
        }
        Ok(report)
    }
}

/// Mean PSNR of the degraded signal channel against the target.
fn input_psnr(task: &Task, data: &Dataset) -> Result<f64> {
    let (c, k) = (task.residual_channel(), task.output_channels());
    let mut total = 0.0;
    for s in &data.samples {
        total += psnr(&s.input.channels(c, k)?, &s.target, 1.0);
    }
    Ok(total / data.len() as f64)
}

/// Runs the whole ablation. `progress` receives one human-readable line
/// per finished stage.
pub fn run_ablation(cfg: &AblationConfig, mut progress: impl FnMut(&str)) -> Result<AblationReport> {
    cfg.validate()?;
    let size = cfg.image_size;
    let train = cfg.task.generate(cfg.train_images, size, size, cfg.seed.wrapping_mul(4))?;
    let heldout = cfg.task.generate(cfg.heldout_images, size, size, cfg.seed.wrapping_mul(4) + 1)?;
    let probe_set = cfg.probe_task.generate(cfg.probe_images, size, size, cfg.seed.wrapping_mul(4) + 2)?;
    let loss = LossSpec::default();
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;

    let mut runs = Vec::new();
    let mut probe = Vec::new();
    let models = cfg
        .cnp_levels
        .iter()
        .map(|&l| (Family::Cnp, l))
        .chain(cfg.simple_levels.iter().map(|&l| (Family::Simple, l)));
    for (family, levels) in models {
        let start = Instant::now();
        let mut graph = cfg.build(family, levels)?;
        graph.init_params(cfg.seed);
        let report = train_loop_with(&mut graph, &train, &heldout, &train_cfg, &loss, |p| {
            if let Some(v) = p.heldout_psnr {
                progress(&format!("{} L={levels} step {}: held-out {v:.2} dB", family.name(), p.step));
            }
        })?;
        let run = AblationRun {
            family,
            levels,
            params: graph.param_count(),
            rf: analytic_rf(&graph.arch).rf,
            heldout_psnr: report.heldout_psnr,
            final_loss: report.smoothed_loss(200).last().copied().unwrap_or(f64::NAN),
        };
        progress(&format!(
            "{} L={levels}: {:.2} dB ({:.0} s)",
            family.name(),
            run.heldout_psnr,
            start.elapsed().as_secs_f64()
        ));
        runs.push(run);

        if family == Family::Cnp && Some(levels) == cfg.probe_levels() {
            for active in 1..=levels {
                let opts = ForwardOptions {
                    active_levels: Some(active),
                    ..ForwardOptions::default()
                };
                let psnr = evaluate_with(&graph, &probe_set, 1.0, opts)?;
                let rf = analytic_rf(&cfg.build(Family::Cnp, active)?.arch).rf;
                progress(&format!("probe {active}/{levels} levels (rf {rf}): {psnr:.2} dB"));
                probe.push(ProbePoint { active, rf, psnr });
            }
        }
    }
    Ok(AblationReport {
        runs,
        probe,
        input_psnr: input_psnr(&cfg.task, &heldout)?,
        probe_input_psnr: input_psnr(&cfg.probe_task, &probe_set)?,
    })
}
