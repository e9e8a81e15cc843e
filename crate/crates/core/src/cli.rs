//! The `cnp` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::{run_ablation, AblationConfig};
use crate::analysis::table::{render_csv, render_text, sweep};
use crate::checks::{gradient_suite, TOLERANCE};
use crate::error::{Error, Result};
use crate::io::{atomic_write, load_checkpoint, read_pnm, write_pnm, PnmImage};
use crate::model::{build_cnp, build_simple_multiscale, build_single_level, CnpConfig, ForwardOptions, ModelGraph};
use crate::tensor::Tensor;
use crate::training::{
    predict, psnr, train_loop_with, Dataset, LossSpec, OptimizerKind, Schedule, Task, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "cnp", version, about = "Convolutional neural pyramid: analysis, training and inference")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Receptive field and cost table over a sweep of pyramid depths.
    Analyze(AnalyzeArgs),
    /// Write a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train a model on a dataset directory and save a checkpoint.
    Train(TrainArgs),
    /// Run a checkpoint on images.
    Infer(InferArgs),
    /// PSNR of a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Finite-difference check of every op and of small pyramids.
    Gradcheck(GradcheckArgs),
    /// Level and fusion ablations; prints CSV.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Args, Debug)]
pub struct ArchArgs {
    #[arg(long, default_value_t = 1)]
    pub transform: usize,
    #[arg(long, default_value_t = 56)]
    pub features: usize,
    #[arg(long, default_value_t = 12)]
    pub embed: usize,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// A range such as `1..5` or `1..=5`, a list `1,3,5`, or one number.
    #[arg(long, default_value = "1..5", value_parser = parse_levels)]
    pub levels: Levels,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 3)]
    pub input_channels: usize,
    #[arg(long, default_value_t = 480)]
    pub height: usize,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// depth-holes, sparse-visible, additive-noise, filter-box,
    /// filter-gaussian or filter-bilateral.
    #[arg(long, default_value = "depth-holes")]
    pub task: String,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelChoice {
    Cnp,
    Simple,
    Single,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset evaluated during and after training.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelChoice::Cnp)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    /// Convolution count of the single-level model.
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Learn the output directly instead of a correction to the input.
    #[arg(long)]
    pub no_residual: bool,
    /// sgd or adam.
    #[arg(long, default_value = "sgd")]
    pub optimizer: String,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    /// constant or cosine.
    #[arg(long, default_value = "constant")]
    pub schedule: String,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 81)]
    pub patch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the loss curve here as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PGM or PPM images whose channels are concatenated in order to form
    /// the model input.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// One-channel outputs are written as 16-bit PGM, three-channel outputs
    /// as 8-bit PPM.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub op_seeds: usize,
    #[arg(long, default_value_t = 3)]
    pub model_seeds: usize,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Tiny configuration that finishes in seconds.
    #[arg(long)]
    pub smoke: bool,
    /// Override the number of training steps per model.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Levels(pub Vec<usize>);

/// Parses `1..5`, `1..=5`, `1,3,5` or `3`. Both range forms include the
/// upper end.
pub fn parse_levels(s: &str) -> std::result::Result<Levels, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad level `{t}`"));
    let levels = if let Some((a, b)) = s.split_once("..") {
        let (lo, hi) = (num(a)?, num(b.trim_start_matches('='))?);
        (lo..=hi).collect()
    } else {
        s.split(',').map(num).collect::<std::result::Result<Vec<_>, _>>()?
    };
    if levels.is_empty() || levels.contains(&0) {
        return Err(format!("levels must be positive, got `{s}`"));
    }
    Ok(Levels(levels))
}

/// Runs the CLI and returns the process exit code: 0 on success, 1 on
/// failure, 2 on a usage error.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Analyze(a) => analyze(a, out),
        Command::GenData(a) => gen_data(a, cli.seed, out),
        Command::Train(a) => train(a, cli.seed, out),
        Command::Infer(a) => infer(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Gradcheck(a) => gradcheck(a, cli.seed, out),
        Command::Ablate(a) => ablate(a, cli.seed, out, err),
    }
}

fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = CnpConfig::default()
        .with_transform_layers(a.arch.transform)
        .with_width(a.arch.features, a.arch.embed)
        .with_channels(a.input_channels, 1);
    let rows = sweep(a.levels.0.iter().copied(), &cfg, a.height, a.width)?;
    let text = match a.format {
        Format::Text => render_text(&rows),
        Format::Csv => render_csv(&rows),
    };
    out.write_all(text.as_bytes()).map_err(io_err)?;
    Ok(0)
}

fn gen_data(a: &GenDataArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let task = Task::from_name(&a.task)?;
    let data = task.generate(a.count, a.height, a.width, seed)?;
    data.save_dir(&task, &a.out)?;
    writeln!(out, "wrote {} {} samples to {}", data.len(), task.name(), a.out.display()).map_err(io_err)?;
    Ok(0)
}

fn build(a: &TrainArgs, task: &Task) -> Result<ModelGraph> {
    let mut cfg = CnpConfig::default()
        .with_levels(a.levels)
        .with_transform_layers(a.arch.transform)
        .with_width(a.arch.features, a.arch.embed)
        .with_channels(task.input_channels(), task.output_channels());
    if !a.no_residual {
        cfg = cfg.with_residual(task.residual_channel());
    }
    match a.model {
        ModelChoice::Cnp => build_cnp(&cfg),
        ModelChoice::Simple => build_simple_multiscale(&cfg),
        ModelChoice::Single => build_single_level(a.layers, &cfg),
    }
}

fn train(a: &TrainArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let (task, data) = Dataset::load_dir(&a.data)?;
    let heldout = match &a.heldout {
        Some(dir) => {
            let (t, d) = Dataset::load_dir(dir)?;
            if t.input_channels() != task.input_channels() || t.output_channels() != task.output_channels() {
                return Err(Error::Config(format!("held-out task {} does not match {}", t.name(), task.name())));
            }
            d
        }
        None => Dataset::default(),
    };
    let mut graph = build(a, &task)?;
    graph.init_params(seed);
    let cfg = TrainConfig {
        patch_size: a.patch,
        batch_size: a.batch,
        learning_rate: a.lr,
        optimizer: OptimizerKind::from_name(&a.optimizer)?,
        schedule: Schedule::from_name(&a.schedule)?,
        steps: a.steps,
        eval_every: a.eval_every,
        seed,
        checkpoint: Some(a.out.clone()),
        checkpoint_every: a.checkpoint_every,
    };
    let loss = LossSpec::new(a.lambda)?;
    let mut write_err = None;
    let report = train_loop_with(&mut graph, &data, &heldout, &cfg, &loss, |p| {
        if let Some(v) = p.heldout_psnr {
            if let Err(e) = writeln!(out, "step {}: loss {:.6e}, held-out {v:.3} dB", p.step, p.loss) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    if let Some(path) = &a.curve {
        atomic_write(path, report.to_csv().as_bytes())?;
    }
    let last = report.curve.last().map_or(f64::NAN, |p| p.loss);
    writeln!(out, "trained {} parameters for {} steps, final loss {last:.6e}; saved {}", graph.param_count(), a.steps, a.out.display())
        .map_err(io_err)?;
    Ok(0)
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint::<f32>(&a.checkpoint)?;
    let mut input: Option<Tensor> = None;
    for path in &a.input {
        let t = read_pnm(path)?.to_tensor::<f32>();
        input = Some(match input {
            None => t,
            Some(prev) => Tensor::concat_channels(&prev, &t)?,
        });
    }
    let input = input.expect("clap requires one input");
    let want = ck.graph.arch.input_channels();
    if input.shape().c != want {
        return Err(Error::Config(format!("model expects {want} input channels, the inputs have {}", input.shape().c)));
    }
    let pred = predict(&ck.graph, &input, ForwardOptions::default())?;
    let maxval = if pred.shape().c == 1 { u16::MAX } else { 255 };
    write_pnm(&PnmImage::from_tensor(&pred, maxval)?, &a.output)?;
    let s = pred.shape();
    writeln!(out, "wrote {}x{}x{} output to {}", s.c, s.h, s.w, a.output.display()).map_err(io_err)?;
    Ok(0)
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint::<f32>(&a.checkpoint)?;
    let (task, data) = Dataset::load_dir(&a.data)?;
    let (c, k) = (task.residual_channel(), task.output_channels());
    let mut rows = Vec::with_capacity(data.len());
    for s in &data.samples {
        let pred = predict(&ck.graph, &s.input, ForwardOptions::default())?;
        rows.push((psnr(&s.input.channels(c, k)?, &s.target, 1.0), psnr(&pred, &s.target, 1.0)));
    }
    let n = rows.len() as f64;
    let mean = (rows.iter().map(|r| r.0).sum::<f64>() / n, rows.iter().map(|r| r.1).sum::<f64>() / n);
    let mut text = String::new();
    match a.format {
        Format::Csv => {
            text.push_str("image,input_psnr,output_psnr\n");
            for (i, r) in rows.iter().enumerate() {
                text.push_str(&format!("{i},{:.4},{:.4}\n", r.0, r.1));
            }
            text.push_str(&format!("mean,{:.4},{:.4}\n", mean.0, mean.1));
        }
        Format::Text => {
            text.push_str(&format!("{:>6}  {:>10}  {:>10}\n", "image", "input dB", "output dB"));
            for (i, r) in rows.iter().enumerate() {
                text.push_str(&format!("{i:>6}  {:>10.3}  {:>10.3}\n", r.0, r.1));
            }
            text.push_str(&format!("{:>6}  {:>10.3}  {:>10.3}\n", "mean", mean.0, mean.1));
        }
    }
    out.write_all(text.as_bytes()).map_err(io_err)?;
    Ok(0)
}

fn gradcheck(a: &GradcheckArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let entries = gradient_suite(a.op_seeds, a.model_seeds, seed)?;
    let mut worst: f64 = 0.0;
    for e in &entries {
        worst = worst.max(e.report.max_rel_error);
        writeln!(
            out,
            "{:<28} {:>3} seeds  {:>7} coords  {:>6} one-sided  max rel {:.3e}  {}",
            e.name,
            e.seeds,
            e.report.checked,
            e.report.one_sided,
            e.report.max_rel_error,
            if e.passed() { "ok" } else { "FAIL" }
        )
        .map_err(io_err)?;
    }
    let ok = entries.iter().all(|e| e.passed());
    writeln!(out, "max relative error {worst:.3e} (limit {TOLERANCE:.0e}): {}", if ok { "pass" } else { "fail" }).map_err(io_err)?;
    Ok(if ok { 0 } else { 1 })
}

fn ablate(a: &AblateArgs, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut cfg = if a.smoke { AblationConfig::smoke() } else { AblationConfig::desk() };
    cfg.seed = seed;
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
        cfg.train.eval_every = cfg.train.eval_every.min(steps);
    }
    let report = run_ablation(&cfg, |line| {
        if !a.quiet {
            let _ = writeln!(err, "{line}");
        }
    })?;
    let csv = report.to_csv();
    match &a.out {
        Some(path) => atomic_write(path, csv.as_bytes())?,
        None => out.write_all(csv.as_bytes()).map_err(io_err)?,
    }
    Ok(0)
}
