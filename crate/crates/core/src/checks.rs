//! The 64-bit gradient suite: every differentiable op on random small
//! tensors, and the full training loss of small pyramids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, gradcheck_params, FuseMode, GradCheckReport, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::model::{build_cnp, CnpConfig, ForwardOptions, ModelGraph};
use crate::tensor::{Shape, Tensor};
use crate::training::LossSpec;

/// Finite-difference step. Inside one linear region every checked
/// function is at most quadratic along a coordinate, so the step only
/// trades roundoff against how often a kink falls inside the stencil.
pub const EPSILON: f64 = 1e-3;

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub seeds: usize,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
type Record = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// A differentiable op under test: random inputs and the recorded op.
pub struct OpCase {
    pub name: &'static str,
    inputs: Inputs,
    record: Record,
}

fn randn(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor<f64> {
    Tensor::randn(dims, 1.0, rng)
}

pub const OP_CASES: &[OpCase] = &[
    OpCase {
        name: "conv2d 3x3 stride 1",
        inputs: |r| vec![randn(r, [2, 2, 5, 5]), randn(r, [3, 2, 3, 3]), randn(r, [1, 3, 1, 1])],
        record: |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1),
    },
    OpCase {
        name: "conv2d 3x3 stride 2",
        inputs: |r| vec![randn(r, [1, 2, 6, 7]), randn(r, [3, 2, 3, 3]), randn(r, [1, 3, 1, 1])],
        record: |t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1),
    },
    OpCase {
        name: "conv2d 1x1",
        inputs: |r| vec![randn(r, [2, 3, 4, 4]), randn(r, [2, 3, 1, 1]), randn(r, [1, 2, 1, 1])],
        record: |t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 0),
    },
    OpCase {
        name: "transposed_conv2d",
        inputs: |r| vec![randn(r, [2, 3, 3, 4]), randn(r, [3, 2, 3, 3]), randn(r, [1, 2, 1, 1])],
        record: |t, v| t.deconv2d(v[0], v[1], Some(v[2])),
    },
    OpCase {
        name: "maxpool2d",
        inputs: |r| vec![randn(r, [2, 2, 6, 4])],
        record: |t, v| t.maxpool2d(v[0]),
    },
    OpCase {
        name: "avgpool2d",
        inputs: |r| vec![randn(r, [1, 3, 4, 6])],
        record: |t, v| t.avgpool2d(v[0]),
    },
    OpCase {
        name: "prelu",
        inputs: |r| vec![randn(r, [2, 3, 4, 4]), randn(r, [1, 3, 1, 1])],
        record: |t, v| t.prelu(v[0], v[1]),
    },
    OpCase {
        name: "fuse sum",
        inputs: |r| vec![randn(r, [1, 2, 3, 4]), randn(r, [1, 2, 3, 4])],
        record: |t, v| t.fuse(v[0], v[1], FuseMode::Sum),
    },
    OpCase {
        name: "fuse concat",
        inputs: |r| vec![randn(r, [2, 2, 3, 4]), randn(r, [2, 3, 3, 4])],
        record: |t, v| t.fuse(v[0], v[1], FuseMode::Concat),
    },
    OpCase {
        name: "sub",
        inputs: |r| vec![randn(r, [1, 2, 3, 3]), randn(r, [1, 2, 3, 3])],
        record: |t, v| t.sub(v[0], v[1]),
    },
    OpCase {
        name: "channels",
        inputs: |r| vec![randn(r, [2, 4, 3, 3])],
        record: |t, v| t.channels(v[0], 1, 2),
    },
    OpCase {
        name: "crop",
        inputs: |r| vec![randn(r, [1, 2, 5, 6])],
        record: |t, v| t.crop(v[0], 1, 2, 3, 3),
    },
    OpCase {
        name: "scale",
        inputs: |r| vec![randn(r, [1, 2, 3, 3])],
        record: |t, v| Ok(t.scale(v[0], -1.7)),
    },
    OpCase {
        name: "image_gradient",
        inputs: |r| vec![randn(r, [2, 2, 4, 5])],
        record: |t, v| Ok(t.image_gradient(v[0])),
    },
    OpCase {
        name: "mean_square",
        inputs: |r| vec![randn(r, [1, 2, 4, 4])],
        record: |t, v| Ok(t.mean_square(v[0])),
    },
    OpCase {
        name: "sum",
        inputs: |r| vec![randn(r, [1, 2, 3, 3])],
        record: |t, v| Ok(t.sum(v[0])),
    },
    OpCase {
        name: "loss",
        inputs: |r| vec![randn(r, [2, 1, 5, 6]), randn(r, [2, 1, 5, 6])],
        record: |t, v| LossSpec::default().record(t, v[0], v[1]),
    },
    OpCase {
        name: "conv2d-prelu-maxpool mean",
        inputs: |r| vec![randn(r, [1, 2, 8, 8]), randn(r, [3, 2, 3, 3]), randn(r, [1, 3, 1, 1]), randn(r, [1, 3, 1, 1])],
        record: |t, v| {
            let c = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            let a = t.prelu(c, v[3])?;
            let p = t.maxpool2d(a)?;
            Ok(t.mean(p))
        },
    },
];

/// Checks one op at one seed. Non-scalar outputs are reduced with
/// `mean((y − r)²)` against a fixed random `r`, so every output element
/// gets a distinct upstream gradient.
pub fn check_op(case: &OpCase, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (i, t) in (case.inputs)(&mut rng).into_iter().enumerate() {
        store.insert(format!("in{i}"), t)?;
    }
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..store.len()).map(|i| tape.param(&store, ParamId(i))).collect();
        let out = (case.record)(&mut tape, &vars)?;
        tape.shape(out)
    };
    let reference = Tensor::randn(shape, 1.0, &mut rng);
    let record = case.record;
    gradcheck_params(
        |tape, s| {
            let vars: Vec<Var> = (0..s.len()).map(|i| tape.param(s, ParamId(i))).collect();
            let out = record(tape, &vars)?;
            if shape == Shape::SCALAR {
                return Ok(out);
            }
            let r = tape.constant(reference.clone());
            let d = tape.sub(out, r)?;
            Ok(tape.mean_square(d))
        },
        &mut store,
        EPSILON,
    )
}

/// Small pyramid used for whole-model checks: three input channels, one
/// output, narrow widths. Without the residual path the output layer keeps
/// unit gain, so parameter gradients stay well above roundoff.
pub fn probe_config(levels: usize) -> CnpConfig {
    CnpConfig::default().with_levels(levels).with_width(8, 4).with_channels(3, 1)
}

/// Training loss of `probe_config(levels)` on a random `1×3×16×16` input,
/// checked against every parameter and every input pixel.
pub fn check_model(levels: usize, seed: u64) -> Result<GradCheckReport> {
    let mut graph: ModelGraph<f64> = build_cnp(&probe_config(levels))?.cast();
    graph.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    let input = Tensor::uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, &mut rng);
    let target = Tensor::uniform(Shape::new(1, 1, 16, 16), 0.0, 1.0, &mut rng);
    let loss = LossSpec::default();
    let opts = ForwardOptions::default();
    let arch = graph.arch.clone();

    let by_params = gradcheck_params(
        |tape, params| {
            let x = tape.constant(input.clone());
            let y = arch.record(params, tape, x, opts)?;
            let t = tape.constant(target.clone());
            loss.record(tape, y, t)
        },
        &mut graph.params,
        EPSILON,
    )?;
    let by_input = gradcheck(
        |tape, x| {
            let y = arch.record(&graph.params, tape, x, opts)?;
            let t = tape.constant(target.clone());
            loss.record(tape, y, t)
        },
        &input,
        EPSILON,
    )?;
    Ok(by_params.merge(by_input))
}

/// Runs every op for `op_seeds` seeds and the 1-, 2- and 3-level models
/// for `model_seeds` seeds, all derived from `seed`.
pub fn gradient_suite(op_seeds: usize, model_seeds: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut out = Vec::new();
    for case in OP_CASES {
        out.push(run_seeds(case.name.to_string(), op_seeds, seed, |s| check_op(case, s))?);
    }
    for levels in 1..=3 {
        out.push(run_seeds(format!("cnp L={levels} loss"), model_seeds, seed, |s| {
            check_model(levels, s)
        })?);
    }
    Ok(out)
}

fn run_seeds(name: String, seeds: usize, base: u64, f: impl Fn(u64) -> Result<GradCheckReport>) -> Result<SuiteEntry> {
    let mut report: Option<GradCheckReport> = None;
    for k in 0..seeds as u64 {
        let r = f(base.wrapping_mul(1_000_003).wrapping_add(k))?;
        report = Some(match report {
            None => r,
            Some(prev) => prev.merge(r),
        });
    }
    Ok(SuiteEntry {
        name,
        seeds,
        report: report.expect("at least one seed"),
    })
}
