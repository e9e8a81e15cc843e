//! Dense-tensor reverse-mode differentiation with exactly the operations the
//! pyramid network needs.

mod gradcheck;
pub mod kernels;
mod params;
mod tape;

pub use gradcheck::{gradcheck, gradcheck_params, GradCheckReport};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{FuseMode, Gradients, Tape, Var};
