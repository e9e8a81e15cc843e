//! Receptive-field composition and measurement, and the compute/memory model.

mod cost;
mod rf;
pub mod table;

pub use cost::{cost_report, CostReport, LayerCost, LevelCost};
pub use rf::{analytic_rf, empirical_rf, jumps, probe_min_size, support, RfState, RfTrace};
