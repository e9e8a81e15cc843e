//! Receptive field / cost table over a sweep of pyramid depths, next to the
//! single-level baseline of matching field size.

use std::fmt::Write as _;

use crate::analysis::{analytic_rf, cost_report};
use crate::error::Result;
use crate::model::{build_cnp, build_single_level, CnpConfig};

/// Published pyramid receptive fields for 1..=5 levels, and the layer count
/// a plain 3×3 stack needs to reach each of them.
pub const REFERENCE_RF: [usize; 5] = [15, 39, 95, 223, 511];
pub const REFERENCE_SINGLE_LAYERS: [usize; 5] = [8, 20, 48, 112, 256];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub levels: usize,
    pub rf: usize,
    pub reference_rf: Option<usize>,
    pub macs: u64,
    /// MACs relative to the one-level model of the same config.
    pub mac_ratio: f64,
    pub params: u64,
    pub activations: u64,
    pub peak_live: u64,
    pub single_layers: Option<usize>,
    pub single_rf: Option<usize>,
    pub single_macs: Option<u64>,
    pub single_peak_live: Option<u64>,
}

pub fn sweep(levels: impl IntoIterator<Item = usize>, config: &CnpConfig, height: usize, width: usize) -> Result<Vec<SweepRow>> {
    let base = cost_report(&build_cnp(&config.clone().with_levels(1))?.arch, height, width);
    let mut rows = Vec::new();
    for l in levels {
        let arch = build_cnp(&config.clone().with_levels(l))?.arch;
        let cost = cost_report(&arch, height, width);
        let single = match REFERENCE_SINGLE_LAYERS.get(l.wrapping_sub(1)) {
            Some(&n) => {
                let s = build_single_level(n, config)?.arch;
                Some((n, analytic_rf(&s).rf, cost_report(&s, height, width)))
            }
            None => None,
        };
        rows.push(SweepRow {
            levels: l,
            rf: cost.receptive_field,
            reference_rf: REFERENCE_RF.get(l.wrapping_sub(1)).copied(),
            macs: cost.total.macs,
            mac_ratio: cost.total.macs as f64 / base.total.macs as f64,
            params: cost.total.params,
            activations: cost.total.activations,
            peak_live: cost.peak_live,
            single_layers: single.as_ref().map(|s| s.0),
            single_rf: single.as_ref().map(|s| s.1),
            single_macs: single.as_ref().map(|s| s.2.total.macs),
            single_peak_live: single.as_ref().map(|s| s.2.peak_live),
        });
    }
    Ok(rows)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub fn render_text(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>6} {:>7} {:>14} {:>7} {:>10} {:>12} | {:>6} {:>6} {:>14} {:>12}",
        "levels", "rf", "ref_rf", "MACs", "ratio", "params", "peak_act", "layers", "rf", "MACs", "peak_act"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6} {:>6} {:>7} {:>14} {:>7.3} {:>10} {:>12} | {:>6} {:>6} {:>14} {:>12}",
            r.levels,
            r.rf,
            opt(r.reference_rf),
            r.macs,
            r.mac_ratio,
            r.params,
            r.peak_live,
            opt(r.single_layers),
            opt(r.single_rf),
            opt(r.single_macs),
            opt(r.single_peak_live),
        );
    }
    out
}

pub const CSV_HEADER: &str = "levels,rf,reference_rf,macs,mac_ratio,params,activations,peak_live,single_layers,single_rf,single_macs,single_peak_live";

pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{},{},{},{},{},{},{}",
            r.levels,
            r.rf,
            opt(r.reference_rf),
            r.macs,
            r.mac_ratio,
            r.params,
            r.activations,
            r.peak_live,
            opt(r.single_layers),
            opt(r.single_rf),
            opt(r.single_macs),
            opt(r.single_peak_live),
        );
    }
    out
}
