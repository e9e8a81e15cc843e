use cnp::analysis::table::{sweep, REFERENCE_RF};
use cnp::analysis::{analytic_rf, cost_report, empirical_rf, probe_min_size};
use cnp::model::{build_cnp, build_simple_multiscale, build_single_level, CnpConfig};
use cnp::Error;

fn narrow() -> CnpConfig {
    CnpConfig::default().with_width(4, 2)
}

#[test]
fn sequential_convs_grow_by_two() {
    for n in 2..=9 {
        let g = build_single_level(n, &narrow()).unwrap();
        let rf = analytic_rf(&g.arch).rf;
        assert_eq!(rf, 2 * (n - 1) + 1);
        assert_eq!(empirical_rf(&g, probe_min_size(&g.arch)).unwrap(), rf);
    }
    let one = build_single_level(2, &narrow().with_channels(1, 1)).unwrap();
    assert_eq!(empirical_rf(&one, 8).unwrap(), 3);
}

#[test]
fn empirical_matches_analytic_for_every_builder() {
    for levels in 1..=3 {
        for g in [build_cnp(&narrow().with_levels(levels)).unwrap(), build_simple_multiscale(&narrow().with_levels(levels)).unwrap()] {
            let size = probe_min_size(&g.arch);
            assert_eq!(empirical_rf(&g, size).unwrap(), analytic_rf(&g.arch).rf, "{:?} L={levels}", g.arch.kind);
            assert_eq!(empirical_rf(&g, size + 16).unwrap(), analytic_rf(&g.arch).rf);
        }
    }
}

#[test]
fn small_probe_reports_required_size() {
    let g = build_cnp(&narrow().with_levels(3)).unwrap();
    let need = probe_min_size(&g.arch);
    match empirical_rf(&g, 8) {
        Err(Error::ProbeTooSmall { given, required }) => assert_eq!((given, required), (8, need)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rf_never_shrinks_along_a_path() {
    for levels in 1..=5 {
        let arch = build_cnp(&CnpConfig::default().with_levels(levels)).unwrap().arch;
        let rf = analytic_rf(&arch);
        for (i, layer) in arch.layers.iter().enumerate() {
            for input in &layer.inputs {
                assert!(rf.trace[i].rf >= rf.trace[input.0].rf, "{} after {}", layer.name, arch.layer(*input).name);
            }
        }
        assert_eq!(rf.trace.last().unwrap().rf, rf.rf);
    }
}

#[test]
fn single_conv_macs_closed_form() {
    let g = build_single_level(2, &CnpConfig::default().with_width(2, 1).with_channels(1, 1)).unwrap();
    let report = cost_report(&g.arch, 8, 8);
    let conv = report.layers.iter().find(|l| l.name == "conv1").unwrap();
    // Two output channels, each 8·8·9 MACs from the one input channel.
    assert_eq!(conv.macs, 2 * 8 * 8 * 9);
}

#[test]
fn sweep_rows_carry_reference_values() {
    let rows = sweep(1..=5, &CnpConfig::default(), 480, 640).unwrap();
    assert_eq!(rows.len(), 5);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.reference_rf, Some(REFERENCE_RF[i]));
        assert!(r.single_rf.unwrap() >= r.rf);
    }
    assert_eq!(rows[0].mac_ratio, 1.0);
    assert!(rows[4].mac_ratio <= 4.0);
}
