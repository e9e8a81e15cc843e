//! One line per acceptance criterion. Runs without the libtest harness so
//! the report reads top to bottom; exits nonzero if any criterion fails.
//!
//! The trend criteria (7 to 9) share one desk-scale ablation that takes
//! hours. Its CSV is cached under the cargo target tmp dir, keyed by the
//! full ablation config; delete `ablation-desk.csv` there to force a rerun.
//! Setting `CNP_SKIP_ABLATION=1` reports those three as skipped instead.

mod common;

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use cnp::ablation::{run_ablation, AblationConfig, AblationReport, Family};
use cnp::analysis::{analytic_rf, cost_report, empirical_rf, probe_min_size};
use cnp::autodiff::Tape;
use cnp::checks::{gradient_suite, TOLERANCE};
use cnp::io::{decode_checkpoint, encode_checkpoint, PnmFormat, PnmImage};
use cnp::model::{build_cnp, build_single_level, CnpConfig};
use cnp::training::{train_loop, LossSpec, OptimizerKind, Task, TrainConfig};
use cnp::{Error, Tensor};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn single_level_table() -> Outcome {
    let t = Instant::now();
    let rows: Vec<(usize, usize)> = [8, 20, 48, 112, 256]
        .into_iter()
        .map(|n| (n, analytic_rf(&build_single_level(n, &CnpConfig::default()).unwrap().arch).rf))
        .collect();
    let want = [15, 39, 95, 223, 511];
    let elapsed = t.elapsed();
    let exact = rows.iter().zip(want).all(|(r, w)| r.1 == w);
    let shown: Vec<String> = rows.iter().map(|(n, rf)| format!("{n}->{rf}")).collect();
    outcome(exact && elapsed < Duration::from_secs(1), format!("{} in {}", shown.join(" "), secs(elapsed)))
}

fn rf_self_consistency() -> Outcome {
    let t = Instant::now();
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for s in 1..=3 {
        for l in 1..=4 {
            let g = build_cnp(&CnpConfig::default().with_levels(l).with_transform_layers(s)).unwrap();
            let analytic = analytic_rf(&g.arch).rf;
            let measured = empirical_rf(&g, probe_min_size(&g.arch)).unwrap();
            checked += 1;
            if analytic != measured {
                mismatches.push(format!("L={l} S={s}: {analytic} vs {measured}"));
            }
        }
    }
    let elapsed = t.elapsed();
    let detail = if mismatches.is_empty() {
        format!("{checked} configs equal in {}", secs(elapsed))
    } else {
        mismatches.join("; ")
    };
    outcome(mismatches.is_empty() && elapsed < Duration::from_secs(300), detail)
}

fn exponential_growth() -> Outcome {
    let mut ok = true;
    let mut shown = Vec::new();
    for s in 1..=3 {
        let rf: Vec<usize> = (1..=5)
            .map(|l| analytic_rf(&build_cnp(&CnpConfig::default().with_levels(l).with_transform_layers(s)).unwrap().arch).rf)
            .collect();
        ok &= rf.windows(2).all(|w| w[1] >= 2 * w[0]);
        shown.push(format!("S={s} {rf:?}"));
    }
    outcome(ok, shown.join(" "))
}

fn cost_scaling() -> Outcome {
    let macs = |l: usize| cost_report(&build_cnp(&CnpConfig::default().with_levels(l)).unwrap().arch, 480, 640).total.macs;
    let ratio = macs(5) as f64 / macs(1) as f64;
    // Every extraction module reads F channels, so the first one is built
    // with an F-channel input to compare like with like.
    let cfg = CnpConfig::default().with_levels(5);
    let cfg = cfg.clone().with_channels(cfg.feature_channels, 1);
    let report = cost_report(&build_cnp(&cfg).unwrap().arch, 480, 640);
    let base = report.extraction_macs(0);
    let exact = (1..5).all(|i| report.extraction_macs(i) * 4u64.pow(i as u32) == base);
    outcome(ratio <= 4.0 && exact, format!("L5/L1 MACs {ratio:.3}; extraction 4^-i exact: {exact}"))
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let entries = gradient_suite(20, 3, 0).unwrap();
    let elapsed = t.elapsed();
    let worst = entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    let (models, ops): (Vec<_>, Vec<_>) = entries.iter().partition(|e| e.name.starts_with("cnp L="));
    let op_seeds = ops.iter().map(|e| e.seeds).min().unwrap_or(0);
    let model_seeds = models.iter().map(|e| e.seeds).min().unwrap_or(0);
    let pass = failed.is_empty() && worst < TOLERANCE && op_seeds >= 20 && models.len() == 3 && elapsed < Duration::from_secs(600);
    outcome(
        pass,
        format!("{} ops x {op_seeds} seeds, {} models x {model_seeds} seeds, max rel {worst:.2e} in {}{}", ops.len(), models.len(), secs(elapsed), if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }),
    )
}

fn oracles() -> Outcome {
    let mut r = common::rng(2024);
    let mut worst: f64 = 0.0;
    let mut ties_exact = true;
    let cases = 200;
    for k in 0..cases {
        let seed = r.random::<u64>();
        let (n, c, o) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
        let (h, w) = (r.random_range(3..=9), r.random_range(3..=9));
        let ksize = if k % 2 == 0 { 3 } else { 1 };
        let stride = r.random_range(1..=2);
        let x = common::randn([n, c, h, w], seed);
        let wt = common::randn([o, c, ksize, ksize], seed ^ 1);
        let b = common::randn([1, o, 1, 1], seed ^ 2);
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(wt.clone()), t.constant(b.clone()));
        let y = t.conv2d(xv, wv, Some(bv), stride, ksize / 2).unwrap();
        worst = worst.max(common::max_rel_diff(t.value(y), &common::conv2d(&x, &wt, Some(&b), stride, ksize / 2)));

        let (dh, dw) = (r.random_range(1..=5), r.random_range(1..=5));
        let xd = common::randn([n, c, dh, dw], seed ^ 3);
        let wd = common::randn([c, o, 3, 3], seed ^ 4);
        let d = t.constant(xd.clone());
        let dwv = t.constant(wd.clone());
        let yd = t.deconv2d(d, dwv, None).unwrap();
        worst = worst.max(common::max_rel_diff(t.value(yd), &common::deconv2d(&xd, &wd, None)));

        let xp = common::small_ints([n, c, 2 * dh, 2 * dw], seed ^ 5);
        let (want, winners) = common::maxpool2(&xp);
        let mut tp = Tape::new();
        let pv = tp.leaf(xp.clone());
        let yp = tp.maxpool2d(pv).unwrap();
        let up = common::randn([n, c, dh, dw], seed ^ 6);
        let g = tp.backward_from(yp, up.clone());
        let mut expect = Tensor::<f64>::zeros(xp.shape());
        for (i, &(a, b2, cc, dd)) in winners.iter().enumerate() {
            expect.set(a, b2, cc, dd, up.data()[i]);
        }
        ties_exact &= tp.value(yp) == &want && g.get(pv).unwrap() == &expect;

        let gi = t.image_gradient(xv);
        ties_exact &= t.value(gi) == &common::image_gradient(&x);

        let q = common::randn([n, c, h, w], seed ^ 7);
        let lambda = r.random_range(0.0..3.0);
        let got = LossSpec::new(lambda).unwrap().value(&x, &q).unwrap();
        let want = common::loss(&x, &q, lambda);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    outcome(worst < 1e-5 && ties_exact, format!("{cases} random shapes per op, max rel {worst:.2e}, pooling and gradient exact: {ties_exact}"))
}

fn ablation_cache() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ablation-desk.csv")
}

/// Runs the desk ablation, or reuses the cached result of an identical
/// configuration.
fn desk_ablation() -> Result<(AblationReport, String), String> {
    let cfg = AblationConfig::desk();
    let key = format!("# {cfg:?}");
    let path = ablation_cache();
    if let Ok(text) = fs::read_to_string(&path) {
        if let Some((first, csv)) = text.split_once('\n') {
            if first == key {
                if let Ok(report) = AblationReport::parse_csv(csv) {
                    return Ok((report, format!("cached {}", path.display())));
                }
            }
        }
    }
    let t = Instant::now();
    let report = run_ablation(&cfg, |line| eprintln!("  ablation: {line}")).map_err(|e| e.to_string())?;
    let _ = fs::write(&path, format!("{key}\n{}", report.to_csv()));
    Ok((report, format!("ran in {}", secs(t.elapsed()))))
}

fn level_trend(report: &AblationReport) -> Outcome {
    let p = |l| report.psnr(Family::Cnp, l).unwrap_or(f64::NAN);
    let (a, b, c) = (p(1), p(3), p(5));
    let pass = b - a >= 0.5 && c - b >= 0.5;
    outcome(pass, format!("L1 {a:.2} dB, L3 {b:.2} dB, L5 {c:.2} dB (margins {:.2}, {:.2}; input {:.2} dB)", b - a, c - b, report.input_psnr))
}

fn fusion_trend(report: &AblationReport) -> Outcome {
    let mut pass = true;
    let mut shown = Vec::new();
    for l in [2, 3, 5] {
        let cnp = report.psnr(Family::Cnp, l).unwrap_or(f64::NAN);
        let simple = report.psnr(Family::Simple, l).unwrap_or(f64::NAN);
        pass &= cnp >= simple;
        shown.push(format!("L{l} {cnp:.2} vs {simple:.2}"));
    }
    outcome(pass, format!("cnp vs simple: {}", shown.join(", ")))
}

fn blocking_probe(report: &AblationReport) -> Outcome {
    let pass = report.probe.len() >= 2 && report.probe.windows(2).all(|w| w[1].psnr > w[0].psnr);
    let shown: Vec<String> = report.probe.iter().map(|p| format!("{}:{:.2}", p.active, p.psnr)).collect();
    outcome(pass, format!("active levels -> dB {} (input {:.2} dB)", shown.join(" "), report.probe_input_psnr))
}

fn round_trips() -> Outcome {
    let mut notes = Vec::new();
    let mut g = build_cnp(&CnpConfig::default().with_levels(3).with_width(8, 4).with_residual(1)).unwrap();
    g.init_params(11);
    let bytes = encode_checkpoint(&g, "acceptance");
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    let x: Tensor = common::randn([1, 3, 32, 32], 1).cast();
    let ck_ok = encode_checkpoint(&back.graph, "acceptance") == bytes && back.graph.forward(&x).unwrap() == g.forward(&x).unwrap();
    notes.push(format!("checkpoint {ck_ok}"));

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 1;
    let rejected = matches!(decode_checkpoint::<f32>(&corrupt), Err(Error::Checksum { .. }));
    notes.push(format!("corruption rejected {rejected}"));

    let mut r = common::rng(3);
    let mut pnm_ok = true;
    for (format, maxval) in [(PnmFormat::Gray, 65535u16), (PnmFormat::Gray, 255), (PnmFormat::Rgb, 255), (PnmFormat::Rgb, 65535)] {
        let (w, h) = (r.random_range(1..40), r.random_range(1..40));
        let samples = (0..w * h * format.channels()).map(|_| r.random_range(0..=maxval)).collect();
        let img = PnmImage::new(format, w, h, maxval, samples).unwrap();
        let enc = img.encode();
        let dec = PnmImage::parse(&enc).unwrap();
        pnm_ok &= dec == img && dec.encode() == enc;
    }
    notes.push(format!("pnm {pnm_ok}"));

    let rerun = || {
        let task = Task::from_name("depth-holes").unwrap();
        let data = task.generate(4, 48, 48, 9).unwrap();
        let held = task.generate(2, 48, 48, 10).unwrap();
        let cfg = CnpConfig::default().with_levels(2).with_width(6, 3).with_residual(task.residual_channel());
        let mut g = build_cnp(&cfg).unwrap();
        g.init_params(4);
        let tc = TrainConfig {
            patch_size: 32,
            batch_size: 2,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            steps: 20,
            eval_every: 10,
            seed: 6,
            ..TrainConfig::default()
        };
        let report = train_loop(&mut g, &data, &held, &tc, &LossSpec::default()).unwrap();
        (encode_checkpoint(&g, &tc.metadata()), report.to_csv())
    };
    let deterministic = rerun() == rerun();
    notes.push(format!("reruns identical {deterministic}"));
    outcome(ck_ok && rejected && pnm_ok && deterministic, notes.join(", "))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {:<4} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "single-level receptive fields", single_level_table());
    report(2, "analytic equals empirical receptive field", rf_self_consistency());
    report(3, "exponential receptive-field growth", exponential_growth());
    report(4, "cost scaling", cost_scaling());
    report(5, "gradient suite", gradients());
    report(6, "oracle equivalence", oracles());
    let skip = std::env::var_os("CNP_SKIP_ABLATION").is_some_and(|v| v == "1");
    let ablation = if skip { Err(None) } else { desk_ablation().map_err(Some) };
    match ablation {
        Ok((ablation, how)) => {
            println!("desk ablation: {how}");
            report(7, "level trend", level_trend(&ablation));
            report(8, "pyramid vs simple multiscale", fusion_trend(&ablation));
            report(9, "blocked-level probe", blocking_probe(&ablation));
        }
        Err(None) => {
            for (n, name) in [(7, "level trend"), (8, "pyramid vs simple multiscale"), (9, "blocked-level probe")] {
                println!("criterion {n:>2} SKIP {name}: CNP_SKIP_ABLATION is set");
            }
        }
        Err(Some(e)) => {
            for (n, name) in [(7, "level trend"), (8, "pyramid vs simple multiscale"), (9, "blocked-level probe")] {
                report(n, name, outcome(false, format!("ablation failed: {e}")));
            }
        }
    }
    report(10, "serialization and determinism", round_trips());
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
