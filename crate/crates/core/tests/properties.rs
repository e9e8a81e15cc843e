mod common;

use cnp::analysis::{analytic_rf, cost_report};
use cnp::autodiff::Tape;
use cnp::io::{decode_checkpoint, encode_checkpoint, pad_reflect, PnmFormat, PnmImage};
use cnp::model::{build_cnp, CnpConfig};
use cnp::training::{degrade, psnr_from_mse, CleanSample, DegradationKind, DegradationSpec, LossSpec, Task};
use cnp::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stride_two_conv_and_deconv_are_adjoint(n in 1..=2usize, a in 1..=4usize, b in 1..=4usize, h in 1..=6usize, w in 1..=6usize, seed: u64) {
        // conv maps b channels at 2h×2w to a channels at h×w; the transposed
        // conv with the same [a, b, 3, 3] weight maps back.
        let x = common::randn([n, b, 2 * h, 2 * w], seed);
        let y = common::randn([n, a, h, w], seed ^ 1);
        let wt = common::randn([a, b, 3, 3], seed ^ 2);
        let mut t = Tape::new();
        let (xv, yv, wv) = (t.constant(x.clone()), t.constant(y.clone()), t.constant(wt));
        let cx = t.conv2d(xv, wv, None, 2, 1).unwrap();
        let dy = t.deconv2d(yv, wv, None).unwrap();
        let lhs = t.value(cx).dot(&y);
        let rhs = x.dot(t.value(dy));
        prop_assert!((lhs - rhs).abs() <= 1e-5 * lhs.abs().max(rhs.abs()).max(1e-12), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn maxpool_gradient_mass_is_conserved(n in 1..=2usize, c in 1..=3usize, h in 1..=6usize, w in 1..=6usize, ties: bool, seed: u64) {
        let x = if ties { common::small_ints([n, c, 2 * h, 2 * w], seed) } else { common::randn([n, c, 2 * h, 2 * w], seed) };
        let mut t = Tape::new();
        let xv = t.leaf(x);
        let y = t.maxpool2d(xv).unwrap();
        let up = common::randn([n, c, h, w], seed ^ 5).map(|v| v.abs() + 0.1);
        let g = t.backward_from(y, up.clone());
        let g = g.get(xv).unwrap();
        for nn in 0..n {
            for cc in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(u, v)| g.at(nn, cc, 2 * i + u, 2 * j + v));
                        prop_assert_eq!(window.iter().filter(|&&v| v != 0.0).count(), 1);
                    }
                }
            }
        }
        prop_assert!((g.sum() - up.sum()).abs() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic(levels in 1..=3usize, seed: u64) {
        let mut g = build_cnp(&CnpConfig::default().with_levels(levels).with_width(6, 3)).unwrap();
        g.init_params(seed);
        let x: Tensor = common::randn([1, 3, 16, 16], seed).cast();
        let mut h = g.clone();
        h.init_params(seed);
        prop_assert_eq!(g.forward(&x).unwrap(), h.forward(&x).unwrap());
    }

    #[test]
    fn loss_laws(h in 1..=7usize, w in 1..=7usize, seed: u64) {
        let p = common::randn([1, 2, h, w], seed);
        let q = common::randn([1, 2, h, w], seed ^ 3);
        let l = |lambda: f64, a: &Tensor<f64>, b: &Tensor<f64>| LossSpec::new(lambda).unwrap().value(a, b).unwrap();
        prop_assert_eq!(l(1.0, &p, &p), 0.0);
        prop_assert!(l(1.0, &p, &q) > 0.0);
        prop_assert!((l(1.0, &p, &q) - l(1.0, &q, &p)).abs() < 1e-12);
        let (l0, l1, l2) = (l(0.0, &p, &q), l(1.0, &p, &q), l(2.0, &p, &q));
        // lambda scales only the gradient term: l(λ) = l0 + λ·(l1 − l0).
        prop_assert!((l2 - (l0 + 2.0 * (l1 - l0))).abs() < 1e-10 * l2.max(1.0));
    }

    #[test]
    fn psnr_decreases_with_mse(a in 1e-8..1.0f64, b in 1e-8..1.0f64) {
        prop_assume!(a < b);
        prop_assert!(psnr_from_mse(a, 1.0) > psnr_from_mse(b, 1.0));
    }

    #[test]
    fn degradation_keeps_target_and_binary_masks(kind in 0..3u8, seed: u64) {
        let kind = [DegradationKind::depth_holes(), DegradationKind::sparse_visible(), DegradationKind::additive_noise()][kind as usize];
        let mut r = common::rng(seed);
        let scene = cnp::training::generate_scene(40, 48, &mut r);
        let gray = scene.gray();
        let clean = match kind {
            DegradationKind::DepthHoles { .. } => CleanSample { guide: Some(&gray), signal: &scene.depth },
            _ => CleanSample { guide: None, signal: &scene.rgb },
        };
        let spec = DegradationSpec { kind, seed };
        let s = degrade(&clean, &spec).unwrap();
        prop_assert_eq!(&s.target, clean.signal);
        prop_assert_eq!(&s, &degrade(&clean, &spec).unwrap());
        let task = Task::Degrade(kind);
        if let Some(m) = task.mask_channel() {
            let mask = s.input.channels(m, 1).unwrap();
            prop_assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            let sig = s.input.channels(task.residual_channel(), task.output_channels()).unwrap();
            for y in 0..40 {
                for x in 0..48 {
                    if mask.at(0, 0, y, x) == 0.0 {
                        for c in 0..sig.shape().c {
                            prop_assert_eq!(sig.at(0, c, y, x), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pad_then_crop_is_identity(h in 1..=40usize, w in 1..=40usize, shift in 0..=4u32, seed: u64) {
        let x = common::randn([1, 2, h, w], seed);
        let m = 1usize << shift;
        let (p, crop) = pad_reflect(&x, m);
        prop_assert_eq!(p.shape().h % m, 0);
        prop_assert_eq!(p.shape().w % m, 0);
        prop_assert!(p.shape().h < h + m && p.shape().w < w + m);
        prop_assert_eq!(crop.apply(&p), x);
    }

    #[test]
    fn pnm_round_trip(w in 1..=9usize, h in 1..=9usize, rgb: bool, wide: bool, seed: u64) {
        use rand::Rng;
        let format = if rgb { PnmFormat::Rgb } else { PnmFormat::Gray };
        let maxval = if wide { u16::MAX } else { 255 };
        let mut r = common::rng(seed);
        let samples = (0..w * h * format.channels()).map(|_| r.random_range(0..=maxval)).collect();
        let img = PnmImage::new(format, w, h, maxval, samples).unwrap();
        let bytes = img.encode();
        let back = PnmImage::parse(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn checkpoint_round_trip(levels in 1..=3usize, seed: u64) {
        let mut g = build_cnp(&CnpConfig::default().with_levels(levels).with_width(6, 3).with_residual(1)).unwrap();
        g.init_params(seed);
        let bytes = encode_checkpoint(&g, "meta");
        let ck = decode_checkpoint::<f32>(&bytes).unwrap();
        prop_assert_eq!(&ck.graph.arch, &g.arch);
        for (a, b) in ck.graph.params.iter().zip(g.params.iter()) {
            prop_assert_eq!(a.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        prop_assert_eq!(encode_checkpoint(&ck.graph, "meta"), bytes);
    }
}

#[test]
fn rf_ignores_input_size_and_cost_adds_up() {
    for levels in 1..=4 {
        let arch = build_cnp(&CnpConfig::default().with_levels(levels)).unwrap().arch;
        let a = cost_report(&arch, 64, 96);
        let b = cost_report(&arch, 480, 640);
        assert_eq!(a.receptive_field, b.receptive_field);
        assert_eq!(a.receptive_field, analytic_rf(&arch).rf);
        for r in [&a, &b] {
            assert_eq!(r.layers.iter().map(|l| l.macs).sum::<u64>(), r.total.macs);
            assert_eq!(r.levels.iter().map(|l| l.macs).sum::<u64>(), r.total.macs);
            assert_eq!(r.layers.iter().map(|l| l.params).sum::<u64>(), r.total.params);
        }
        assert_eq!(a, cost_report(&arch, 64, 96));
    }
}

#[test]
fn rf_grows_with_levels() {
    for s in 1..=3 {
        let rf: Vec<usize> = (1..=5)
            .map(|l| analytic_rf(&build_cnp(&CnpConfig::default().with_levels(l).with_transform_layers(s)).unwrap().arch).rf)
            .collect();
        for k in 0..4 {
            assert!(rf[k + 1] >= 2 * rf[k], "S={s}: {rf:?}");
        }
    }
}

#[test]
fn unsupported_maxval_is_rejected() {
    assert!(PnmImage::new(PnmFormat::Gray, 1, 1, 1000, vec![0]).is_err());
    assert!(PnmImage::parse(b"P5\n1 1\n1000\n\0\0").is_err());
}
