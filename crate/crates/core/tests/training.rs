mod common;

use cnp::model::{build_cnp, CnpConfig};
use cnp::training::{
    degrade, evaluate, oracle_filter, patch_sites, psnr, sample_patches, sparse_visible_mask, train_loop, CleanSample,
    Dataset, DegradationKind, DegradationSpec, FilterSpec, LossSpec, OptimizerKind, Sample, Task, TrainConfig,
    PSNR_CAP,
};
use cnp::{Shape, Tensor};

fn scenes(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let mut r = common::rng(seed);
    (0..count).map(|_| cnp::training::generate_scene(size, size, &mut r).rgb).collect()
}

/// Target equals input channel 1, so a residual model on channel 1 starts
/// close to the answer.
fn identity_data(count: usize, size: usize, seed: u64) -> Dataset {
    let samples = scenes(count, size, seed)
        .into_iter()
        .map(|rgb| Sample {
            target: rgb.channels(1, 1).unwrap(),
            input: rgb,
        })
        .collect();
    Dataset { samples }
}

fn quick_config(steps: usize) -> TrainConfig {
    TrainConfig {
        patch_size: 32,
        batch_size: 4,
        learning_rate: 1e-3,
        optimizer: OptimizerKind::adam(),
        steps,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn sparse_visible_fractions() {
    let (h, w, p, r) = (100usize, 100usize, 0.05f64, 4usize);
    // Per pixel, the chance that at least one seed lands in its clipped
    // (2r+1)^2 window.
    let span = |i: usize, n: usize| (i + r).min(n - 1) - i.saturating_sub(r) + 1;
    let mut expected = 0.0;
    for y in 0..h {
        for x in 0..w {
            expected += 1.0 - (1.0 - p).powi((span(y, h) * span(x, w)) as i32);
        }
    }
    expected /= (h * w) as f64;
    for seed in 0..24 {
        let (seeds, dilated) = sparse_visible_mask(h, w, p, r, &mut common::rng(seed));
        let before = seeds.iter().filter(|&&b| b).count() as f64 / (h * w) as f64;
        let after = dilated.iter().filter(|&&b| b).count() as f64 / (h * w) as f64;
        assert!((before - p).abs() <= 0.01, "seed {seed}: {before}");
        assert!((after - expected).abs() <= 0.02, "seed {seed}: {after} vs {expected}");
    }
}

#[test]
fn gaussian_noise_std() {
    let clean = Tensor::full(Shape::new(1, 3, 100, 100), 0.5f32);
    let kind = DegradationKind::AdditiveNoise {
        gaussian_sigma: 0.01,
        poisson: false,
        photon_scale: 255.0,
    };
    for seed in 0..5 {
        let s = degrade(&CleanSample { guide: None, signal: &clean }, &DegradationSpec { kind, seed }).unwrap();
        let d: Vec<f64> = s.input.data().iter().map(|&v| v as f64 - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((0.009..=0.011).contains(&std), "seed {seed}: {std}");
    }
}

#[test]
fn poisson_noise_tracks_intensity() {
    // Shot noise variance is x / scale: brighter pixels are noisier.
    let std_at = |level: f32| {
        let clean = Tensor::full(Shape::new(1, 1, 80, 80), level);
        let kind = DegradationKind::AdditiveNoise {
            gaussian_sigma: 0.0,
            poisson: true,
            photon_scale: 255.0,
        };
        let s = degrade(&CleanSample { guide: None, signal: &clean }, &DegradationSpec { kind, seed: 1 }).unwrap();
        (s.input.data().iter().map(|&v| (v as f64 - level as f64).powi(2)).sum::<f64>() / 6400.0).sqrt()
    };
    for level in [0.1f32, 0.5] {
        let want = (level as f64 / 255.0).sqrt();
        assert!((std_at(level) - want).abs() < 0.1 * want, "{level}");
    }
}

#[test]
fn bilateral_preserves_a_step() {
    let step = Tensor::<f64>::from_fn(Shape::new(1, 1, 24, 24), |_, _, _, x| if x < 12 { 0.2 } else { 0.8 });
    let spec = FilterSpec::Bilateral {
        size: 9,
        sigma_space: 3.0,
        sigma_range: 0.05,
    };
    let out = oracle_filter(&step, spec).unwrap();
    let worst = out.data().iter().zip(step.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.01 * 0.6, "{worst}");
    let boxed = oracle_filter(&step, FilterSpec::Box { size: 9 }).unwrap();
    assert!(boxed.at(0, 0, 12, 11) > 0.3, "box should blur across the edge");
}

#[test]
fn crop_offsets_are_uniform() {
    let data = Dataset {
        samples: vec![Sample {
            input: Tensor::zeros(Shape::new(1, 1, 100, 100)),
            target: Tensor::zeros(Shape::new(1, 1, 100, 100)),
        }],
    };
    let patch = 81;
    let bins = 100 - patch + 1;
    let (mut rows, mut cols) = (vec![0usize; bins], vec![0usize; bins]);
    for step in 0..100 {
        for s in patch_sites(&data, patch, 100, 11, step).unwrap() {
            rows[s.top] += 1;
            cols[s.left] += 1;
        }
    }
    // Chi-square critical value for 19 degrees of freedom at 0.01.
    let critical = 36.191;
    for counts in [&rows, &cols] {
        let e = 10_000.0 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < critical, "chi2 {chi2}");
    }
}

#[test]
fn batch_shapes_and_alignment() {
    let task = Task::from_name("depth-holes").unwrap();
    let data = task.generate(3, 100, 100, 5).unwrap();
    let b = sample_patches::<f32>(&data, 81, 32, 32, 9, 1).unwrap();
    assert_eq!(b.input.shape(), Shape::new(32, 3, 96, 96));
    assert_eq!(b.target.shape(), Shape::new(32, 1, 81, 81));
    assert_eq!((b.crop.height, b.crop.width), (81, 81));
    let sites = patch_sites(&data, 81, 32, 9, 1).unwrap();
    for (k, site) in sites.iter().enumerate() {
        let s = &data.samples[site.sample];
        let item = b.input.batch_item(k);
        assert_eq!(b.crop.apply(&item), s.input.crop(site.top, site.left, 81, 81).unwrap());
        assert_eq!(b.target.batch_item(k), s.target.crop(site.top, site.left, 81, 81).unwrap());
    }
    let again = sample_patches::<f32>(&data, 81, 32, 32, 9, 1).unwrap();
    assert_eq!(again.input, b.input);
    assert!(sample_patches::<f32>(&Dataset::default(), 81, 1, 1, 0, 1).is_err());
}

#[test]
fn identity_task_is_learned() {
    let mut g = build_cnp(&CnpConfig::default().with_levels(2).with_width(8, 4).with_residual(1)).unwrap();
    g.init_params(1);
    let report = train_loop(&mut g, &identity_data(8, 48, 1), &identity_data(4, 48, 2), &quick_config(500), &LossSpec::default()).unwrap();
    let mse = 10f64.powf(-report.heldout_psnr / 10.0);
    assert!(mse < 1e-4, "held-out mse {mse}");
}

#[test]
fn denoising_loss_does_not_diverge() {
    let task = Task::from_name("additive-noise").unwrap();
    let train = task.generate(8, 48, 48, 4).unwrap();
    let mut g = build_cnp(&CnpConfig::default().with_levels(2).with_width(8, 4).with_channels(3, 3).with_residual(0)).unwrap();
    g.init_params(2);
    let cfg = TrainConfig {
        batch_size: 16,
        ..quick_config(400)
    };
    let report = train_loop(&mut g, &train, &Dataset::default(), &cfg, &LossSpec::default()).unwrap();
    let smooth = report.smoothed_loss(50);
    // In the final quarter no point rises more than 10% above the best
    // smoothed loss seen so far.
    let mut best = f64::INFINITY;
    for (i, &v) in smooth.iter().enumerate() {
        if i >= smooth.len() * 3 / 4 {
            assert!(v <= 1.1 * best, "step {}: {v} vs best {best}", i + 1);
        }
        best = best.min(v);
    }
}

#[test]
fn training_is_bit_deterministic() {
    let run = || {
        let mut g = build_cnp(&CnpConfig::default().with_levels(2).with_width(6, 3).with_residual(1)).unwrap();
        g.init_params(8);
        let report = train_loop(&mut g, &identity_data(4, 32, 3), &identity_data(2, 32, 4), &quick_config(25), &LossSpec::default()).unwrap();
        let bits: Vec<u32> = g.params.iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect();
        (bits, report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn nan_input_reports_divergence() {
    let mut data = identity_data(2, 32, 5);
    data.samples[0].input.data_mut().fill(f32::NAN);
    data.samples[1].input.data_mut().fill(f32::NAN);
    let mut g = build_cnp(&CnpConfig::default().with_levels(1).with_width(4, 2).with_residual(1)).unwrap();
    g.init_params(1);
    let err = train_loop(&mut g, &data, &Dataset::default(), &quick_config(3), &LossSpec::default()).unwrap_err();
    assert!(err.to_string().contains("step 1"), "{err}");
}

#[test]
fn untrained_residual_matches_noisy_input() {
    let task = Task::from_name("additive-noise").unwrap();
    let test = task.generate(6, 64, 64, 7).unwrap();
    let baseline = test.samples.iter().map(|s| psnr(&s.input, &s.target, 1.0)).sum::<f64>() / test.len() as f64;
    let mut g = build_cnp(&CnpConfig::default().with_levels(3).with_width(8, 4).with_channels(3, 3).with_residual(0)).unwrap();
    g.init_params(3);
    let got = evaluate(&g, &test, 1.0).unwrap();
    assert!((got - baseline).abs() <= 0.5, "{got} vs {baseline}");
}

#[test]
fn perfect_prediction_hits_the_cap_and_order_is_irrelevant() {
    let mut g = build_cnp(&CnpConfig::default().with_levels(2).with_width(6, 3).with_residual(1)).unwrap();
    g.init_params(4);
    for name in ["adjust.conv2.weight", "adjust.conv2.bias"] {
        g.params.by_name_mut(name).unwrap().value.fill(0.0);
    }
    let data = identity_data(3, 40, 6);
    assert_eq!(evaluate(&g, &data, 1.0).unwrap(), PSNR_CAP);

    let task = Task::from_name("depth-holes").unwrap();
    let test = task.generate(5, 40, 40, 8).unwrap();
    g.init_params(4);
    let forward = evaluate(&g, &test, 1.0).unwrap();
    let mut reversed = test.clone();
    reversed.samples.reverse();
    assert!((evaluate(&g, &reversed, 1.0).unwrap() - forward).abs() < 1e-9);
    assert!(evaluate(&g, &Dataset::default(), 1.0).is_err());
}
