//! Tasks, synthetic datasets, and their on-disk layout.
//!
//! A dataset directory holds `task.txt` plus, for sample `i` and channel
//! `c`, the 16-bit gray images `{i:04}_input_{c}.pgm` and
//! `{i:04}_target_{c}.pgm`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_pnm, write_pnm, PnmImage};
use crate::tensor::Tensor;
use crate::training::degrade::{check_binary_mask, degrade, CleanSample, DegradationKind, DegradationSpec, Sample};
use crate::training::filters::{oracle_filter, FilterSpec};
use crate::training::scenes::generate_scene;

/// What a model learns to do.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Task {
    /// Recover the clean signal from a degraded one. Depth holes use the
    /// scene's gray image and depth; the other kinds use its color image.
    Degrade(DegradationKind),
    /// Reproduce a reference filter on color images.
    Filter(FilterSpec),
}

impl Task {
    pub fn input_channels(&self) -> usize {
        match self {
            Task::Degrade(DegradationKind::DepthHoles { .. }) => 3,
            Task::Degrade(DegradationKind::SparseVisible { .. }) => 4,
            Task::Degrade(DegradationKind::AdditiveNoise { .. }) | Task::Filter(_) => 3,
        }
    }

    pub fn output_channels(&self) -> usize {
        match self {
            Task::Degrade(DegradationKind::DepthHoles { .. }) => 1,
            _ => 3,
        }
    }

    /// First input channel the prediction is added to under residual
    /// learning.
    pub fn residual_channel(&self) -> usize {
        match self {
            Task::Degrade(kind) => kind.signal_channel(1),
            Task::Filter(_) => 0,
        }
    }

    /// Input channel holding a binary mask, if any.
    pub fn mask_channel(&self) -> Option<usize> {
        match self {
            Task::Degrade(DegradationKind::DepthHoles { .. }) => Some(2),
            Task::Degrade(DegradationKind::SparseVisible { .. }) => Some(3),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Task::Degrade(k) => k.name().to_string(),
            Task::Filter(f) => format!("filter-{}", f.name()),
        }
    }

    /// Default parameters for a task name: a degradation kind or
    /// `filter-box`, `filter-gaussian`, `filter-bilateral`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "filter-box" => Task::Filter(FilterSpec::Box { size: 5 }),
            "filter-gaussian" => Task::Filter(FilterSpec::Gaussian { size: 7, sigma: 1.5 }),
            "filter-bilateral" => Task::Filter(FilterSpec::Bilateral {
                size: 9,
                sigma_space: 3.0,
                sigma_range: 0.1,
            }),
            other => Task::Degrade(DegradationKind::from_name(other)?),
        })
    }

    /// Sample `index` of the stream defined by `seed`.
    pub fn sample(&self, height: usize, width: usize, seed: u64, index: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let scene = generate_scene(height, width, &mut rng);
        match *self {
            Task::Degrade(kind) => {
                let gray = scene.gray();
                let clean = match kind {
                    DegradationKind::DepthHoles { .. } => CleanSample {
                        guide: Some(&gray),
                        signal: &scene.depth,
                    },
                    _ => CleanSample {
                        guide: None,
                        signal: &scene.rgb,
                    },
                };
                degrade(&clean, &DegradationSpec { kind, seed: rng.random() })
            }
            Task::Filter(spec) => Ok(Sample {
                target: oracle_filter(&scene.rgb, spec)?,
                input: scene.rgb,
            }),
        }
    }

    pub fn generate(&self, count: usize, height: usize, width: usize, seed: u64) -> Result<Dataset> {
        let samples = (0..count as u64)
            .map(|i| self.sample(height, width, seed, i))
            .collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }

    /// `key=value` lines describing the task and its parameters.
    pub fn to_text(&self) -> String {
        let mut s = format!("task={}\n", self.name());
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        match *self {
            Task::Degrade(DegradationKind::DepthHoles {
                rects,
                min_side,
                max_side,
                blob_fraction,
                noise_sigma,
            }) => {
                kv("rects", format!("{},{}", rects.0, rects.1));
                kv("sides", format!("{min_side},{max_side}"));
                kv("blob_fraction", format!("{},{}", blob_fraction.0, blob_fraction.1));
                kv("noise_sigma", noise_sigma.to_string());
            }
            Task::Degrade(DegradationKind::SparseVisible {
                visible_fraction,
                dilate_radius,
            }) => {
                kv("visible_fraction", visible_fraction.to_string());
                kv("dilate_radius", dilate_radius.to_string());
            }
            Task::Degrade(DegradationKind::AdditiveNoise {
                gaussian_sigma,
                poisson,
                photon_scale,
            }) => {
                kv("gaussian_sigma", gaussian_sigma.to_string());
                kv("poisson", poisson.to_string());
                kv("photon_scale", photon_scale.to_string());
            }
            Task::Filter(f) => {
                kv("size", f.size().to_string());
                match f {
                    FilterSpec::Box { .. } => {}
                    FilterSpec::Gaussian { sigma, .. } => kv("sigma", sigma.to_string()),
                    FilterSpec::Bilateral {
                        sigma_space,
                        sigma_range,
                        ..
                    } => {
                        kv("sigma_space", sigma_space.to_string());
                        kv("sigma_range", sigma_range.to_string());
                    }
                }
            }
        }
        s
    }

    /// Parses [`Task::to_text`] output. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("task line without '=': {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let name = map.get("task").ok_or_else(|| Error::Config("task description lacks task=".into()))?;
        let mut task = Task::from_name(name)?;
        let num = |k: &str| -> Result<Option<f64>> {
            map.get(k)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Config(format!("{k}: not a number: {v:?}"))))
                .transpose()
        };
        let pair = |k: &str| -> Result<Option<(f64, f64)>> {
            map.get(k)
                .map(|v| {
                    let bad = || Error::Config(format!("{k}: expected two comma-separated numbers, got {v:?}"));
                    let (a, b) = v.split_once(',').ok_or_else(bad)?;
                    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
                })
                .transpose()
        };
        match &mut task {
            Task::Degrade(DegradationKind::DepthHoles {
                rects,
                min_side,
                max_side,
                blob_fraction,
                noise_sigma,
            }) => {
                if let Some((a, b)) = pair("rects")? {
                    *rects = (a as usize, b as usize);
                }
                if let Some((a, b)) = pair("sides")? {
                    (*min_side, *max_side) = (a as usize, b as usize);
                }
                if let Some(p) = pair("blob_fraction")? {
                    *blob_fraction = p;
                }
                if let Some(v) = num("noise_sigma")? {
                    *noise_sigma = v;
                }
            }
            Task::Degrade(DegradationKind::SparseVisible {
                visible_fraction,
                dilate_radius,
            }) => {
                if let Some(v) = num("visible_fraction")? {
                    *visible_fraction = v;
                }
                if let Some(v) = num("dilate_radius")? {
                    *dilate_radius = v as usize;
                }
            }
            Task::Degrade(DegradationKind::AdditiveNoise {
                gaussian_sigma,
                poisson,
                photon_scale,
            }) => {
                if let Some(v) = num("gaussian_sigma")? {
                    *gaussian_sigma = v;
                }
                if let Some(v) = map.get("poisson") {
                    *poisson = v
                        .parse()
                        .map_err(|_| Error::Config(format!("poisson: expected true or false, got {v:?}")))?;
                }
                if let Some(v) = num("photon_scale")? {
                    *photon_scale = v;
                }
            }
            Task::Filter(f) => {
                let size = num("size")?.map(|v| v as usize);
                match f {
                    FilterSpec::Box { size: s } => *s = size.unwrap_or(*s),
                    FilterSpec::Gaussian { size: s, sigma } => {
                        *s = size.unwrap_or(*s);
                        *sigma = num("sigma")?.unwrap_or(*sigma);
                    }
                    FilterSpec::Bilateral {
                        size: s,
                        sigma_space,
                        sigma_range,
                    } => {
                        *s = size.unwrap_or(*s);
                        *sigma_space = num("sigma_space")?.unwrap_or(*sigma_space);
                        *sigma_range = num("sigma_range")?.unwrap_or(*sigma_range);
                    }
                }
            }
        }
        if let Task::Degrade(k) = &task {
            k.validate()?;
        }
        Ok(task)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes `task.txt` and one 16-bit PGM per channel.
    pub fn save_dir(&self, task: &Task, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        atomic_write(&dir.join("task.txt"), task.to_text().as_bytes())?;
        for (i, s) in self.samples.iter().enumerate() {
            for (role, t) in [("input", &s.input), ("target", &s.target)] {
                for c in 0..t.shape().c {
                    let img = PnmImage::from_tensor(&t.channels(c, 1)?, 65535)?;
                    write_pnm(&img, dir.join(format!("{i:04}_{role}_{c}.pgm")))?;
                }
            }
        }
        Ok(())
    }

    /// Reads a directory written by [`Dataset::save_dir`].
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<(Task, Dataset)> {
        let dir = dir.as_ref();
        let text_path = dir.join("task.txt");
        let text = fs::read_to_string(&text_path).map_err(|e| Error::io(&text_path, e))?;
        let task = Task::parse(&text)?;
        let load = |i: usize, role: &str, channels: usize| -> Result<Tensor> {
            let mut out: Option<Tensor> = None;
            for c in 0..channels {
                let t = read_pnm(dir.join(format!("{i:04}_{role}_{c}.pgm")))?.to_tensor();
                out = Some(match out {
                    None => t,
                    Some(prev) => Tensor::concat_channels(&prev, &t)?,
                });
            }
            Ok(out.expect("at least one channel"))
        };
        let mut samples = Vec::new();
        while dir.join(format!("{:04}_input_0.pgm", samples.len())).exists() {
            let i = samples.len();
            let input = load(i, "input", task.input_channels())?;
            if let Some(m) = task.mask_channel() {
                check_binary_mask(&input.channels(m, 1)?)?;
            }
            let target = load(i, "target", task.output_channels())?;
            samples.push(Sample { input, target });
        }
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok((task, Dataset { samples }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_text_round_trip() {
        for name in [
            "depth-holes",
            "sparse-visible",
            "additive-noise",
            "filter-box",
            "filter-gaussian",
            "filter-bilateral",
        ] {
            let t = Task::from_name(name).unwrap();
            assert_eq!(Task::parse(&t.to_text()).unwrap(), t);
        }
        assert!(Task::from_name("deblur").is_err());
    }

    #[test]
    fn samples_have_task_channels() {
        for name in ["depth-holes", "sparse-visible", "additive-noise", "filter-box"] {
            let t = Task::from_name(name).unwrap();
            let s = t.sample(24, 20, 1, 0).unwrap();
            assert_eq!(s.input.shape().c, t.input_channels());
            assert_eq!(s.target.shape().c, t.output_channels());
            assert_eq!(s.input.shape().h, 24);
        }
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let task = Task::from_name("depth-holes").unwrap();
        let data = task.generate(2, 16, 12, 3).unwrap();
        data.save_dir(&task, dir.path()).unwrap();
        let (t2, loaded) = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(t2, task);
        assert_eq!(loaded.len(), 2);
        for (a, b) in loaded.samples.iter().zip(&data.samples) {
            for (x, y) in a.input.data().iter().zip(b.input.data()) {
                assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-7);
            }
        }
    }
}
