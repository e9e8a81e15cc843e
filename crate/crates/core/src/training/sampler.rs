//! Random aligned patch batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{pad_reflect, Crop};
use crate::tensor::{Real, Tensor};
use crate::training::data::Dataset;

/// One crop: sample index and top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSite {
    pub sample: usize,
    pub top: usize,
    pub left: usize,
}

/// A training batch. Inputs are reflect-padded to the model's size
/// multiple; targets keep the patch size, which is what `crop` restores.
#[derive(Clone, Debug)]
pub struct Batch<T: Real = f32> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    pub crop: Crop,
}

/// Crop sites for `step`, uniform over samples and valid offsets. The
/// sequence depends only on `(seed, step)`.
pub fn patch_sites(data: &Dataset, patch: usize, batch: usize, seed: u64, step: u64) -> Result<Vec<PatchSite>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(s) = data.samples.iter().find(|s| s.input.shape().h < patch || s.input.shape().w < patch) {
        return Err(Error::Config(format!(
            "patch size {patch} exceeds image size {}x{}",
            s.input.shape().h,
            s.input.shape().w
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    Ok((0..batch)
        .map(|_| {
            let sample = rng.random_range(0..data.len());
            let s = data.samples[sample].input.shape();
            PatchSite {
                sample,
                top: rng.random_range(0..=s.h - patch),
                left: rng.random_range(0..=s.w - patch),
            }
        })
        .collect())
}

pub fn sample_patches<T: Real>(
    data: &Dataset,
    patch: usize,
    batch: usize,
    multiple: usize,
    seed: u64,
    step: u64,
) -> Result<Batch<T>> {
    let sites = patch_sites(data, patch, batch, seed, step)?;
    let mut inputs = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch);
    let mut crop = Crop {
        height: patch,
        width: patch,
    };
    for site in sites {
        let s = &data.samples[site.sample];
        let input = s.input.crop(site.top, site.left, patch, patch)?.cast::<T>();
        let (padded, c) = pad_reflect(&input, multiple);
        crop = c;
        inputs.push(padded);
        targets.push(s.target.crop(site.top, site.left, patch, patch)?.cast::<T>());
    }
    Ok(Batch {
        input: Tensor::stack(&inputs)?,
        target: Tensor::stack(&targets)?,
        crop,
    })
}
