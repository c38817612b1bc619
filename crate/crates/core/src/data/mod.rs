//! Samples, synthetic generation, NetPBM I/O, augmentation and splitting.

mod augment;
pub mod netpbm;
mod synth;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentParams};
pub use synth::{synth_generate, synth_generate_with_layout, BlobLayout, SynthConfig};

pub const MANIFEST: &str = "manifest.txt";

/// One image `[3, H, W]` in `[0, 1]` with its binary mask `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub id: String,
}

impl Sample {
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>, id: impl Into<String>) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        if is.len() != 3 || is[0] != 3 || ms != [1, is[1], is[2]] {
            return Err(Error::Contract(format!("image {:?} and mask {:?} are inconsistent", is, ms)));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("mask must be binary".into()));
        }
        Ok(Self { image, mask, id: id.into() })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.mask.data().iter().map(|&v| v as f64).sum::<f64>() / self.mask.numel() as f64
    }
}

/// Stacks samples into `([B,3,H,W], [B,1,H,W])`.
pub fn collate(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = samples.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (h, w) = first.size();
    let mut img = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut msk = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.size() != (h, w) {
            return Err(Error::Contract(format!("sample {} is {:?}, batch is {:?}", s.id, s.size(), (h, w))));
        }
        img.extend_from_slice(s.image.data());
        msk.extend_from_slice(s.mask.data());
    }
    Ok((Tensor::new(&[samples.len(), 3, h, w], img)?, Tensor::new(&[samples.len(), 1, h, w], msk)?))
}

/// Seeded shuffle, then train/val/test partition by `fractions`.
pub fn split<S: Clone>(samples: &[S], fractions: (f64, f64, f64), seed: u64) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {:?} must be non-negative and sum to 1", fractions)));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_train]), pick(&order[n_train..n_train + n_val]), pick(&order[n_train + n_val..])))
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm` and the manifest.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = String::new();
    for s in samples {
        netpbm::write_image(&dir.join("images").join(format!("{}.ppm", s.id)), &s.image)?;
        netpbm::write_mask(&dir.join("masks").join(format!("{}.pgm", s.id)), &s.mask)?;
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Reads every id in the manifest, resizing to `size`.
pub fn load_dataset(dir: &Path, size: (usize, usize)) -> Result<Vec<Sample>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    manifest
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|id| {
            let mut s = netpbm::load_netpbm(
                &dir.join("images").join(format!("{id}.ppm")),
                &dir.join("masks").join(format!("{id}.pgm")),
                size,
            )?;
            s.id = id.to_string();
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_sizes() {
        let items: Vec<usize> = (0..1000).collect();
        let (a, b, c) = split(&items, (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (600, 200, 200));
        let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, items);
    }

    #[test]
    fn split_all_train_and_determinism() {
        let items: Vec<usize> = (0..37).collect();
        let (a, b, c) = split(&items, (1.0, 0.0, 0.0), 5).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (37, 0, 0));
        assert_eq!(split(&items, (0.5, 0.25, 0.25), 9).unwrap(), split(&items, (0.5, 0.25, 0.25), 9).unwrap());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let items = [1, 2, 3];
        assert!(matches!(split(&items, (0.6, 0.2, 0.3), 0), Err(Error::Config(_))));
    }

    #[test]
    fn sample_rejects_non_binary_mask() {
        let img = Tensor::zeros(&[3, 2, 2]);
        assert!(Sample::new(img.clone(), Tensor::full(&[1, 2, 2], 0.5), "x").is_err());
        assert!(Sample::new(img, Tensor::zeros(&[1, 2, 2]), "x").is_ok());
    }
}
