//! Synthetic polyp-like images.
//!
//! Blob contours are drawn from a small library of radial prototypes shared
//! by the whole dataset; each prototype also owns a surface texture. With
//! `co_occurrence` off, every blob gets a fresh random contour and texture.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HARMONICS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: (usize, usize),
    pub prototypes: usize,
    pub blobs_per_image: (usize, usize),
    /// Equivalent-disc diameter as a fraction of the shorter image side.
    pub scale_range: (f64, f64),
    /// Gaussian softness of the rendered boundary, in pixels.
    pub blur_sigma: f64,
    pub brightness_range: (f64, f64),
    pub color_jitter: f64,
    /// Perturbation of each blob's contour away from its prototype.
    pub shape_jitter: f64,
    pub co_occurrence: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 300,
            size: (64, 64),
            prototypes: 6,
            blobs_per_image: (1, 3),
            scale_range: (0.05, 0.4),
            blur_sigma: 1.0,
            brightness_range: (0.7, 1.2),
            color_jitter: 0.08,
            shape_jitter: 0.05,
            co_occurrence: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("scale range {:?} must lie in (0, 1)", self.scale_range)));
        }
        if self.prototypes == 0 {
            return Err(Error::Config("need at least one prototype".into()));
        }
        let (a, b) = self.blobs_per_image;
        if a == 0 || a > b {
            return Err(Error::Config(format!("blobs per image {:?}", self.blobs_per_image)));
        }
        if self.size.0 == 0 || self.size.1 == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Radial contour `r(θ) = 1 + Σ a_k cos(kθ + φ_k)`, plus a texture signature.
#[derive(Clone, Debug, PartialEq)]
struct Prototype {
    amps: [f64; HARMONICS],
    phases: [f64; HARMONICS],
    rms: f64,
    texture_freq: (f64, f64),
    texture_phase: f64,
    tint: [f64; 3],
}

impl Prototype {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut amps = [0.0; HARMONICS];
        let mut phases = [0.0; HARMONICS];
        let budget: f64 = rng.gen_range(0.15..0.5);
        let raw: Vec<f64> = (0..HARMONICS).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum::<f64>().max(1e-9);
        for k in 0..HARMONICS {
            amps[k] = budget * raw[k] / total;
            phases[k] = rng.gen_range(0.0..TAU);
        }
        let mut p = Self {
            amps,
            phases,
            rms: 1.0,
            texture_freq: (rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9)),
            texture_phase: rng.gen_range(0.0..TAU),
            tint: [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)],
        };
        let n = 720;
        let mean_sq = (0..n).map(|i| p.raw_radius(TAU * i as f64 / n as f64).powi(2)).sum::<f64>() / n as f64;
        p.rms = mean_sq.sqrt();
        p
    }

    fn jittered(&self, amount: f64, rng: &mut ChaCha8Rng) -> Self {
        if amount == 0.0 {
            return self.clone();
        }
        let mut p = self.clone();
        for k in 0..HARMONICS {
            p.amps[k] = (p.amps[k] + rng.gen_range(-amount..amount) / (k + 2) as f64).max(0.0);
            p.phases[k] += rng.gen_range(-amount..amount) * PI;
        }
        let total: f64 = p.amps.iter().sum();
        if total > 0.6 {
            p.amps.iter_mut().for_each(|a| *a *= 0.6 / total);
        }
        let n = 720;
        let mean_sq = (0..n).map(|i| p.raw_radius(TAU * i as f64 / n as f64).powi(2)).sum::<f64>() / n as f64;
        p.rms = mean_sq.sqrt();
        p
    }

    fn raw_radius(&self, theta: f64) -> f64 {
        1.0 + (0..HARMONICS).map(|k| self.amps[k] * ((k + 2) as f64 * theta + self.phases[k]).cos()).sum::<f64>()
    }

    /// Radius normalized so the enclosed area equals a unit-radius disc.
    fn radius(&self, theta: f64) -> f64 {
        self.raw_radius(theta) / self.rms
    }

    fn max_radius(&self) -> f64 {
        (1.0 + self.amps.iter().sum::<f64>()) / self.rms
    }
}

/// Placement of one blob, recorded for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobLayout {
    /// Library index, or `None` for a one-off contour.
    pub prototype: Option<usize>,
    pub center: (f64, f64),
    /// Radius, in pixels, of the disc with the blob's area.
    pub radius: f64,
    pub rotation: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_blur(plane: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let mut tmp = vec![0.0; plane.len()];
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r).map(|d| kernel[(d + r) as usize] * plane[y * w + clamp(x as isize + d, w)]).sum();
        }
    }
    for y in 0..h {
        for x in 0..w {
            plane[y * w + x] = (-r..=r).map(|d| kernel[(d + r) as usize] * tmp[clamp(y as isize + d, h) * w + x]).sum();
        }
    }
}

fn render(cfg: &SynthConfig, library: &[Prototype], index: usize) -> (Sample, Vec<BlobLayout>) {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ splitmix(index as u64 + 1)));
    let (h, w) = cfg.size;
    let extent = h.min(w) as f64;
    let n_blobs = rng.gen_range(cfg.blobs_per_image.0..=cfg.blobs_per_image.1);

    let mut mask = vec![false; h * w];
    let mut coverage = vec![0.0f64; h * w];
    let mut texture = vec![0.0f64; h * w];
    let mut tint = vec![[0.0f64; 3]; h * w];
    let mut layouts = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let (proto_idx, proto) = if cfg.co_occurrence {
            let i = rng.gen_range(0..library.len());
            (Some(i), library[i].jittered(cfg.shape_jitter, &mut rng))
        } else {
            (None, Prototype::random(&mut rng))
        };
        let diameter = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1) * extent;
        // Half-pixel margin keeps the rasterized area at or above the disc area.
        let radius = diameter / 2.0;
        let reach = radius * proto.max_radius() + 0.5;
        let span = |n: usize| {
            let lo = reach.min(n as f64 / 2.0);
            let hi = (n as f64 - reach).max(lo);
            (lo, hi)
        };
        let (ylo, yhi) = span(h);
        let (xlo, xhi) = span(w);
        let cy = if yhi > ylo { rng.gen_range(ylo..yhi) } else { ylo };
        let cx = if xhi > xlo { rng.gen_range(xlo..xhi) } else { xlo };
        let rotation = rng.gen_range(0.0..TAU);
        layouts.push(BlobLayout { prototype: proto_idx, center: (cy, cx), radius, rotation });
        let (fy, fx) = proto.texture_freq;
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let dist = (dy * dy + dx * dx).sqrt();
                if dist > reach + 1.0 {
                    continue;
                }
                let theta = dy.atan2(dx) - rotation;
                let edge = radius * proto.radius(theta) + 0.5;
                let i = y * w + x;
                if dist <= edge {
                    mask[i] = true;
                    coverage[i] = 1.0;
                    let (ry, rx) =
                        (dy * rotation.cos() - dx * rotation.sin(), dy * rotation.sin() + dx * rotation.cos());
                    texture[i] = (fy * ry + proto.texture_phase).sin() * (fx * rx).cos();
                    tint[i] = proto.tint;
                }
            }
        }
    }
    gaussian_blur(&mut coverage, h, w, cfg.blur_sigma);

    let brightness = rng.gen_range(cfg.brightness_range.0..=cfg.brightness_range.1);
    let jitter: [f64; 3] = std::array::from_fn(|_| {
        if cfg.color_jitter > 0.0 {
            rng.gen_range(-cfg.color_jitter..cfg.color_jitter)
        } else {
            0.0
        }
    });
    let bg_base = [0.82, 0.52, 0.45];
    let fg_base = [0.72, 0.30, 0.25];
    let bg_f: [(f64, f64, f64); 3] =
        std::array::from_fn(|_| (rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5), rng.gen_range(0.0..TAU)));
    let light = (rng.gen_range(0.2..0.8) * h as f64, rng.gen_range(0.2..0.8) * w as f64);

    let mut image = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let bg_tex: f64 = bg_f.iter().map(|&(a, b, p)| (a * y as f64 + b * x as f64 + p).sin()).sum::<f64>() / 3.0;
            let (ly, lx) = ((y as f64 - light.0) / extent, (x as f64 - light.1) / extent);
            let illum = brightness * (1.0 - 0.35 * (ly * ly + lx * lx));
            let a = coverage[i];
            for c in 0..3 {
                let bg = bg_base[c] + 0.05 * bg_tex;
                let fg = fg_base[c] + tint[i][c] + 0.06 * texture[i];
                let v = (illum * ((1.0 - a) * bg + a * fg) + jitter[c]).clamp(0.0, 1.0);
                image[c * h * w + i] = v as f32;
            }
        }
    }
    let mask: Vec<f32> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let sample = Sample {
        image: Tensor::new(&[3, h, w], image).expect("image shape"),
        mask: Tensor::new(&[1, h, w], mask).expect("mask shape"),
        id: format!("synth_{index:05}"),
    };
    (sample, layouts)
}

/// Generates `cfg.count` samples; fully determined by `cfg`.
pub fn synth_generate_with_layout(cfg: &SynthConfig) -> Result<Vec<(Sample, Vec<BlobLayout>)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed));
    let library: Vec<Prototype> = (0..cfg.prototypes).map(|_| Prototype::random(&mut rng)).collect();
    Ok((0..cfg.count).map(|i| render(cfg, &library, i)).collect())
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    Ok(synth_generate_with_layout(cfg)?.into_iter().map(|(s, _)| s).collect())
}
