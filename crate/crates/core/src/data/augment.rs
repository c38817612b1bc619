//! Geometric augmentation applied identically to image and mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub zoom: f64,
    /// `(dy, dx)` as fractions of the image size.
    pub shift: (f64, f64),
    pub rotation_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self { hflip: false, vflip: false, zoom: 1.0, shift: (0.0, 0.0), rotation_deg: 0.0 };

    /// Flips with p = 0.5, zoom in [0.9, 1.1], shift up to ±10%, rotation up to ±15°.
    pub fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            zoom: rng.gen_range(0.9..=1.1),
            shift: (rng.gen_range(-0.1..=0.1), rng.gen_range(-0.1..=0.1)),
            rotation_deg: rng.gen_range(-15.0..=15.0),
        }
    }

    fn is_rigid_identity(&self) -> bool {
        self.zoom == 1.0 && self.shift == (0.0, 0.0) && self.rotation_deg == 0.0
    }

    pub fn apply(&self, s: &Sample) -> Sample {
        let (h, w) = s.size();
        let mut image = s.image.data().to_vec();
        let mut mask = s.mask.data().to_vec();
        if self.hflip {
            flip(&mut image, 3, h, w, true);
            flip(&mut mask, 1, h, w, true);
        }
        if self.vflip {
            flip(&mut image, 3, h, w, false);
            flip(&mut mask, 1, h, w, false);
        }
        if !self.is_rigid_identity() {
            let (img, msk) = self.warp(&image, &mask, h, w);
            image = img;
            mask = msk;
        }
        Sample {
            image: Tensor::new(&[3, h, w], image).expect("same shape"),
            mask: Tensor::new(&[1, h, w], mask).expect("same shape"),
            id: s.id.clone(),
        }
    }

    /// Inverse-maps each output pixel: bilinear with edge clamp for the
    /// image, nearest with zero fill for the mask.
    fn warp(&self, image: &[f32], mask: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
        let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
        let (sy, sx) = (self.shift.0 * h as f64, self.shift.1 * w as f64);
        let t = self.rotation_deg.to_radians();
        let (cos, sin) = (t.cos(), t.sin());
        let mut img = vec![0.0f32; image.len()];
        let mut msk = vec![0.0f32; mask.len()];
        let plane = h * w;
        for y in 0..h {
            for x in 0..w {
                let (py, px) = ((y as f64 + 0.5 - cy - sy) / self.zoom, (x as f64 + 0.5 - cx - sx) / self.zoom);
                let src_y = cos * py + sin * px + cy;
                let src_x = -sin * py + cos * px + cx;
                let o = y * w + x;
                let (ny, nx) = (src_y.floor(), src_x.floor());
                if ny >= 0.0 && nx >= 0.0 && (ny as usize) < h && (nx as usize) < w {
                    msk[o] = if mask[ny as usize * w + nx as usize] >= 0.5 { 1.0 } else { 0.0 };
                }
                let fy = (src_y - 0.5).clamp(0.0, (h - 1) as f64);
                let fx = (src_x - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (ay, ax) = ((fy - y0 as f64) as f32, (fx - x0 as f64) as f32);
                for c in 0..3 {
                    let p = &image[c * plane..(c + 1) * plane];
                    let top = (1.0 - ax) * p[y0 * w + x0] + ax * p[y0 * w + x1];
                    let bot = (1.0 - ax) * p[y1 * w + x0] + ax * p[y1 * w + x1];
                    img[c * plane + o] = ((1.0 - ay) * top + ay * bot).clamp(0.0, 1.0);
                }
            }
        }
        (img, msk)
    }
}

fn flip(data: &mut [f32], planes: usize, h: usize, w: usize, horizontal: bool) {
    for p in 0..planes {
        let plane = &mut data[p * h * w..(p + 1) * h * w];
        if horizontal {
            plane.chunks_mut(w).for_each(|row| row.reverse());
        } else {
            for y in 0..h / 2 {
                for x in 0..w {
                    plane.swap(y * w + x, (h - 1 - y) * w + x);
                }
            }
        }
    }
}

/// Seeded random flips, zoom, shift and rotation.
pub fn augment(s: &Sample, seed: u64) -> Sample {
    AugmentParams::draw(seed).apply(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample {
        let (h, w) = (12, 10);
        let image = Tensor::from_fn(&[3, h, w], |i| ((i * 37) % 101) as f32 / 100.0);
        let mask = Tensor::from_fn(&[1, h, w], |i| ((i / w) > 3 && (i % w) < 6) as u8 as f32);
        Sample::new(image, mask, "s").unwrap()
    }

    #[test]
    fn identity_leaves_sample_unchanged() {
        let s = sample();
        assert_eq!(AugmentParams::IDENTITY.apply(&s), s);
    }

    #[test]
    fn double_flip_is_bitwise_identity() {
        let s = sample();
        let f = AugmentParams { hflip: true, ..AugmentParams::IDENTITY };
        assert_eq!(f.apply(&f.apply(&s)), s);
        let v = AugmentParams { vflip: true, ..AugmentParams::IDENTITY };
        assert_eq!(v.apply(&v.apply(&s)), s);
        assert_ne!(f.apply(&s), s);
    }

    #[test]
    fn random_transforms_keep_mask_binary_and_image_in_range() {
        let s = sample();
        for seed in 0..50 {
            let a = augment(&s, seed);
            assert!(a.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(a.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
