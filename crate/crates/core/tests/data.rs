//! Synthetic generator, NetPBM codec, augmentation and splitting.

use std::f64::consts::{PI, TAU};

use dcrnet::data::netpbm::{self, Pnm};
use dcrnet::data::{
    augment, collate, load_dataset, split, synth_generate, synth_generate_with_layout, write_dataset, AugmentParams,
    BlobLayout, Sample, SynthConfig,
};
use dcrnet::{Error, Tensor};
use proptest::prelude::*;

fn small(count: usize, seed: u64) -> SynthConfig {
    SynthConfig { count, size: (32, 32), seed, ..SynthConfig::default() }
}

#[test]
fn synth_is_bitwise_deterministic() {
    let a = synth_generate(&small(6, 11)).unwrap();
    let b = synth_generate(&small(6, 11)).unwrap();
    assert_eq!(a.len(), 6);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.id, y.id);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.image), bits(&y.image));
        assert_eq!(bits(&x.mask), bits(&y.mask));
    }
    let c = synth_generate(&small(6, 12)).unwrap();
    assert_ne!(a[0].image, c[0].image);
}

#[test]
fn synth_samples_are_valid() {
    for s in synth_generate(&small(20, 3)).unwrap() {
        assert_eq!(s.image.shape(), &[3, 32, 32]);
        assert_eq!(s.mask.shape(), &[1, 32, 32]);
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn foreground_fraction_within_scale_bounds() {
    let cfg = SynthConfig { count: 120, seed: 5, ..SynthConfig::default() };
    let (lo, hi) = cfg.scale_range;
    let min = lo * lo * PI / 4.0;
    let max = hi * hi * 3.0;
    for (s, layout) in synth_generate_with_layout(&cfg).unwrap() {
        let f = s.foreground_fraction();
        assert!(f >= min && f <= max, "{}: fraction {f} outside [{min}, {max}]", s.id);
        assert!((1..=3).contains(&layout.len()));
    }
}

#[test]
fn invalid_config_is_rejected() {
    let bad = [
        SynthConfig { scale_range: (0.5, 0.2), ..SynthConfig::default() },
        SynthConfig { prototypes: 0, ..SynthConfig::default() },
        SynthConfig { blobs_per_image: (0, 2), ..SynthConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(synth_generate(&cfg), Err(Error::Config(_))));
    }
}

/// Boundary radius per angular bin, in the blob's own frame and in units of
/// its equivalent-disc radius.
fn radial_profile(mask: &Tensor<f32>, blob: &BlobLayout, bins: usize) -> Vec<f64> {
    let [_, h, w] = mask.shape()[..] else { panic!() };
    let mut out = vec![0.0f64; bins];
    for y in 0..h {
        for x in 0..w {
            if mask.at(&[0, y, x]) == 0.0 {
                continue;
            }
            let (dy, dx) = (y as f64 + 0.5 - blob.center.0, x as f64 + 0.5 - blob.center.1);
            let theta = (dy.atan2(dx) - blob.rotation).rem_euclid(TAU);
            let bin = ((theta / TAU) * bins as f64) as usize % bins;
            out[bin] = out[bin].max((dy * dy + dx * dx).sqrt() / blob.radius);
        }
    }
    out
}

/// Largest per-bin spread of the profile across single-blob images.
fn profile_spread(cfg: &SynthConfig) -> f64 {
    let profiles: Vec<Vec<f64>> =
        synth_generate_with_layout(cfg).unwrap().iter().map(|(s, l)| radial_profile(&s.mask, &l[0], 12)).collect();
    (0..12)
        .map(|b| {
            let col = profiles.iter().map(|p| p[b]);
            col.clone().fold(f64::MIN, f64::max) - col.fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max)
}

#[test]
fn single_prototype_without_jitter_shares_one_contour() {
    let base = SynthConfig {
        count: 12,
        size: (96, 96),
        prototypes: 1,
        blobs_per_image: (1, 1),
        scale_range: (0.5, 0.6),
        shape_jitter: 0.0,
        seed: 2,
        ..SynthConfig::default()
    };
    for (_, layout) in synth_generate_with_layout(&base).unwrap() {
        assert_eq!(layout[0].prototype, Some(0));
    }
    let shared = profile_spread(&base);
    let fresh = profile_spread(&SynthConfig { co_occurrence: false, ..base.clone() });
    // Only rasterization separates the shared contours: about a pixel at radius 25.
    assert!(shared < 0.1, "shared contour spread {shared}");
    assert!(fresh > 2.0 * shared, "fresh {fresh} vs shared {shared}");
    for (_, layout) in synth_generate_with_layout(&SynthConfig { co_occurrence: false, ..base }).unwrap() {
        assert_eq!(layout[0].prototype, None);
    }
}

#[test]
fn white_p6_decodes_to_ones() {
    let mut buf = b"P6\n3 2\n255\n".to_vec();
    buf.extend([255u8; 18]);
    let t = netpbm::image_tensor(&netpbm::parse(&buf).unwrap()).unwrap();
    assert_eq!(t.shape(), &[3, 2, 3]);
    assert!(t.data().iter().all(|&v| v == 1.0));
}

#[test]
fn p5_mask_thresholds_at_128() {
    let mut buf = b"P5\n# a comment\n4 1\n255\n".to_vec();
    buf.extend([0u8, 255, 127, 128]);
    let t = netpbm::mask_tensor(&netpbm::parse(&buf).unwrap()).unwrap();
    assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn p6_interleaving_is_planarized() {
    let buf = [b"P6 2 1 255\n".as_slice(), &[10, 20, 30, 40, 50, 60]].concat();
    let t = netpbm::image_tensor(&netpbm::parse(&buf).unwrap()).unwrap();
    let expect: Vec<f32> = [10, 40, 20, 50, 30, 60].iter().map(|&v| v as f32 / 255.0).collect();
    assert_eq!(t.data(), expect.as_slice());
}

#[test]
fn malformed_headers_report_offsets() {
    let cases: [(&[u8], usize); 5] = [
        (b"P3\n1 1\n255\n\0", 0),
        (b"P5\nx 1\n255\n\0", 3),
        (b"P5\n1 1\n65535\n\0\0", 7),
        (b"P5\n2 2\n255\n\0\0", 13),
        (b"P5\n1 1\n255", 10),
    ];
    for (buf, offset) in cases {
        match netpbm::parse(buf) {
            Err(Error::Parse { offset: o, .. }) => assert_eq!(o, offset, "{:?}", String::from_utf8_lossy(buf)),
            other => panic!("expected parse error for {:?}, got {other:?}", String::from_utf8_lossy(buf)),
        }
    }
}

#[test]
fn encode_parse_round_trip() {
    let p = Pnm { channels: 3, width: 2, height: 2, pixels: (0..12).map(|v| v * 20).collect() };
    assert_eq!(netpbm::parse(&netpbm::encode(&p)).unwrap(), p);
}

#[test]
fn image_mask_size_mismatch_is_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.ppm");
    let msk = dir.path().join("a.pgm");
    std::fs::write(&img, netpbm::encode(&Pnm { channels: 3, width: 2, height: 2, pixels: vec![0; 12] })).unwrap();
    std::fs::write(&msk, netpbm::encode(&Pnm { channels: 1, width: 3, height: 2, pixels: vec![0; 6] })).unwrap();
    assert!(matches!(netpbm::load_netpbm(&img, &msk, (2, 2)), Err(Error::Contract(_))));
}

#[test]
fn dataset_round_trip_preserves_masks_and_quantized_images() {
    let samples = synth_generate(&small(4, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let loaded = load_dataset(dir.path(), (32, 32)).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.mask, b.mask);
        let worst = a.image.data().iter().zip(b.image.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(worst <= 0.5 / 255.0 + 1e-6, "{worst}");
    }
    let resized = load_dataset(dir.path(), (16, 24)).unwrap();
    assert_eq!(resized[0].image.shape(), &[3, 16, 24]);
    assert!(resized[0].mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn collate_stacks_and_checks_sizes() {
    let s = synth_generate(&small(3, 0)).unwrap();
    let (x, y) = collate(&[&s[0], &s[1], &s[2]]).unwrap();
    assert_eq!((x.shape(), y.shape()), (&[3, 3, 32, 32][..], &[3, 1, 32, 32][..]));
    assert_eq!(&x.data()[3 * 32 * 32..6 * 32 * 32], s[1].image.data());
    let other = Sample::new(Tensor::zeros(&[3, 8, 8]), Tensor::zeros(&[1, 8, 8]), "z").unwrap();
    assert!(matches!(collate(&[&s[0], &other]), Err(Error::Contract(_))));
    assert!(matches!(collate(&[]), Err(Error::Contract(_))));
}

#[test]
fn hflip_twice_is_identity() {
    let s = synth_generate(&small(1, 4)).unwrap().remove(0);
    let f = AugmentParams { hflip: true, ..AugmentParams::IDENTITY };
    let once = f.apply(&s);
    assert_ne!(once, s);
    assert_eq!(f.apply(&once), s);
    assert_eq!(once.mask.at(&[0, 3, 0]), s.mask.at(&[0, 3, 31]));
}

#[test]
fn split_sizes_and_seeding() {
    let items: Vec<usize> = (0..300).collect();
    let (a, b, c) = split(&items, (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0), 0).unwrap();
    assert_eq!((a.len(), b.len(), c.len()), (200, 50, 50));
    let again = split(&items, (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0), 0).unwrap();
    assert_eq!((a.clone(), b.clone(), c.clone()), again);
    let other = split(&items, (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0), 1).unwrap();
    assert_ne!(a, other.0);
    let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
    all.sort();
    assert_eq!(all, items);
}

proptest! {
    #[test]
    fn augmented_masks_stay_binary_and_images_in_range(seed in any::<u64>(), idx in 0usize..4) {
        let samples = synth_generate(&small(4, 8)).unwrap();
        let out = augment(&samples[idx], seed);
        prop_assert_eq!(out.image.shape(), samples[idx].image.shape());
        prop_assert!(out.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(out.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert_eq!(augment(&samples[idx], seed), out);
    }
}
