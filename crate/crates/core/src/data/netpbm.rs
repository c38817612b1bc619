//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn parse_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { offset, msg: msg.into() })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return parse_err(start, format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.buf[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(v) => Ok(v),
            Err(_) => parse_err(start, format!("{what} out of range")),
        }
    }
}

pub fn parse(buf: &[u8]) -> Result<Pnm> {
    let channels = match buf.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return parse_err(0, "expected magic P5 or P6"),
    };
    let mut cur = Cursor { buf, pos: 2 };
    if !matches!(buf.get(2), Some(b' ' | b'\t' | b'\n' | b'\r' | b'#')) {
        return parse_err(2, "expected whitespace after magic");
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let max_at = {
        cur.skip_space_and_comments();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return parse_err(2, format!("empty image {width}x{height}"));
    }
    if maxval != 255 {
        return parse_err(max_at, format!("unsupported maxval {maxval}, expected 255"));
    }
    match buf.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return parse_err(cur.pos, "expected single whitespace before pixel data"),
    }
    let need = width * height * channels;
    let data = &buf[cur.pos..];
    if data.len() < need {
        return parse_err(buf.len(), format!("pixel data truncated: need {need} bytes, found {}", data.len()));
    }
    Ok(Pnm { channels, width, height, pixels: data[..need].to_vec() })
}

pub fn encode(p: &Pnm) -> Vec<u8> {
    let magic = if p.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", p.width, p.height).into_bytes();
    out.extend_from_slice(&p.pixels);
    out
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `[3, H, W]` in `[0, 1]` → interleaved P6.
pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Contract(format!("image tensor must be [3, H, W], got {:?}", s)));
    }
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let mut pixels = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            pixels.push(quantize(d[c * h * w + i]));
        }
    }
    fs::write(path, encode(&Pnm { channels: 3, width: w, height: h, pixels }))?;
    Ok(())
}

/// Binary `[1, H, W]` mask → P5 with values {0, 255}.
pub fn write_mask(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let s = mask.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Contract(format!("mask tensor must be [1, H, W], got {:?}", s)));
    }
    let pixels = mask.data().iter().map(|&v| quantize(v)).collect();
    fs::write(path, encode(&Pnm { channels: 1, width: s[2], height: s[1], pixels }))?;
    Ok(())
}

/// Planar `[3, H, W]` image in `[0, 1]`.
pub fn image_tensor(p: &Pnm) -> Result<Tensor<f32>> {
    if p.channels != 3 {
        return Err(Error::Contract("image must be a P6 file".into()));
    }
    let n = p.width * p.height;
    let mut data = vec![0.0f32; 3 * n];
    for (i, px) in p.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, p.height, p.width], data)
}

/// `[1, H, W]` mask, 1 where the byte is at least 128.
pub fn mask_tensor(p: &Pnm) -> Result<Tensor<f32>> {
    if p.channels != 1 {
        return Err(Error::Contract("mask must be a P5 file".into()));
    }
    let data = p.pixels.iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    Tensor::new(&[1, p.height, p.width], data)
}

pub fn read(path: &Path) -> Result<Pnm> {
    parse(&fs::read(path)?)
}

/// Loads an image/mask pair and resizes both to `size` (bilinear / nearest).
pub fn load_netpbm(image_path: &Path, mask_path: &Path, size: (usize, usize)) -> Result<Sample> {
    let (img, msk) = (read(image_path)?, read(mask_path)?);
    if (img.width, img.height) != (msk.width, msk.height) {
        return Err(Error::Contract(format!(
            "image is {}x{} but mask is {}x{}",
            img.width, img.height, msk.width, msk.height
        )));
    }
    let (image, mask) = (image_tensor(&img)?, mask_tensor(&msk)?);
    let from = (img.height, img.width);
    let (image, mask) = if from == size {
        (image, mask)
    } else {
        let i = kernels::resize_bilinear_forward(image.data(), 3, from, size);
        let m = kernels::resize_nearest(mask.data(), 1, from, size);
        (Tensor::new(&[3, size.0, size.1], i)?, Tensor::new(&[1, size.0, size.1], m)?)
    };
    let id = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Sample::new(image, mask, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_p6_is_ones() {
        let mut buf = b"P6\n2 2\n255\n".to_vec();
        buf.extend([255u8; 12]);
        let t = image_tensor(&parse(&buf).unwrap()).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_threshold_edge() {
        let mut buf = b"P5 # comment\n4 1\n255\n".to_vec();
        buf.extend([0u8, 255, 127, 128]);
        let t = mask_tensor(&parse(&buf).unwrap()).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        match parse(b"P3\n1 1\n255\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        match parse(b"P5\n1 x\n255\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
        match parse(b"P5\n1 1\n65535\n\0\0") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse(b"P5\n2 2\n255\n\0"), Err(Error::Parse { .. })));
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = (dir.path().join("a.ppm"), dir.path().join("a.pgm"));
        write_image(&ip, &Tensor::zeros(&[3, 2, 3])).unwrap();
        write_mask(&mp, &Tensor::zeros(&[1, 3, 2])).unwrap();
        assert!(matches!(load_netpbm(&ip, &mp, (2, 3)), Err(Error::Contract(_))));
    }

    #[test]
    fn load_resizes_to_requested_size() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, mp) = (dir.path().join("a.ppm"), dir.path().join("a.pgm"));
        write_image(&ip, &Tensor::full(&[3, 4, 4], 0.5)).unwrap();
        write_mask(&mp, &Tensor::from_fn(&[1, 4, 4], |i| (i % 4 >= 2) as u8 as f32)).unwrap();
        let s = load_netpbm(&ip, &mp, (8, 8)).unwrap();
        assert_eq!(s.size(), (8, 8));
        assert!(s.image.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
        assert_eq!(s.mask.at(&[0, 0, 3]), 0.0);
        assert_eq!(s.mask.at(&[0, 0, 4]), 1.0);
    }
}
