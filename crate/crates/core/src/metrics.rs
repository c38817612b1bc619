//! Segmentation quality metrics on single-channel maps.
//!
//! Every function accepts `[H, W]`, `[1, H, W]` or `[1, 1, H, W]` tensors.

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DICE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub dice: f64,
    pub iou: f64,
    pub boundary_f: f64,
    pub s_measure: f64,
}

impl MetricReport {
    pub fn fields(&self) -> [f64; 5] {
        [self.mae, self.dice, self.iou, self.boundary_f, self.s_measure]
    }

    pub const NAMES: [&'static str; 5] = ["mae", "dice", "iou", "boundary_f", "s_measure"];
}

/// A 2-D map unpacked to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match *s {
            [h, w] | [1, h, w] | [1, 1, h, w] => (h, w),
            _ => return dim_err(format!("expected a single-channel map, got {:?}", s)),
        };
        Ok(Self { h, w, data: t.to_f64_vec() })
    }

    fn mask(&self, threshold: f64) -> Vec<bool> {
        self.data.iter().map(|&v| v >= threshold).collect()
    }
}

fn pair<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(Plane, Plane)> {
    let (p, g) = (Plane::from_tensor(pred)?, Plane::from_tensor(gt)?);
    if (p.h, p.w) != (g.h, g.w) {
        return dim_err(format!("prediction {}x{} vs ground truth {}x{}", p.h, p.w, g.h, g.w));
    }
    Ok((p, g))
}

fn check_unit(p: &Plane) -> Result<()> {
    if p.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Contract("prediction must lie in [0, 1]".into()));
    }
    Ok(())
}

pub fn mae<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    let (p, g) = pair(pred, gt)?;
    check_unit(&p)?;
    Ok(mae_plane(&p, &g))
}

fn mae_plane(p: &Plane, g: &Plane) -> f64 {
    p.data.iter().zip(&g.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.data.len() as f64
}

/// `(dice, iou)` after binarizing `pred` at `threshold`; both-empty scores 1.
pub fn dice_iou<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, threshold: f64) -> Result<(f64, f64)> {
    let (p, g) = pair(pred, gt)?;
    Ok(dice_iou_masks(&p.mask(threshold), &g.mask(0.5)))
}

fn dice_iou_masks(p: &[bool], g: &[bool]) -> (f64, f64) {
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&a, &b) in p.iter().zip(g) {
        inter += (a && b) as usize;
        np += a as usize;
        ng += b as usize;
    }
    if np + ng == 0 {
        return (1.0, 1.0);
    }
    let union = np + ng - inter;
    (2.0 * inter as f64 / (np + ng) as f64, inter as f64 / union as f64)
}

/// Default contour tolerance: 0.8% of the image diagonal, rounded.
pub fn default_boundary_tolerance(h: usize, w: usize) -> f64 {
    (0.008 * ((h * h + w * w) as f64).sqrt()).round()
}

/// Foreground pixels 4-adjacent to background or lying on the image border.
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask[i] {
                continue;
            }
            let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            out[i] = edge || !mask[i - w] || !mask[i + w] || !mask[i - 1] || !mask[i + 1];
        }
    }
    out
}

fn dilate(b: &[bool], h: usize, w: usize, tolerance: f64) -> Vec<bool> {
    let r = tolerance.floor().max(0.0) as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= tolerance * tolerance)
        .collect();
    let mut out = vec![false; b.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !b[(y * w as isize + x) as usize] {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    out[yy as usize * w + xx as usize] = true;
                }
            }
        }
    }
    out
}

/// Contour F-measure with a Euclidean pixel `tolerance`.
pub fn boundary_f<T: Scalar>(pred_mask: &Tensor<T>, gt_mask: &Tensor<T>, tolerance: f64) -> Result<f64> {
    let (p, g) = pair(pred_mask, gt_mask)?;
    Ok(boundary_f_masks(&p.mask(0.5), &g.mask(0.5), p.h, p.w, tolerance))
}

pub fn boundary_f_masks(pred: &[bool], gt: &[bool], h: usize, w: usize, tolerance: f64) -> f64 {
    let (bp, bg) = (boundary(pred, h, w), boundary(gt, h, w));
    let (np, ng) = (bp.iter().filter(|&&v| v).count(), bg.iter().filter(|&&v| v).count());
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let (dp, dg) = (dilate(&bp, h, w, tolerance), dilate(&bg, h, w, tolerance));
    let hits_p = bp.iter().zip(&dg).filter(|(&a, &b)| a && b).count();
    let hits_g = bg.iter().zip(&dp).filter(|(&a, &b)| a && b).count();
    let precision = hits_p as f64 / np as f64;
    let recall = hits_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

const S_ALPHA: f64 = 0.5;

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = if n > 1 { xs.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (mean, var.sqrt(), n)
}

fn object_score(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mean, std, _) = mean_std(xs);
    2.0 * mean / (mean * mean + 1.0 + std + f64::EPSILON)
}

fn s_object(p: &Plane, g: &[bool], mu: f64) -> f64 {
    let fg = p.data.iter().zip(g).filter(|(_, &m)| m).map(|(&v, _)| v);
    let bg = p.data.iter().zip(g).filter(|(_, &m)| !m).map(|(&v, _)| 1.0 - v);
    mu * object_score(fg) + (1.0 - mu) * object_score(bg)
}

fn ssim_block(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let denom = n - 1.0 + f64::EPSILON;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
        sxy += (a - mx) * (b - my);
    }
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Split position (count of leading rows/cols) nearest the foreground centroid.
///
/// Pixel centers sit at `i + 0.5`; ties go to even, which keeps the split
/// mirror-symmetric on even-sized maps.
fn centroid_split(g: &[bool], h: usize, w: usize) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in g.iter().enumerate().filter(|(_, &m)| m) {
        sy += (i / w) as f64 + 0.5;
        sx += (i % w) as f64 + 0.5;
        n += 1;
    }
    if n == 0 {
        return (h / 2, w / 2);
    }
    ((sy / n as f64).round_ties_even() as usize, (sx / n as f64).round_ties_even() as usize)
}

fn s_region(p: &Plane, g: &[bool]) -> f64 {
    let (h, w) = (p.h, p.w);
    let (sy, sx) = centroid_split(g, h, w);
    let total = (h * w) as f64;
    let quads = [(0, sy, 0, sx), (0, sy, sx, w), (sy, h, 0, sx), (sy, h, sx, w)];
    let mut score = 0.0;
    for (y0, y1, x0, x1) in quads {
        let area = (y1 - y0) * (x1 - x0);
        if area == 0 {
            continue;
        }
        let mut xs = Vec::with_capacity(area);
        let mut ys = Vec::with_capacity(area);
        for y in y0..y1 {
            for x in x0..x1 {
                xs.push(p.data[y * w + x]);
                ys.push(if g[y * w + x] { 1.0 } else { 0.0 });
            }
        }
        score += area as f64 / total * ssim_block(&xs, &ys);
    }
    score
}

/// Structure measure: object-aware plus region-aware similarity, equally weighted.
pub fn s_measure<T: Scalar>(pred: &Tensor<T>, gt_mask: &Tensor<T>) -> Result<f64> {
    let (p, g) = pair(pred, gt_mask)?;
    check_unit(&p)?;
    Ok(s_measure_plane(&p, &g.mask(0.5)))
}

fn s_measure_plane(p: &Plane, g: &[bool]) -> f64 {
    let mu = g.iter().filter(|&&m| m).count() as f64 / g.len() as f64;
    let mean_pred = p.data.iter().sum::<f64>() / p.data.len() as f64;
    if mu == 0.0 {
        return 1.0 - mean_pred;
    }
    if mu == 1.0 {
        return mean_pred;
    }
    let q = S_ALPHA * s_object(p, g, mu) + (1.0 - S_ALPHA) * s_region(p, g);
    q.max(0.0)
}

/// All metrics for one probability map against a binary mask.
pub fn evaluate<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, tolerance: f64) -> Result<MetricReport> {
    let (p, g) = pair(pred, gt)?;
    check_unit(&p)?;
    let (pm, gm) = (p.mask(DICE_THRESHOLD), g.mask(0.5));
    let (dice, iou) = dice_iou_masks(&pm, &gm);
    Ok(MetricReport {
        mae: mae_plane(&p, &g),
        dice,
        iou,
        boundary_f: boundary_f_masks(&pm, &gm, p.h, p.w, tolerance),
        s_measure: s_measure_plane(&p, &gm),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    pub mean: MetricReport,
    pub rows: Vec<MetricReport>,
}

/// Unweighted per-sample mean of every metric.
pub fn mean_report(rows: &[MetricReport]) -> MetricReport {
    let n = rows.len().max(1) as f64;
    let mut acc = [0.0; 5];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.fields()) {
            *a += v;
        }
    }
    MetricReport { mae: acc[0] / n, dice: acc[1] / n, iou: acc[2] / n, boundary_f: acc[3] / n, s_measure: acc[4] / n }
}

pub fn evaluate_dataset<T: Scalar>(preds: &[Tensor<T>], gts: &[Tensor<T>], tolerance: f64) -> Result<DatasetReport> {
    if preds.len() != gts.len() {
        return Err(Error::Contract(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    let rows = preds.iter().zip(gts).map(|(p, g)| evaluate(p, g, tolerance)).collect::<Result<Vec<_>>>()?;
    Ok(DatasetReport { mean: mean_report(&rows), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: usize, w: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[h, w], v).unwrap()
    }

    #[test]
    fn mae_cases() {
        let g = t(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mae(&g, &g).unwrap(), 0.0);
        assert_eq!(mae(&t(2, 2, &[0.5; 4]), &g).unwrap(), 0.5);
        assert_eq!(mae(&t(2, 2, &[1.0, 0.0, 0.5, 0.0]), &g).unwrap(), 0.125);
        assert!(matches!(mae(&t(2, 2, &[1.5, 0.0, 0.0, 0.0]), &g), Err(Error::Contract(_))));
    }

    #[test]
    fn dice_iou_cases() {
        let a = t(2, 4, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(dice_iou(&a, &a, 0.5).unwrap(), (1.0, 1.0));
        let b = t(2, 4, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(dice_iou(&a, &b, 0.5).unwrap(), (0.0, 0.0));
        let c = t(2, 4, &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let (d, i) = dice_iou(&a, &c, 0.5).unwrap();
        assert_eq!(d, 0.5);
        assert!((i - 1.0 / 3.0).abs() < 1e-15);
        let z = t(2, 4, &[0.0; 8]);
        assert_eq!(dice_iou(&z, &z, 0.5).unwrap(), (1.0, 1.0));
    }

    fn square(n: usize, y0: usize, x0: usize, side: usize) -> Tensor<f64> {
        Tensor::from_fn(&[n, n], |i| {
            let (y, x) = (i / n, i % n);
            if (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn boundary_f_cases() {
        let g = square(16, 4, 4, 6);
        assert_eq!(boundary_f(&g, &g, 1.0).unwrap(), 1.0);
        let shifted = square(16, 4, 5, 6);
        assert_eq!(boundary_f(&shifted, &g, 1.0).unwrap(), 1.0);
        assert!(boundary_f(&shifted, &g, 0.0).unwrap() < 1.0);
        let empty = Tensor::zeros(&[16, 16]);
        assert_eq!(boundary_f(&empty, &g, 2.0).unwrap(), 0.0);
        assert_eq!(boundary_f(&empty, &empty, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn border_pixels_are_boundary() {
        let full = vec![true; 9];
        let b = boundary(&full, 3, 3);
        assert_eq!(b.iter().filter(|&&v| v).count(), 8);
        assert!(!b[4]);
    }

    #[test]
    fn s_measure_degenerate_and_perfect() {
        let g = square(16, 3, 5, 7);
        assert!((s_measure(&g, &g).unwrap() - 1.0).abs() < 1e-6);
        let z = Tensor::<f64>::zeros(&[16, 16]);
        assert_eq!(s_measure(&z, &z).unwrap(), 1.0);
        let ones = Tensor::<f64>::full(&[16, 16], 1.0);
        assert_eq!(s_measure(&ones, &ones).unwrap(), 1.0);
        assert_eq!(s_measure(&Tensor::full(&[16, 16], 0.25), &z).unwrap(), 0.75);
    }

    #[test]
    fn default_tolerance_matches_diagonal_rule() {
        assert_eq!(default_boundary_tolerance(64, 64), 1.0);
        assert_eq!(default_boundary_tolerance(224, 224), 3.0);
        assert_eq!(default_boundary_tolerance(16, 16), 0.0);
    }

    #[test]
    fn dataset_means() {
        let g = square(8, 2, 2, 3);
        let single = evaluate_dataset(std::slice::from_ref(&g), std::slice::from_ref(&g), 1.0).unwrap();
        assert_eq!(single.mean, single.rows[0]);
        let p2 = Tensor::full(&[8, 8], 0.5);
        let r = evaluate_dataset(&[g.clone(), p2.clone()], &[g.clone(), g.clone()], 1.0).unwrap();
        let m = mean_report(&r.rows);
        assert_eq!(r.mean, m);
        assert!((r.mean.mae - 0.25).abs() < 1e-12);
        assert!(evaluate_dataset(std::slice::from_ref(&g), &[], 1.0).is_err());
    }
}
