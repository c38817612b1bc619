//! Naive reference implementations shared by integration tests.
//!
//! Everything here is written from the definitions with plain loops and
//! no code from the library beyond `Tensor` indexing.

#![allow(dead_code)]

use dcrnet::Tensor;

/// Cross attention and augmented features by direct summation.
///
/// Returns `(x, y)` flattened in `[HW, B, S]` and `[B, C, H, W]` order.
pub fn cross_attention(bank: &Tensor<f64>, feats: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let [b, c, h, w] = feats.shape()[..] else { panic!("feats must be rank 4") };
    let s = bank.shape()[0];
    let hw = h * w;
    let mut x = vec![0.0; hw * b * s];
    let mut y = vec![0.0; b * c * hw];
    for z in 0..hw {
        for j in 0..b {
            let dots: Vec<f64> =
                (0..s).map(|i| (0..c).map(|ch| bank.at(&[i, ch]) * feats.at(&[j, ch, z / w, z % w])).sum()).collect();
            let denom: f64 = dots.iter().map(|d| d.exp()).sum();
            for i in 0..s {
                x[(z * b + j) * s + i] = dots[i].exp() / denom;
            }
            for ch in 0..c {
                y[(j * c + ch) * hw + z] = (0..s).map(|i| x[(z * b + j) * s + i] * bank.at(&[i, ch])).sum();
            }
        }
    }
    (x, y)
}

/// Region embedding `[B * C]`: map-weighted mean with the 1e-6 guard.
pub fn region_embedding(a: &Tensor<f64>, m: &Tensor<f64>) -> Vec<f64> {
    let [b, c, h, w] = a.shape()[..] else { panic!("a must be rank 4") };
    let mut out = Vec::with_capacity(b * c);
    for n in 0..b {
        let total: f64 = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| m.at(&[n, 0, y, x])).sum();
        for ch in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += m.at(&[n, 0, y, x]) * a.at(&[n, ch, y, x]);
                }
            }
            out.push(acc / (total + 1e-6));
        }
    }
    out
}

/// A square map stored row-major as `f64`.
pub struct Map<'a> {
    pub h: usize,
    pub w: usize,
    pub v: &'a [f64],
}

impl Map<'_> {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.v[y * self.w + x]
    }
}

pub fn mae(p: &Map, g: &Map) -> f64 {
    let mut s = 0.0;
    for y in 0..p.h {
        for x in 0..p.w {
            s += (p.at(y, x) - g.at(y, x)).abs();
        }
    }
    s / (p.h * p.w) as f64
}

pub fn dice_iou(p: &Map, g: &Map) -> (f64, f64) {
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for y in 0..p.h {
        for x in 0..p.w {
            match (p.at(y, x) >= 0.5, g.at(y, x) >= 0.5) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
    }
    if tp + fp + fnn == 0.0 {
        return (1.0, 1.0);
    }
    (2.0 * tp / (2.0 * tp + fp + fnn), tp / (tp + fp + fnn))
}

/// Boundary F by brute-force distance search between contour pixel lists.
pub fn boundary_f(p: &Map, g: &Map, tolerance: f64) -> f64 {
    let contour = |m: &Map| -> Vec<(i64, i64)> {
        let fg = |y: i64, x: i64| {
            y >= 0 && x >= 0 && y < m.h as i64 && x < m.w as i64 && m.at(y as usize, x as usize) >= 0.5
        };
        let mut out = Vec::new();
        for y in 0..m.h as i64 {
            for x in 0..m.w as i64 {
                if fg(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| !fg(y + dy, x + dx)) {
                    out.push((y, x));
                }
            }
        }
        out
    };
    let (cp, cg) = (contour(p), contour(g));
    if cp.is_empty() && cg.is_empty() {
        return 1.0;
    }
    if cp.is_empty() || cg.is_empty() {
        return 0.0;
    }
    let near = |a: (i64, i64), set: &[(i64, i64)]| {
        set.iter().any(|b| (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2)) as f64).sqrt() <= tolerance)
    };
    let precision = cp.iter().filter(|&&a| near(a, &cg)).count() as f64 / cp.len() as f64;
    let recall = cg.iter().filter(|&&a| near(a, &cp)).count() as f64 / cg.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Structure measure written from its definition: object term on masked
/// copies of the prediction, region term on the four quadrants cut at the
/// ground-truth centroid.
pub fn s_measure(p: &Map, g: &Map) -> f64 {
    let eps = f64::EPSILON;
    let n = (p.h * p.w) as f64;
    let gt: Vec<bool> = g.v.iter().map(|&v| v >= 0.5).collect();
    let y = gt.iter().filter(|&&b| b).count() as f64 / n;
    if y == 0.0 {
        return 1.0 - p.v.iter().sum::<f64>() / n;
    }
    if y == 1.0 {
        return p.v.iter().sum::<f64>() / n;
    }

    // Object term.
    let object = |pred: &[f64], sel: &[bool]| {
        let vals: Vec<f64> = pred.iter().zip(sel).filter(|(_, &s)| s).map(|(&v, _)| v).collect();
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        2.0 * mean / (mean * mean + 1.0 + sd + eps)
    };
    let fg_pred: Vec<f64> = p.v.iter().zip(&gt).map(|(&v, &b)| if b { v } else { 0.0 }).collect();
    let bg_pred: Vec<f64> = p.v.iter().zip(&gt).map(|(&v, &b)| if b { 0.0 } else { 1.0 - v }).collect();
    let not_gt: Vec<bool> = gt.iter().map(|b| !b).collect();
    let s_object = y * object(&fg_pred, &gt) + (1.0 - y) * object(&bg_pred, &not_gt);

    // Region term: cut along the grid lines nearest the centroid, measured
    // in continuous coordinates where pixel (r, c) covers [r, r+1) × [c, c+1).
    let (mut rows, mut cols, mut count) = (0.0, 0.0, 0.0);
    for r in 0..p.h {
        for c in 0..p.w {
            if gt[r * p.w + c] {
                rows += r as f64 + 0.5;
                cols += c as f64 + 0.5;
                count += 1.0;
            }
        }
    }
    let nearest_line = |v: f64| {
        let lo = v.floor();
        let d = v - lo;
        let line = if d > 0.5 || (d == 0.5 && lo as i64 % 2 == 1) { lo + 1.0 } else { lo };
        line as usize
    };
    let split_y = nearest_line(rows / count);
    let split_x = nearest_line(cols / count);
    let ssim = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                xs.push(p.v[r * p.w + c]);
                ys.push(if gt[r * p.w + c] { 1.0 } else { 0.0 });
            }
        }
        let k = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / k;
        let my = ys.iter().sum::<f64>() / k;
        let sx2 = xs.iter().map(|v| (v - mx) * (v - mx)).sum::<f64>() / (k - 1.0 + eps);
        let sy2 = ys.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / (k - 1.0 + eps);
        let sxy = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (k - 1.0 + eps);
        let alpha = 4.0 * mx * my * sxy;
        let beta = (mx * mx + my * my) * (sx2 + sy2);
        if alpha != 0.0 {
            alpha / (beta + eps)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let quadrants = [
        (0, split_y, 0, split_x),
        (0, split_y, split_x, p.w),
        (split_y, p.h, 0, split_x),
        (split_y, p.h, split_x, p.w),
    ];
    let mut s_region = 0.0;
    for (r0, r1, c0, c1) in quadrants {
        let weight = ((r1 - r0) * (c1 - c0)) as f64 / n;
        if weight > 0.0 {
            s_region += weight * ssim(r0, r1, c0, c1);
        }
    }

    let q = 0.5 * s_object + 0.5 * s_region;
    q.max(0.0)
}
