//! Raw forward/backward kernels on row-major slices.
//!
//! The tape wraps these; data loading also uses the resampling kernels
//! directly on untracked values.

use crate::error::{dim_err, Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

pub fn check_perm(shape: &[usize], perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() {
        return dim_err(format!("permutation {:?} for rank-{} tensor", perm, shape.len()));
    }
    for &p in perm {
        if p >= shape.len() || seen[p] {
            return dim_err(format!("invalid permutation {:?}", perm));
        }
        seen[p] = true;
    }
    Ok(())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `perm[i]`.
pub fn permute<T: Copy + Default>(shape: &[usize], data: &[T], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = vec![T::default(); data.len()];
    if data.is_empty() {
        return (out_shape, out);
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in out.iter_mut() {
        *o = data[src];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Splits a shape around `axis` into (outer, len, inner).
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn softmax_forward<T: Scalar>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..n {
                m = m.max(x[base + k * inner]);
            }
            let mut s = T::zero();
            for k in 0..n {
                let e = (x[base + k * inner] - m).exp();
                y[base + k * inner] = e;
                s += e;
            }
            for k in 0..n {
                y[base + k * inner] /= s;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Scalar>(y: &[T], gy: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut dot = T::zero();
            for k in 0..n {
                dot += gy[base + k * inner] * y[base + k * inner];
            }
            for k in 0..n {
                let j = base + k * inner;
                gx[j] = y[j] * (gy[j] - dot);
            }
        }
    }
    gx
}

/// Geometry of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            return dim_err(format!("conv2d expects 4-D input and weight, got {:?} and {:?}", x, w));
        }
        if x[1] != w[1] {
            return dim_err(format!("conv2d channel mismatch: input {:?}, weight {:?}", x, w));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return dim_err(format!("kernel {}x{} larger than padded input {}x{} (pad {})", kh, kw, h, wd, pad));
        }
        Ok(Self {
            batch: x[0],
            cin: x[1],
            h,
            w: wd,
            cout: w[0],
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.cout, self.ho, self.wo]
    }

    /// `(ho, wo)` index range of outputs whose tap `k` lands inside `[0, len)`.
    fn valid_range(k: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
        // out index o reads input o*stride + k - pad
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
        let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let ohw = g.out_hw();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = ConvGeom::valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.kw {
                let (xlo, xhi) = ConvGeom::valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                dst.iter_mut().for_each(|v| *v = T::zero());
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for ox in xlo..xhi {
                        drow[ox] = src[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let ohw = g.out_hw();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = ConvGeom::valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.kw {
                let (xlo, xhi) = ConvGeom::valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * ohw..(row + 1) * ohw];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                    let drow = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for ox in xlo..xhi {
                        drow[ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (k, ohw) = (g.patch(), g.out_hw());
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * ohw;
    let mut out = vec![T::zero(); g.batch * out_item];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ohw] };
    let wm = MatRef::new(w, g.cout, k);
    for b in 0..g.batch {
        let xb = &x[b * in_item..(b + 1) * in_item];
        let ob = &mut out[b * out_item..(b + 1) * out_item];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(ohw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = bias[co]);
            }
        }
        let cm = if g.is_pointwise() {
            MatRef::new(xb, k, ohw)
        } else {
            im2col(g, xb, &mut col);
            MatRef::new(&col, k, ohw)
        };
        gemm(wm, cm, ob, bias.is_some());
    }
    out
}

/// Returns `(dx, dw, dbias)`; `dx`/`dw` are skipped when not requested.
pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (k, ohw) = (g.patch(), g.out_hw());
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * ohw;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut dbias = vec![T::zero(); g.cout];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ohw] };
    let mut dcol = if g.is_pointwise() || !need_dx { Vec::new() } else { vec![T::zero(); k * ohw] };
    let wm = MatRef::new(w, g.cout, k);
    for b in 0..g.batch {
        let xb = &x[b * in_item..(b + 1) * in_item];
        let gb = &gout[b * out_item..(b + 1) * out_item];
        for (co, chunk) in gb.chunks(ohw).enumerate() {
            dbias[co] += chunk.iter().copied().sum::<T>();
        }
        let gm = MatRef::new(gb, g.cout, ohw);
        if let Some(dw) = dw.as_mut() {
            let cm = if g.is_pointwise() {
                MatRef::new(xb, k, ohw)
            } else {
                im2col(g, xb, &mut col);
                MatRef::new(&col, k, ohw)
            };
            gemm(gm, cm.t(), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_item..(b + 1) * in_item];
            if g.is_pointwise() {
                gemm(wm.t(), gm, dxb, true);
            } else {
                gemm(wm.t(), gm, &mut dcol, false);
                col2im(g, &dcol, dxb);
            }
        }
    }
    (dx, dw, dbias)
}

/// Output length of a pooling window sweep.
pub fn pool_len(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if len + 2 * pad < k {
        return dim_err(format!("pool window {} larger than padded length {}", k, len + 2 * pad));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

fn window(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + k as isize).max(0) as usize).min(len);
    (lo, hi)
}

/// Mean over in-bounds cells of each window; `planes` = batch·channels.
#[allow(clippy::too_many_arguments)]
pub fn avg_pool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, Vec<T>)> {
    let (ho, wo) = (pool_len(h, k, stride, pad)?, pool_len(w, k, stride, pad)?);
    let mut out = vec![T::zero(); planes * ho * wo];
    // Separable: column sums first, then row sums over the column sums.
    let mut colsum = vec![T::zero(); ho * w];
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            let (y0, y1) = window(oy, k, stride, pad, h);
            let row = &mut colsum[oy * w..(oy + 1) * w];
            row.iter_mut().for_each(|v| *v = T::zero());
            for iy in y0..y1 {
                for (r, &v) in row.iter_mut().zip(&xp[iy * w..(iy + 1) * w]) {
                    *r += v;
                }
            }
        }
        let op = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for oy in 0..ho {
            let (y0, y1) = window(oy, k, stride, pad, h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, k, stride, pad, w);
                let s: T = colsum[oy * w + x0..oy * w + x1].iter().copied().sum();
                let count = ((y1 - y0) * (x1 - x0)).max(1);
                op[oy * wo + ox] = s / T::lit(count as f64);
            }
        }
    }
    Ok((ho, wo, out))
}

#[allow(clippy::too_many_arguments)]
pub fn avg_pool_backward<T: Scalar>(
    gout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Vec<T>> {
    let (ho, wo) = (pool_len(h, k, stride, pad)?, pool_len(w, k, stride, pad)?);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let gp = &gout[p * ho * wo..(p + 1) * ho * wo];
        let xp = &mut gx[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            let (y0, y1) = window(oy, k, stride, pad, h);
            for ox in 0..wo {
                let (x0, x1) = window(ox, k, stride, pad, w);
                let count = ((y1 - y0) * (x1 - x0)).max(1);
                let g = gp[oy * wo + ox] / T::lit(count as f64);
                for iy in y0..y1 {
                    for v in &mut xp[iy * w + x0..iy * w + x1] {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Half-pixel-center sampling taps `(i0, i1, frac)` for resizing `len` to `out`.
pub fn bilinear_taps(len: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = len as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            let frac = if i0 == len - 1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub fn resize_bilinear_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        let op = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                let top = gx * xp[y0 * w + x0] + fx * xp[y0 * w + x1];
                let bot = gx * xp[y1 * w + x0] + fx * xp[y1 * w + x1];
                op[oy * wo + ox] = gy * top + fy * bot;
            }
        }
    }
    out
}

pub fn resize_bilinear_backward<T: Scalar>(
    gout: &[T],
    planes: usize,
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, ho);
    let tx = bilinear_taps(w, wo);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let gp = &gout[p * ho * wo..(p + 1) * ho * wo];
        let xp = &mut gx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx, gxw) = (T::lit(fx), T::lit(1.0 - fx));
                let g = gp[oy * wo + ox];
                xp[y0 * w + x0] += g * gy * gxw;
                xp[y0 * w + x1] += g * gy * fx;
                xp[y1 * w + x0] += g * fy * gxw;
                xp[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    gx
}

/// Nearest-neighbour resize using the same half-pixel-center convention.
pub fn resize_nearest<T: Copy>(x: &[T], planes: usize, (h, w): (usize, usize), (ho, wo): (usize, usize)) -> Vec<T> {
    let near = |len: usize, out: usize, o: usize| -> usize {
        let src = (o as f64 + 0.5) * len as f64 / out as f64;
        (src.floor() as usize).min(len - 1)
    };
    let ys: Vec<usize> = (0..ho).map(|o| near(h, ho, o)).collect();
    let xs: Vec<usize> = (0..wo).map(|o| near(w, wo, o)).collect();
    let mut out = Vec::with_capacity(planes * ho * wo);
    for p in 0..planes {
        let xp = &x[p * h * w..(p + 1) * h * w];
        for &y in &ys {
            for &xx in &xs {
                out.push(xp[y * w + xx]);
            }
        }
    }
    out
}
