//! Contextual-relation blocks.
//!
//! * Interior (ICR): position attention over all pixels of one image.
//! * Exterior (ECR): every pixel attends over a bank of region embeddings
//!   collected from other images, and is replaced by the attention-weighted
//!   mix of those embeddings.

use crate::error::{dim_err, Error, Result};
use crate::memory::RegionMemory;
use crate::scalar::Scalar;
use crate::tensor::{BatchNormState, Tape, Var};

/// Normalizer guard for the region weights.
pub const REGION_EPS: f64 = 1e-6;

/// Query/key width used by position attention for `channels` inputs.
pub fn reduced_channels(channels: usize) -> usize {
    (channels / 8).max(1)
}

/// Tape handles of the position-attention parameters.
#[derive(Clone, Copy, Debug)]
pub struct IcrParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    /// Shape `[1]`; starts at zero so the block is the identity at init.
    pub gamma: Var,
}

/// Convolution followed by batch norm; the conv has no bias.
#[derive(Clone, Copy, Debug)]
pub struct ConvBn {
    pub w: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl ConvBn {
    /// `conv → BN`, without the activation.
    pub fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        state: &mut BatchNormState<T>,
        pad: usize,
        training: bool,
    ) -> Result<Var> {
        let c = tape.conv2d(x, self.w, None, 1, pad)?;
        tape.batch_norm(c, self.gamma, self.beta, state, training)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EcrParams {
    /// 1×1, C → 1.
    pub psi: ConvBn,
    /// 3×3, 2C → C.
    pub fuse: ConvBn,
}

/// Where ECR takes its bank of embeddings from.
pub enum BankSource<'a, T> {
    /// Previous mini-batches; the current batch is enqueued afterwards.
    Memory(&'a mut RegionMemory<T>),
    /// The current mini-batch's own embeddings.
    WithinBatch,
}

#[derive(Clone, Copy, Debug)]
pub struct EcrOutput {
    /// Augmented features `[B, C, H, W]`.
    pub y: Var,
    /// Coarse map after ReLU `[B, 1, H, W]`, the pixel weights of the region embedding.
    pub m: Var,
    /// Coarse map before ReLU; the supervised logits.
    pub m_logits: Var,
    /// Region embeddings `[B, C]`.
    pub e: Var,
}

fn dims4<T: Scalar>(tape: &Tape<T>, v: Var, what: &str) -> Result<[usize; 4]> {
    match *tape.shape(v) {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => dim_err(format!("{what} expects [B, C, H, W], got {:?}", s)),
    }
}

/// Position attention with a residual scaled by `gamma`.
pub fn position_attention<T: Scalar>(tape: &mut Tape<T>, a: Var, p: &IcrParams) -> Result<Var> {
    let [b, c, h, w] = dims4(tape, a, "position_attention")?;
    let hw = h * w;
    let q = tape.conv2d(a, p.wq, Some(p.bq), 1, 0)?;
    let cq = tape.shape(q)[1];
    let q = tape.reshape(q, &[b, cq, hw])?;
    let k = tape.conv2d(a, p.wk, Some(p.bk), 1, 0)?;
    let k = tape.reshape(k, &[b, cq, hw])?;
    let v = tape.conv2d(a, p.wv, Some(p.bv), 1, 0)?;
    let v = tape.reshape(v, &[b, c, hw])?;
    let qt = tape.transpose(q)?;
    let energy = tape.bmm(qt, k)?;
    let attn = tape.softmax(energy, 2)?;
    let attn_t = tape.transpose(attn)?;
    let out = tape.bmm(v, attn_t)?;
    let out = tape.reshape(out, &[b, c, h, w])?;
    let scaled = tape.broadcast_mul(out, p.gamma)?;
    tape.add(scaled, a)
}

/// Region embedding `[B, C]`: the `m`-weighted mean of each image's pixel features.
pub fn region_embedding<T: Scalar>(tape: &mut Tape<T>, a: Var, m: Var) -> Result<Var> {
    let [b, c, h, w] = dims4(tape, a, "region_embedding")?;
    let ms = tape.shape(m);
    if ms != [b, 1, h, w] {
        return dim_err(format!("region map {:?} does not match features {:?}", ms, [b, c, h, w]));
    }
    if tape.value(m).data().iter().any(|&v| v < T::zero()) {
        return Err(Error::Contract("region map has negative entries".into()));
    }
    let hw = h * w;
    let mf = tape.reshape(m, &[b, 1, hw])?;
    let total = tape.sum_trailing(mf, 1)?;
    let total = tape.add_scalar(total, T::lit(REGION_EPS))?;
    let weights = tape.broadcast_div(mf, total)?;
    let af = tape.reshape(a, &[b, c, hw])?;
    let af = tape.transpose(af)?;
    let e = tape.bmm(weights, af)?;
    tape.reshape(e, &[b, c])
}

/// Attention `[HW, B, S]` of every pixel over the `S` bank rows.
pub fn cross_attention<T: Scalar>(tape: &mut Tape<T>, bank: Var, feats: Var) -> Result<Var> {
    let [b, c, h, w] = dims4(tape, feats, "cross_attention")?;
    let (s, bc) = match *tape.shape(bank) {
        [s, bc] => (s, bc),
        ref other => return dim_err(format!("bank must be [S, C], got {:?}", other)),
    };
    if s == 0 {
        return Err(Error::Contract("cross attention over an empty bank".into()));
    }
    if bc != c {
        return dim_err(format!("bank width {bc} does not match feature channels {c}"));
    }
    let hw = h * w;
    let flat = tape.reshape(feats, &[b, c, hw])?;
    let flat = tape.transpose(flat)?;
    let flat = tape.reshape(flat, &[b * hw, c])?;
    let bank_t = tape.transpose(bank)?;
    let logits = tape.matmul(flat, bank_t)?;
    let logits = tape.reshape(logits, &[b, hw, s])?;
    let logits = tape.permute(logits, &[1, 0, 2])?;
    tape.softmax(logits, 2)
}

/// Attention-weighted bank rows laid back out as `[B, C, H, W]`.
pub fn augment<T: Scalar>(tape: &mut Tape<T>, x: Var, bank: Var, (h, w): (usize, usize)) -> Result<Var> {
    let (xs, bs) = (tape.shape(x).to_vec(), tape.shape(bank).to_vec());
    let (hw, b, s) = match xs[..] {
        [hw, b, s] => (hw, b, s),
        _ => return dim_err(format!("attention map must be [HW, B, S], got {:?}", xs)),
    };
    if bs.len() != 2 || bs[0] != s || hw != h * w {
        return dim_err(format!("attention map {:?} vs bank {:?} at {}x{}", xs, bs, h, w));
    }
    let c = bs[1];
    let flat = tape.reshape(x, &[hw * b, s])?;
    let mixed = tape.matmul(flat, bank)?;
    let mixed = tape.reshape(mixed, &[hw, b, c])?;
    let mixed = tape.permute(mixed, &[1, 2, 0])?;
    tape.reshape(mixed, &[b, c, h, w])
}

/// Full exterior block: coarse map, region embeddings, bank attention.
///
/// In evaluation mode the bank is the current batch and `source` is not touched.
pub fn ecr_forward<T: Scalar>(
    tape: &mut Tape<T>,
    a: Var,
    psi: &ConvBn,
    psi_state: &mut BatchNormState<T>,
    source: BankSource<'_, T>,
    training: bool,
) -> Result<EcrOutput> {
    let [_, c, h, w] = dims4(tape, a, "ecr_forward")?;
    let m_logits = psi.apply(tape, a, psi_state, 0, training)?;
    if tape.shape(m_logits)[1] != 1 {
        return dim_err("psi must produce a single channel");
    }
    let m = tape.relu(m_logits)?;
    let e = region_embedding(tape, a, m)?;
    let mut memory = match source {
        BankSource::Memory(mem) if training => Some(mem),
        _ => None,
    };
    let bank = match memory.as_deref_mut() {
        Some(mem) => {
            let snap = mem.snapshot(c);
            if snap.shape()[0] == 0 {
                e
            } else {
                tape.constant(snap)
            }
        }
        None => e,
    };
    let x = cross_attention(tape, bank, a)?;
    let y = augment(tape, x, bank, (h, w))?;
    if let Some(mem) = memory {
        let rows = tape.value(e);
        let vectors = (0..rows.shape()[0]).map(|i| rows.slab(i).to_vec()).collect();
        mem.push_vectors(vectors)?;
    }
    Ok(EcrOutput { y, m, m_logits, e })
}

/// Channel concat of both branches, then 3×3 conv → BN → ReLU.
pub fn fuse<T: Scalar>(
    tape: &mut Tape<T>,
    y_icr: Var,
    y_ecr: Var,
    p: &ConvBn,
    state: &mut BatchNormState<T>,
    training: bool,
) -> Result<Var> {
    if tape.shape(y_icr) != tape.shape(y_ecr) {
        return dim_err(format!("fuse inputs {:?} and {:?} differ", tape.shape(y_icr), tape.shape(y_ecr)));
    }
    let cat = tape.concat(&[y_icr, y_ecr], 1)?;
    let z = p.apply(tape, cat, state, 1, training)?;
    tape.relu(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    fn icr(tape: &mut Tape<f64>, c: usize, seed: u64, gamma: f64) -> IcrParams {
        let cq = reduced_channels(c);
        IcrParams {
            wq: tape.param(rand_tensor(&[cq, c, 1, 1], seed)),
            bq: tape.param(rand_tensor(&[cq], seed + 1)),
            wk: tape.param(rand_tensor(&[cq, c, 1, 1], seed + 2)),
            bk: tape.param(rand_tensor(&[cq], seed + 3)),
            wv: tape.param(rand_tensor(&[c, c, 1, 1], seed + 4)),
            bv: tape.param(rand_tensor(&[c], seed + 5)),
            gamma: tape.param(Tensor::scalar(gamma)),
        }
    }

    #[test]
    fn zero_gamma_is_exact_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(rand_tensor(&[2, 8, 3, 4], 7));
        let p = icr(&mut tape, 8, 1, 0.0);
        let y = position_attention(&mut tape, a, &p).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
    }

    #[test]
    fn single_position_attends_to_itself() {
        let mut tape = Tape::new();
        let a = tape.constant(rand_tensor(&[1, 4, 1, 1], 3));
        let p = icr(&mut tape, 4, 9, 0.5);
        let y = position_attention(&mut tape, a, &p).unwrap();
        let v = tape.conv2d(a, p.wv, Some(p.bv), 1, 0).unwrap();
        let (yv, vv, av) = (tape.value(y).data(), tape.value(v).data(), tape.value(a).data());
        for i in 0..4 {
            assert!((yv[i] - (0.5 * vv[i] + av[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn region_embedding_of_identical_pixels_is_that_pixel() {
        let mut tape = Tape::<f64>::new();
        let v = [0.3, -1.2, 2.0];
        let a = tape.constant(Tensor::from_fn(&[1, 3, 2, 2], |i| v[i / 4]));
        let m = tape.constant(Tensor::from_f64(&[1, 1, 2, 2], &[0.1, 2.0, 0.0, 0.7]).unwrap());
        let e = region_embedding(&mut tape, a, m).unwrap();
        for (got, want) in tape.value(e).data().iter().zip(v) {
            assert!((got - want).abs() < 1e-5);
        }
    }

    #[test]
    fn region_embedding_zero_mask_gives_zero() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(rand_tensor(&[2, 3, 2, 2], 1).cast());
        let m = tape.constant(Tensor::zeros(&[2, 1, 2, 2]));
        let e = region_embedding(&mut tape, a, m).unwrap();
        assert!(tape.value(e).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn region_embedding_one_hot_selects_pixel() {
        let mut tape = Tape::<f64>::new();
        let at = rand_tensor(&[1, 3, 2, 2], 11);
        let a = tape.constant(at.clone());
        for pix in 0..4 {
            let m = tape.constant(Tensor::from_fn(&[1, 1, 2, 2], |i| if i == pix { 1.0 } else { 0.0 }));
            let e = region_embedding(&mut tape, a, m).unwrap();
            for ch in 0..3 {
                let want = at.at(&[0, ch, pix / 2, pix % 2]);
                assert!((tape.value(e).data()[ch] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn negative_region_map_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[1, 2, 1, 2]));
        let m = tape.constant(Tensor::from_f64(&[1, 1, 1, 2], &[1.0, -0.1]).unwrap());
        assert!(matches!(region_embedding(&mut tape, a, m), Err(Error::Contract(_))));
    }

    #[test]
    fn singleton_bank_weights_are_one() {
        let mut tape = Tape::<f64>::new();
        let bank = tape.constant(rand_tensor(&[1, 3], 2));
        let f = tape.constant(rand_tensor(&[2, 3, 2, 2], 5));
        let x = cross_attention(&mut tape, bank, f).unwrap();
        assert_eq!(tape.shape(x), &[4, 2, 1]);
        assert!(tape.value(x).data().iter().all(|&v| v == 1.0));
        let y = augment(&mut tape, x, bank, (2, 2)).unwrap();
        let b = tape.value(bank).data().to_vec();
        let yv = tape.value(y);
        for i in 0..2 {
            for ch in 0..3 {
                for p in 0..4 {
                    assert!((yv.at(&[i, ch, p / 2, p % 2]) - b[ch]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_bank_rows_give_uniform_weights() {
        let mut tape = Tape::<f64>::new();
        let bank = tape.constant(Tensor::from_fn(&[4, 2], |i| [0.7, -0.2][i % 2]));
        let f = tape.constant(rand_tensor(&[1, 2, 3, 3], 8));
        let x = cross_attention(&mut tape, bank, f).unwrap();
        assert!(tape.value(x).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn two_entry_bank_scalar_case() {
        let mut tape = Tape::<f64>::new();
        let bank = tape.constant(Tensor::from_f64(&[2, 1], &[0.0, 1.0]).unwrap());
        let f = tape.constant(Tensor::from_f64(&[1, 1, 1, 1], &[1.0]).unwrap());
        let x = cross_attention(&mut tape, bank, f).unwrap();
        let xv = tape.value(x).data();
        let e = std::f64::consts::E;
        assert!((xv[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((xv[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((xv[0] - 0.2689).abs() < 1e-4 && (xv[1] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn empty_bank_rejected() {
        let mut tape = Tape::<f32>::new();
        let bank = tape.constant(Tensor::zeros(&[0, 2]));
        let f = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert!(matches!(cross_attention(&mut tape, bank, f), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_attention_averages_bank() {
        let mut tape = Tape::<f64>::new();
        let bank_t = rand_tensor(&[3, 2], 4);
        let bank = tape.constant(bank_t.clone());
        let x = tape.constant(Tensor::full(&[4, 2, 3], 1.0 / 3.0));
        let y = augment(&mut tape, x, bank, (2, 2)).unwrap();
        let mean: Vec<f64> = (0..2).map(|c| (0..3).map(|s| bank_t.at(&[s, c])).sum::<f64>() / 3.0).collect();
        let yv = tape.value(y);
        for b in 0..2 {
            for c in 0..2 {
                for p in 0..4 {
                    assert!((yv.at(&[b, c, p / 2, p % 2]) - mean[c]).abs() < 1e-12);
                }
            }
        }
    }
}
