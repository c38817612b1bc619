//! Weighted BCE + Dice with deep supervision.

use crate::error::{dim_err, Error, Result};
use crate::network::ForwardOutputs;
use crate::scalar::Scalar;
use crate::tensor::{kernels, Tape, Tensor, Var};

/// Boundary-weight window of the weighted BCE.
pub const DEFAULT_WEIGHT_KERNEL: usize = 15;
const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapLoss {
    pub wbce: f64,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// final, side3, side2, side1, coarse map (last omitted without ECR).
    pub per_map: Vec<MapLoss>,
}

fn check_binary<T: Scalar>(gt: &Tensor<T>) -> Result<()> {
    if gt.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::Contract("ground truth must be binary".into()));
    }
    Ok(())
}

/// `1 + 5·|avg_pool(gt) − gt|`; equals 1 away from boundaries.
pub fn boundary_weights<T: Scalar>(gt: &Tensor<T>, kernel: usize) -> Result<Tensor<T>> {
    let s = gt.shape();
    if s.len() != 4 {
        return dim_err(format!("ground truth must be [B, 1, H, W], got {:?}", s));
    }
    if kernel.is_multiple_of(2) {
        return Err(Error::Parameter(format!("weight kernel must be odd, got {kernel}")));
    }
    let (_, _, pooled) = kernels::avg_pool_forward(gt.data(), s[0] * s[1], s[2], s[3], kernel, 1, kernel / 2)?;
    let five = T::lit(5.0);
    let data = pooled.iter().zip(gt.data()).map(|(&p, &g)| T::one() + five * (p - g).abs()).collect();
    Tensor::new(s, data)
}

/// `Σ w·BCE(σ(logits), gt) / Σ w` over the whole batch.
pub fn weighted_bce<T: Scalar>(tape: &mut Tape<T>, logits: Var, gt: &Tensor<T>, kernel: usize) -> Result<Var> {
    check_binary(gt)?;
    if tape.shape(logits) != gt.shape() {
        return dim_err(format!("logits {:?} vs ground truth {:?}", tape.shape(logits), gt.shape()));
    }
    let w = boundary_weights(gt, kernel)?;
    let wsum: f64 = w.data().iter().map(|v| v.as_f64()).sum();
    let g = tape.constant(gt.clone());
    let wv = tape.constant(w);
    let bce = tape.bce_with_logits(logits, g)?;
    let weighted = tape.mul(bce, wv)?;
    let s = tape.sum(weighted)?;
    tape.mul_scalar(s, T::lit(1.0 / wsum))
}

/// `1 − (2Σpg + 1)/(Σp + Σg + 1)` per item, averaged over the batch.
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, gt: &Tensor<T>) -> Result<Var> {
    check_binary(gt)?;
    if tape.shape(logits) != gt.shape() {
        return dim_err(format!("logits {:?} vs ground truth {:?}", tape.shape(logits), gt.shape()));
    }
    let b = gt.shape()[0];
    let inner = gt.numel() / b;
    let gsum: Vec<T> = gt.data().chunks(inner).map(|c| c.iter().copied().sum()).collect();
    let g = tape.constant(gt.clone());
    let gs = tape.constant(Tensor::new(&[b], gsum)?);
    let p = tape.sigmoid(logits)?;
    let pg = tape.mul(p, g)?;
    let inter = tape.sum_trailing(pg, 1)?;
    let psum = tape.sum_trailing(p, 1)?;
    let num = tape.mul_scalar(inter, T::lit(2.0))?;
    let num = tape.add_scalar(num, T::lit(DICE_SMOOTH))?;
    let den = tape.add(psum, gs)?;
    let den = tape.add_scalar(den, T::lit(DICE_SMOOTH))?;
    let ratio = tape.div(num, den)?;
    let neg = tape.mul_scalar(ratio, -T::one())?;
    let per_item = tape.add_scalar(neg, T::one())?;
    tape.mean(per_item)
}

/// Sum of `weighted_bce + dice_loss` over every supervised map, equally weighted.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out: &ForwardOutputs,
    gt: &Tensor<T>,
    kernel: usize,
) -> Result<(Var, LossReport)> {
    let mut terms = Vec::new();
    let mut per_map = Vec::new();
    for map in out.maps() {
        let wbce = weighted_bce(tape, map, gt, kernel)?;
        let dice = dice_loss(tape, map, gt)?;
        per_map.push(MapLoss { wbce: tape.value(wbce).data()[0].as_f64(), dice: tape.value(dice).data()[0].as_f64() });
        terms.push(tape.add(wbce, dice)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let report = LossReport { total: tape.value(total).data()[0].as_f64(), per_map };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_mask(n: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, 1, n, n], |i| if (i % n) < n / 2 { 1.0 } else { 0.0 })
    }

    #[test]
    fn saturated_logits_give_near_zero_losses() {
        let gt = half_mask(8);
        let mut tape = Tape::new();
        let logits = tape.param(gt.map(|g| if g > 0.5 { 40.0 } else { -40.0 }));
        let b = weighted_bce(&mut tape, logits, &gt, 15).unwrap();
        let d = dice_loss(&mut tape, logits, &gt).unwrap();
        assert!(tape.value(b).data()[0] < 1e-12);
        assert!(tape.value(d).data()[0] < 1e-12);
    }

    #[test]
    fn uniform_mask_reduces_to_plain_bce() {
        for fill in [0.0, 1.0] {
            let gt = Tensor::full(&[2, 1, 4, 4], fill);
            let w = boundary_weights(&gt, 15).unwrap();
            assert!(w.data().iter().all(|&v| v == 1.0));
            let logits_t = Tensor::from_fn(&[2, 1, 4, 4], |i| (i as f64 - 16.0) / 5.0);
            let mut tape = Tape::new();
            let logits = tape.param(logits_t.clone());
            let b = weighted_bce(&mut tape, logits, &gt, 15).unwrap();
            let plain: f64 = logits_t
                .data()
                .iter()
                .map(|&x| {
                    let p = 1.0 / (1.0 + (-x).exp());
                    -(fill * p.ln() + (1.0 - fill) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / 32.0;
            assert!((tape.value(b).data()[0] - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn inverted_prediction_dice_close_to_one() {
        let n = 16;
        let gt = half_mask(n);
        let mut tape = Tape::new();
        let logits = tape.param(gt.map(|g| if g > 0.5 { -40.0 } else { 40.0 }));
        let d = dice_loss(&mut tape, logits, &gt).unwrap();
        let total = (n * n) as f64;
        // p = 1 - g: Σpg = 0, Σp + Σg = N
        let want = 1.0 - 1.0 / (total + 1.0);
        assert!((tape.value(d).data()[0] - want).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_and_low_probability_gives_small_dice() {
        let gt = Tensor::<f64>::zeros(&[1, 1, 8, 8]);
        let mut tape = Tape::new();
        let logits = tape.param(Tensor::full(&[1, 1, 8, 8], -40.0));
        let d = dice_loss(&mut tape, logits, &gt).unwrap();
        assert!(tape.value(d).data()[0] < 1e-9);
    }

    #[test]
    fn non_binary_ground_truth_rejected() {
        let gt = Tensor::<f64>::full(&[1, 1, 2, 2], 0.5);
        let mut tape = Tape::new();
        let logits = tape.param(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(matches!(weighted_bce(&mut tape, logits, &gt, 3), Err(Error::Contract(_))));
        assert!(matches!(dice_loss(&mut tape, logits, &gt), Err(Error::Contract(_))));
    }

    #[test]
    fn weights_exceed_one_only_near_boundary() {
        let n = 32;
        let gt = Tensor::<f64>::from_fn(&[1, 1, n, n], |i| if i % n >= 16 { 1.0 } else { 0.0 });
        let w = boundary_weights(&gt, 15).unwrap();
        for y in 0..n {
            for x in 0..n {
                let v = w.at(&[0, 0, y, x]);
                assert!(v >= 1.0);
                // boundary sits between columns 15 and 16
                let dist = if x >= 16 { x - 16 } else { 15 - x };
                if dist >= 7 {
                    assert_eq!(v, 1.0, "pixel ({y},{x})");
                } else {
                    assert!(v > 1.0, "pixel ({y},{x})");
                }
            }
        }
    }
}
