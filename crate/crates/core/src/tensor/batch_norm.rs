use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
    pub step_count: u64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
            step_count: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        BatchNormState {
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            momentum: U::lit(self.momentum.as_f64()),
            eps: U::lit(self.eps.as_f64()),
            step_count: self.step_count,
        }
    }
}

/// Saved context for the backward pass.
#[derive(Debug)]
pub(crate) struct BnSaved<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

/// `x` viewed as `[batch, channels, spatial]`.
pub(crate) fn forward<T: Scalar>(
    x: &[T],
    (batch, channels, spatial): (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    state: &mut BatchNormState<T>,
    training: bool,
) -> Result<(Vec<T>, BnSaved<T>)> {
    let n = batch * spatial;
    if training && n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    let mut x_hat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); channels];
    for c in 0..channels {
        let (mean, inv) = if training {
            let mut sum = 0.0f64;
            for b in 0..batch {
                let base = (b * channels + c) * spatial;
                sum += x[base..base + spatial].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / n as f64;
            let mut sq = 0.0f64;
            for b in 0..batch {
                let base = (b * channels + c) * spatial;
                sq += x[base..base + spatial].iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>();
            }
            let var = sq / n as f64;
            let m = state.momentum.as_f64();
            let unbiased = sq / (n - 1) as f64;
            state.running_mean[c] = T::lit((1.0 - m) * state.running_mean[c].as_f64() + m * mean);
            state.running_var[c] = T::lit(((1.0 - m) * state.running_var[c].as_f64() + m * unbiased).max(0.0));
            (T::lit(mean), T::lit(1.0 / (var + state.eps.as_f64()).sqrt()))
        } else {
            (state.running_mean[c], (state.running_var[c] + state.eps).sqrt().recip())
        };
        inv_std[c] = inv;
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                let h = (x[i] - mean) * inv;
                x_hat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    if training {
        state.step_count += 1;
    }
    Ok((y, BnSaved { x_hat, inv_std, training }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn backward<T: Scalar>(
    gy: &[T],
    (batch, channels, spatial): (usize, usize, usize),
    gamma: &[T],
    saved: &BnSaved<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = T::lit((batch * spatial) as f64);
    let mut dx = vec![T::zero(); gy.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        let (mut sg, mut sgx) = (T::zero(), T::zero());
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                sg += gy[i];
                sgx += gy[i] * saved.x_hat[i];
            }
        }
        dgamma[c] = sgx;
        dbeta[c] = sg;
        let scale = gamma[c] * saved.inv_std[c];
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                dx[i] =
                    if saved.training { scale * (gy[i] - sg / n - saved.x_hat[i] * sgx / n) } else { scale * gy[i] };
            }
        }
    }
    (dx, dgamma, dbeta)
}
