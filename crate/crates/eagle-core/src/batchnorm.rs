//! Batch normalization over `[N, C, H, W]` activations.
//!
//! Three modes with one normalization formula, y = gamma*(x-mu)/sqrt(var+eps)+beta:
//!
//! * `Train`       - normalize with current-batch statistics, update the
//!                   moving averages, and hand back a cache for backward.
//! * `Eval`        - normalize with the stored moving statistics; the state
//!                   is read-only in this mode.
//! * `Recalibrate` - statistically identical to `Train` (batch stats +
//!                   moving-average update) but gradient-free: no cache is
//!                   produced, signalling upstream that nothing flows back.
//!
//! Batch variance uses the unbiased 1/(pop-1) estimator, where the population
//! for channel c is every value in that channel across the batch and the
//! spatial plane (pop = N*H*W). Moving statistics update as
//! `m_t = momentum * m_{t-1} + (1 - momentum) * batch_stat`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
    Recalibrate,
}

pub const BN_DEFAULT_EPSILON: f64 = 1e-5;
pub const BN_DEFAULT_MOMENTUM: f64 = 0.9;

/// Learnable scale/shift plus moving statistics for one BN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub moving_mean: Vec<T>,
    pub moving_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
}

impl<T: Scalar> BnState<T> {
    /// Identity-initialized state: gamma 1, beta 0, moving stats (0, 1).
    pub fn new(channels: usize) -> Self {
        BnState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            moving_mean: vec![T::zero(); channels],
            moving_var: vec![T::one(); channels],
            epsilon: T::from_f64(BN_DEFAULT_EPSILON),
            momentum: T::from_f64(BN_DEFAULT_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Drop all moving statistics back to the initialization point (0, 1).
    /// Gamma and beta are untouched; this is the first step of recalibration.
    pub fn reset_moving_stats(&mut self) {
        self.moving_mean.fill(T::zero());
        self.moving_var.fill(T::one());
    }

    fn check_channels(&self, op: &'static str, c: usize) -> Result<()> {
        if self.channels() != c {
            return Err(Error::shape(
                op,
                format!("state holds {} channels, input has {c}", self.channels()),
            ));
        }
        Ok(())
    }
}

/// Per-batch statistics retained for the backward pass (Train mode only).
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub batch_mean: Vec<T>,
    /// 1 / sqrt(batch_var + eps), per channel.
    pub inv_std: Vec<T>,
    /// Population count the statistics were computed over (N*H*W).
    pub population: usize,
}

fn batch_stats<T: Scalar>(input: &Tensor<T>, n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let pop = n * hw;
    let inv_pop = T::one() / T::from_f64(pop as f64);
    let inv_pop_m1 = T::one() / T::from_f64((pop - 1) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for i in 0..n {
            let plane = &input.data()[(i * c + ch) * hw..][..hw];
            sum += plane.iter().copied().sum::<T>();
        }
        let m = sum * inv_pop;
        let mut sq = T::zero();
        for i in 0..n {
            let plane = &input.data()[(i * c + ch) * hw..][..hw];
            for &x in plane {
                let d = x - m;
                sq += d * d;
            }
        }
        mean[ch] = m;
        var[ch] = sq * inv_pop_m1;
    }
    (mean, var)
}

fn normalize<T: Scalar>(
    input: &Tensor<T>,
    n: usize,
    c: usize,
    hw: usize,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    epsilon: T,
) -> Tensor<T> {
    let mut out = Tensor::zeros(input.shape());
    for ch in 0..c {
        let inv_std = T::one() / (var[ch] + epsilon).sqrt();
        let scale = gamma[ch] * inv_std;
        let shift = beta[ch] - mean[ch] * scale;
        for i in 0..n {
            let src = &input.data()[(i * c + ch) * hw..][..hw];
            let dst = &mut out.data_mut()[(i * c + ch) * hw..][..hw];
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = x * scale + shift;
            }
        }
    }
    out
}

/// Forward pass. `Train` returns a cache; `Eval` and `Recalibrate` do not.
/// `Eval` leaves the state bit-identical; `Train`/`Recalibrate` touch only
/// the moving statistics and never gamma/beta.
pub fn bn_forward<T: Scalar>(
    state: &mut BnState<T>,
    input: &Tensor<T>,
    mode: BnMode,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    const OP: &str = "bn_forward";
    if mode == BnMode::Eval {
        return Ok((bn_forward_eval(state, input)?, None));
    }
    let (n, c, h, w) = input.dims4(OP)?;
    state.check_channels(OP, c)?;
    let hw = h * w;
    let pop = n * hw;
    if pop < 2 {
        return Err(Error::InvalidArgument(format!(
            "bn_forward: population {pop} too small in {mode:?} mode (variance needs >= 2 values per channel)"
        )));
    }

    let (mean, var) = batch_stats(input, n, c, hw);
    let out = normalize(input, n, c, hw, &mean, &var, &state.gamma, &state.beta, state.epsilon);

    let m = state.momentum;
    let one_minus = T::one() - m;
    for ch in 0..c {
        state.moving_mean[ch] = m * state.moving_mean[ch] + one_minus * mean[ch];
        state.moving_var[ch] = m * state.moving_var[ch] + one_minus * var[ch];
    }

    let cache = if mode == BnMode::Train {
        let inv_std = var.iter().map(|&v| T::one() / (v + state.epsilon).sqrt()).collect();
        Some(BnCache {
            batch_mean: mean,
            inv_std,
            population: pop,
        })
    } else {
        None
    };
    crate::tensor::debug_check_finite(OP, out.data());
    Ok((out, cache))
}

/// Eval-mode forward against a shared (immutable) state.
pub fn bn_forward_eval<T: Scalar>(state: &BnState<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "bn_forward_eval";
    let (n, c, h, w) = input.dims4(OP)?;
    state.check_channels(OP, c)?;
    let out = normalize(
        input,
        n,
        c,
        h * w,
        &state.moving_mean,
        &state.moving_var,
        &state.gamma,
        &state.beta,
        state.epsilon,
    );
    crate::tensor::debug_check_finite(OP, out.data());
    Ok(out)
}

/// Backward pass from a Train-mode forward.
///
/// With pop = m, xhat_i = (x_i - mu)/sqrt(var + eps) and the unbiased variance,
/// the input gradient collapses to
/// `gamma * inv_std * (g_i - sum(g)/m - xhat_i * sum(g*xhat)/(m-1))`.
pub fn bn_backward<T: Scalar>(
    state: &BnState<T>,
    input: &Tensor<T>,
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    const OP: &str = "bn_backward";
    let (n, c, h, w) = input.dims4(OP)?;
    state.check_channels(OP, c)?;
    if grad_out.shape() != input.shape() {
        return Err(Error::shape(
            OP,
            format!("grad_out {:?} vs input {:?}", grad_out.shape(), input.shape()),
        ));
    }
    let hw = h * w;
    let pop = cache.population;
    debug_assert_eq!(pop, n * hw);

    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    let mut grad_input = Tensor::zeros(input.shape());
    let inv_pop = T::one() / T::from_f64(pop as f64);
    let inv_pop_m1 = T::one() / T::from_f64((pop - 1) as f64);

    for ch in 0..c {
        let mean = cache.batch_mean[ch];
        let inv_std = cache.inv_std[ch];
        // s1 = sum of gradients, s2 = sum of grad * xhat.
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for i in 0..n {
            let x = &input.data()[(i * c + ch) * hw..][..hw];
            let g = &grad_out.data()[(i * c + ch) * hw..][..hw];
            for (&xv, &gv) in x.iter().zip(g) {
                s1 += gv;
                s2 += gv * (xv - mean) * inv_std;
            }
        }
        grad_beta[ch] = s1;
        grad_gamma[ch] = s2;

        let scale = state.gamma[ch] * inv_std;
        let mean_g = s1 * inv_pop;
        let proj = s2 * inv_pop_m1;
        for i in 0..n {
            let x = &input.data()[(i * c + ch) * hw..][..hw];
            let g = &grad_out.data()[(i * c + ch) * hw..][..hw];
            let gi = &mut grad_input.data_mut()[(i * c + ch) * hw..][..hw];
            for ((d, &xv), &gv) in gi.iter_mut().zip(x).zip(g) {
                let xhat = (xv - mean) * inv_std;
                *d = scale * (gv - mean_g - xhat * proj);
            }
        }
    }
    crate::tensor::debug_check_finite(OP, grad_input.data());
    Ok((grad_input, grad_gamma, grad_beta))
}
