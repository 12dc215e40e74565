//! Pointwise, pooling, fully-connected, and loss kernels.

use super::{debug_check_finite, dot, matmul_atb_acc, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flattened per-sample feature count for a tensor whose leading dim is N.
fn features_per_sample<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    if t.shape().is_empty() {
        return Err(Error::shape(op, "zero-dimensional tensor"));
    }
    let n = t.shape()[0];
    let feat: usize = t.shape()[1..].iter().product();
    Ok((n, feat))
}

/// `input [N, in] * weight [out, in]^T (+ bias) -> [N, out]`.
/// Trailing input dims beyond the first are flattened, so `[N,C,H,W]`
/// activations feed in directly.
pub fn fc_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    const OP: &str = "fc_forward";
    let (n, in_feat) = features_per_sample(input, OP)?;
    let (out_feat, w_in) = weight.dims2(OP)?;
    if w_in != in_feat {
        return Err(Error::shape(
            OP,
            format!("input provides {in_feat} features, weight expects {w_in}"),
        ));
    }
    if let Some(b) = bias {
        if b.len() != out_feat {
            return Err(Error::shape(
                OP,
                format!("bias has {} entries, weight produces {out_feat}", b.len()),
            ));
        }
    }
    let mut out = Tensor::zeros(&[n, out_feat]);
    for i in 0..n {
        let x = &input.data()[i * in_feat..(i + 1) * in_feat];
        let row = &mut out.data_mut()[i * out_feat..(i + 1) * out_feat];
        for (o, cell) in row.iter_mut().enumerate() {
            let mut v = dot(x, &weight.data()[o * in_feat..(o + 1) * in_feat]);
            if let Some(b) = bias {
                v += b[o];
            }
            *cell = v;
        }
    }
    debug_check_finite(OP, out.data());
    Ok(out)
}

/// Gradients of [`fc_forward`]; `grad_bias` is always computed (callers on
/// bias-free layers simply drop it).
pub fn fc_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    const OP: &str = "fc_backward";
    let (n, in_feat) = features_per_sample(input, OP)?;
    let (out_feat, w_in) = weight.dims2(OP)?;
    if w_in != in_feat {
        return Err(Error::shape(
            OP,
            format!("input provides {in_feat} features, weight expects {w_in}"),
        ));
    }
    if grad_out.shape() != [n, out_feat] {
        return Err(Error::shape(
            OP,
            format!("grad_out is {:?}, want [{n}, {out_feat}]", grad_out.shape()),
        ));
    }

    // grad_input[n0] = grad_out[n0] * weight    ([out] x [out, in] -> [in])
    let mut grad_input = Tensor::zeros(input.shape());
    for i in 0..n {
        let go = &grad_out.data()[i * out_feat..(i + 1) * out_feat];
        let gi = &mut grad_input.data_mut()[i * in_feat..(i + 1) * in_feat];
        for (o, &g) in go.iter().enumerate() {
            let w_row = &weight.data()[o * in_feat..(o + 1) * in_feat];
            for (d, &wv) in gi.iter_mut().zip(w_row) {
                *d += g * wv;
            }
        }
    }

    // grad_weight = grad_out^T * input          ([out, N] x [N, in])
    let mut grad_weight = Tensor::zeros(weight.shape());
    matmul_atb_acc(
        grad_out.data(),
        input.data(),
        grad_weight.data_mut(),
        n,
        out_feat,
        in_feat,
    );

    let mut grad_bias = vec![T::zero(); out_feat];
    for i in 0..n {
        for (o, gb) in grad_bias.iter_mut().enumerate() {
            *gb += grad_out.data()[i * out_feat + o];
        }
    }

    debug_check_finite(OP, grad_input.data());
    debug_check_finite(OP, grad_weight.data());
    Ok((grad_input, grad_weight, grad_bias))
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("input {:?} vs grad_out {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(grad)
}

/// Fixed 2x2 window, stride 2. Odd trailing rows/columns are dropped. Returns
/// the pooled tensor plus, per output element, the flat index of the input
/// element that won (ties go to the first in row-major scan order).
pub fn maxpool2x2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "maxpool2x2_forward";
    let (n, c, h, w) = input.dims4(OP)?;
    let (h_out, w_out) = (h / 2, w / 2);
    if h_out == 0 || w_out == 0 {
        return Err(Error::shape(OP, format!("input {h}x{w} too small for a 2x2 window")));
    }
    let mut out = Tensor::zeros(&[n, c, h_out, w_out]);
    let mut argmax = vec![0usize; n * c * h_out * w_out];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            let plane = &input.data()[base..base + h * w];
            let obase = (i * c + ch) * h_out * w_out;
            for y in 0..h_out {
                for x in 0..w_out {
                    let mut best_idx = (2 * y) * w + 2 * x;
                    let mut best = plane[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * y + dy) * w + 2 * x + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                    out.data_mut()[obase + y * w_out + x] = best;
                    argmax[obase + y * w_out + x] = base + best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to the input element that won the forward max.
pub fn maxpool2x2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    const OP: &str = "maxpool2x2_backward";
    if argmax.len() != grad_out.numel() {
        return Err(Error::shape(
            OP,
            format!("{} argmax entries for {} gradients", argmax.len(), grad_out.numel()),
        ));
    }
    let mut grad_input = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        grad_input.data_mut()[idx] += g;
    }
    Ok(grad_input)
}

/// `[N,C,H,W] -> [N,C,1,1]`, mean over the spatial plane.
pub fn global_avgpool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "global_avgpool_forward";
    let (n, c, h, w) = input.dims4(OP)?;
    if h * w == 0 {
        return Err(Error::shape(OP, "empty spatial plane"));
    }
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    for i in 0..n {
        for ch in 0..c {
            let plane = &input.data()[(i * c + ch) * h * w..][..h * w];
            out.data_mut()[i * c + ch] = plane.iter().copied().sum::<T>() * inv;
        }
    }
    Ok(out)
}

pub fn global_avgpool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    const OP: &str = "global_avgpool_backward";
    if input_shape.len() != 4 {
        return Err(Error::shape(OP, format!("input shape {input_shape:?} not 4-D")));
    }
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if grad_out.numel() != n * c {
        return Err(Error::shape(
            OP,
            format!("grad_out {:?} does not match [{n},{c},1,1]", grad_out.shape()),
        ));
    }
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut grad_input = Tensor::zeros(input_shape);
    for i in 0..n {
        for ch in 0..c {
            let g = grad_out.data()[i * c + ch] * inv;
            grad_input.data_mut()[(i * c + ch) * h * w..][..h * w].fill(g);
        }
    }
    Ok(grad_input)
}

/// Mean cross-entropy over the batch plus the gradient w.r.t. the logits.
/// Logits may be `[N,K]` or `[N,K,1,1]`; rows are max-shifted before the exp
/// so large logits cannot overflow.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    const OP: &str = "softmax_cross_entropy";
    let (n, k) = features_per_sample(logits, OP)?;
    if labels.len() != n {
        return Err(Error::shape(
            OP,
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("softmax_cross_entropy: empty batch".into()));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut loss = T::zero();
    for i in 0..n {
        let label = labels[i];
        if label >= k {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {k} classes (sample {i})"
            )));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(row[0], |a, b| a.maximum(b));
        let mut denom = T::zero();
        for &z in row {
            denom += (z - max).exp();
        }
        loss += denom.ln() - (row[label] - max);
        let grow = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, g) in grow.iter_mut().enumerate() {
            let p = (row[j] - max).exp() / denom;
            *g = if j == label { (p - T::one()) * inv_n } else { p * inv_n };
        }
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric("softmax_cross_entropy produced a non-finite loss".into()));
    }
    debug_check_finite(OP, grad.data());
    Ok((loss, grad))
}
