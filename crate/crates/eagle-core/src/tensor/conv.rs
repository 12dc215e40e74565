//! 2-D convolution kernels (standard and depthwise).
//!
//! The standard conv is implemented as im2col + matmul so the hot loop is a
//! dense product; depthwise layers are cheap enough for direct loops. Both
//! accumulate in a fixed order, so identical inputs give bit-identical
//! outputs on every run of one build.

use super::{
    conv_out_dim, debug_check_finite, matmul_abt_acc, matmul_acc, matmul_atb_acc, Tensor,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Indices `i` in `[0, out_dim)` for which `i*stride + k_off - pad` lands
/// inside `[0, in_dim)`, as a half-open range.
fn valid_range(out_dim: usize, in_dim: usize, k_off: usize, stride: usize, pad: usize) -> (usize, usize) {
    let (s, p, k) = (stride as isize, pad as isize, k_off as isize);
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    let last = (in_dim as isize - 1 + p - k) / s;
    if last < lo {
        return (0, 0);
    }
    let hi = (last + 1).min(out_dim as isize);
    (lo as usize, hi as usize)
}

/// Unfold one sample into a `[c_in*kh*kw, h_out*w_out]` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    input: &[T],
    (c_in, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (h_out, w_out): (usize, usize),
    col: &mut [T],
) {
    let l = h_out * w_out;
    col.fill(T::zero());
    for c in 0..c_in {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            let (y_lo, y_hi) = valid_range(h_out, h, ky, stride, pad);
            for kx in 0..kw {
                let row = &mut col[((c * kh + ky) * kw + kx) * l..][..l];
                let (x_lo, x_hi) = valid_range(w_out, w, kx, stride, pad);
                for y in y_lo..y_hi {
                    let iy = y * stride + ky - pad;
                    let src = &plane[iy * w..(iy + 1) * w];
                    let dst = &mut row[y * w_out..][x_lo..x_hi];
                    if stride == 1 {
                        let start = x_lo + kx - pad;
                        dst.copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = src[(x_lo + j) * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one sample (adjoint of [`im2col`]).
#[allow(clippy::too_many_arguments)]
fn col2im_acc<T: Scalar>(
    col: &[T],
    (c_in, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (h_out, w_out): (usize, usize),
    out: &mut [T],
) {
    let l = h_out * w_out;
    for c in 0..c_in {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            let (y_lo, y_hi) = valid_range(h_out, h, ky, stride, pad);
            for kx in 0..kw {
                let row = &col[((c * kh + ky) * kw + kx) * l..][..l];
                let (x_lo, x_hi) = valid_range(w_out, w, kx, stride, pad);
                for y in y_lo..y_hi {
                    let iy = y * stride + ky - pad;
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    for x in x_lo..x_hi {
                        dst[x * stride + kx - pad] += row[y * w_out + x];
                    }
                }
            }
        }
    }
}

/// `input [N,C_in,H,W] * weight [C_out,C_in,Kh,Kw] -> [N,C_out,H',W']`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "conv2d_forward";
    let (n, c_in, h, w) = input.dims4(OP)?;
    let (c_out, w_cin, kh, kw) = weight.dims4(OP)?;
    if w_cin != c_in {
        return Err(Error::shape(
            OP,
            format!("input has {c_in} channels, weight expects {w_cin}"),
        ));
    }
    let h_out = conv_out_dim(OP, h, kh, stride, padding)?;
    let w_out = conv_out_dim(OP, w, kw, stride, padding)?;
    let (k, l) = (c_in * kh * kw, h_out * w_out);

    let mut out = Tensor::zeros(&[n, c_out, h_out, w_out]);
    let mut col = vec![T::zero(); k * l];
    for i in 0..n {
        im2col(
            &input.data()[i * c_in * h * w..][..c_in * h * w],
            (c_in, h, w),
            (kh, kw),
            stride,
            padding,
            (h_out, w_out),
            &mut col,
        );
        matmul_acc(
            weight.data(),
            &col,
            &mut out.data_mut()[i * c_out * l..][..c_out * l],
            c_out,
            k,
            l,
        );
    }
    debug_check_finite(OP, out.data());
    Ok(out)
}

/// Gradients of the conv w.r.t. its input and weight.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    const OP: &str = "conv2d_backward";
    let (n, c_in, h, w) = input.dims4(OP)?;
    let (c_out, w_cin, kh, kw) = weight.dims4(OP)?;
    if w_cin != c_in {
        return Err(Error::shape(
            OP,
            format!("input has {c_in} channels, weight expects {w_cin}"),
        ));
    }
    let h_out = conv_out_dim(OP, h, kh, stride, padding)?;
    let w_out = conv_out_dim(OP, w, kw, stride, padding)?;
    let (gn, gc, gh, gw) = grad_out.dims4(OP)?;
    if (gn, gc, gh, gw) != (n, c_out, h_out, w_out) {
        return Err(Error::shape(
            OP,
            format!(
                "grad_out is {:?}, forward output was [{n}, {c_out}, {h_out}, {w_out}]",
                grad_out.shape()
            ),
        ));
    }
    let (k, l) = (c_in * kh * kw, h_out * w_out);

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    let mut col = vec![T::zero(); k * l];
    let mut grad_col = vec![T::zero(); k * l];
    for i in 0..n {
        let in_n = &input.data()[i * c_in * h * w..][..c_in * h * w];
        let go_n = &grad_out.data()[i * c_out * l..][..c_out * l];
        im2col(in_n, (c_in, h, w), (kh, kw), stride, padding, (h_out, w_out), &mut col);
        matmul_abt_acc(go_n, &col, grad_weight.data_mut(), c_out, l, k);
        grad_col.fill(T::zero());
        matmul_atb_acc(weight.data(), go_n, &mut grad_col, c_out, k, l);
        col2im_acc(
            &grad_col,
            (c_in, h, w),
            (kh, kw),
            stride,
            padding,
            (h_out, w_out),
            &mut grad_input.data_mut()[i * c_in * h * w..][..c_in * h * w],
        );
    }
    debug_check_finite(OP, grad_input.data());
    debug_check_finite(OP, grad_weight.data());
    Ok((grad_input, grad_weight))
}

/// Depthwise conv: `input [N,C,H,W] * weight [C,1,Kh,Kw] -> [N,C,H',W']`,
/// channel `c` of the input convolved with kernel `c` only.
pub fn depthwise_conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    const OP: &str = "depthwise_conv2d_forward";
    let (n, c, h, w) = input.dims4(OP)?;
    let (wc, one, kh, kw) = weight.dims4(OP)?;
    if one != 1 || wc != c {
        return Err(Error::shape(
            OP,
            format!("weight {:?} does not match {c} input channels (want [{c},1,Kh,Kw])", weight.shape()),
        ));
    }
    let h_out = conv_out_dim(OP, h, kh, stride, padding)?;
    let w_out = conv_out_dim(OP, w, kw, stride, padding)?;

    let mut out = Tensor::zeros(&[n, c, h_out, w_out]);
    for i in 0..n {
        for ch in 0..c {
            let plane = &input.data()[(i * c + ch) * h * w..][..h * w];
            let kernel = &weight.data()[ch * kh * kw..][..kh * kw];
            let dst = &mut out.data_mut()[(i * c + ch) * h_out * w_out..][..h_out * w_out];
            for ky in 0..kh {
                let (y_lo, y_hi) = valid_range(h_out, h, ky, stride, padding);
                for kx in 0..kw {
                    let wv = kernel[ky * kw + kx];
                    let (x_lo, x_hi) = valid_range(w_out, w, kx, stride, padding);
                    for y in y_lo..y_hi {
                        let iy = y * stride + ky - padding;
                        let src = &plane[iy * w..(iy + 1) * w];
                        let drow = &mut dst[y * w_out..][x_lo..x_hi];
                        for (j, d) in drow.iter_mut().enumerate() {
                            *d += wv * src[(x_lo + j) * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    debug_check_finite(OP, out.data());
    Ok(out)
}

/// Gradients of the depthwise conv w.r.t. its input and weight.
pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    const OP: &str = "depthwise_conv2d_backward";
    let (n, c, h, w) = input.dims4(OP)?;
    let (wc, one, kh, kw) = weight.dims4(OP)?;
    if one != 1 || wc != c {
        return Err(Error::shape(
            OP,
            format!("weight {:?} does not match {c} input channels", weight.shape()),
        ));
    }
    let h_out = conv_out_dim(OP, h, kh, stride, padding)?;
    let w_out = conv_out_dim(OP, w, kw, stride, padding)?;
    if grad_out.shape() != [n, c, h_out, w_out] {
        return Err(Error::shape(
            OP,
            format!(
                "grad_out is {:?}, forward output was [{n}, {c}, {h_out}, {w_out}]",
                grad_out.shape()
            ),
        ));
    }

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    for i in 0..n {
        for ch in 0..c {
            let plane = &input.data()[(i * c + ch) * h * w..][..h * w];
            let kernel = &weight.data()[ch * kh * kw..][..kh * kw];
            let go = &grad_out.data()[(i * c + ch) * h_out * w_out..][..h_out * w_out];
            for ky in 0..kh {
                let (y_lo, y_hi) = valid_range(h_out, h, ky, stride, padding);
                for kx in 0..kw {
                    let wv = kernel[ky * kw + kx];
                    let (x_lo, x_hi) = valid_range(w_out, w, kx, stride, padding);
                    let mut wg = T::zero();
                    for y in y_lo..y_hi {
                        let iy = y * stride + ky - padding;
                        let go_row = &go[y * w_out..][x_lo..x_hi];
                        let gi = &mut grad_input.data_mut()
                            [(i * c + ch) * h * w + iy * w..][..w];
                        for (j, &g) in go_row.iter().enumerate() {
                            // Add the window offset before subtracting the
                            // padding; valid_range only guarantees the sum
                            // is non-negative, not each term.
                            let ix = (x_lo + j) * stride + kx - padding;
                            wg += g * plane[iy * w + ix];
                            gi[ix] += wv * g;
                        }
                    }
                    grad_weight.data_mut()[ch * kh * kw + ky * kw + kx] += wg;
                }
            }
        }
    }
    debug_check_finite(OP, grad_input.data());
    debug_check_finite(OP, grad_weight.data());
    Ok((grad_input, grad_weight))
}
