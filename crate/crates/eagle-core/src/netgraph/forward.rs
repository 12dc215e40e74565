//! Walks a network forward and backward.
//!
//! Activations stay 4-D (`[N, C, H, W]`) between layers; FC outputs are
//! viewed as `[N, F, 1, 1]` so normalization and pooling compose uniformly.
//! The public entry points return logits as `[N, class_count]`.

use crate::batchnorm::{bn_backward, bn_forward, bn_forward_eval, BnCache, BnMode};
use crate::error::{Error, Result};
use crate::netgraph::{Grads, LayerGrads, LayerKind, LayerParams, NetworkSpec, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{
    conv2d_backward, conv2d_forward, depthwise_conv2d_backward, depthwise_conv2d_forward,
    fc_backward, fc_forward, global_avgpool_backward, global_avgpool_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward, relu_forward, Tensor,
};

/// Everything the backward walk needs, recorded by [`forward_train`].
pub struct Tape<T: Scalar> {
    /// Input activation of layer i (4-D).
    layer_inputs: Vec<Tensor<T>>,
    bn_caches: Vec<Option<BnCache<T>>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Scalar> Tape<T> {
    /// Input activation recorded for each layer, in spec order.
    ///
    /// Useful for inspecting what a layer saw during the pass, e.g. to
    /// confirm that no ReLU input or pooling window sits on a kink when
    /// validating gradients with finite differences.
    pub fn layer_inputs(&self) -> &[Tensor<T>] {
        &self.layer_inputs
    }

    /// Flat argmax indices recorded by each max-pooling layer (spec order,
    /// `None` for layers that are not max pools).
    pub fn pool_argmax(&self) -> &[Option<Vec<usize>>] {
        &self.pool_argmax
    }
}

fn check_input<T: Scalar>(spec: &NetworkSpec, input: &Tensor<T>) -> Result<()> {
    let (_, c, h, w) = input.dims4("network forward")?;
    if [c, h, w] != spec.input_shape {
        return Err(Error::shape(
            "network forward",
            format!(
                "input {:?} does not match spec input shape {:?}",
                &input.shape()[1..],
                spec.input_shape
            ),
        ));
    }
    Ok(())
}

fn conv_geometry(kind: &LayerKind) -> (usize, usize) {
    match kind {
        LayerKind::Conv { stride, padding, .. } | LayerKind::DepthwiseConv { stride, padding, .. } => {
            (*stride, *padding)
        }
        _ => unreachable!("conv_geometry on non-conv layer"),
    }
}

fn logits_view<T: Scalar>(act: Tensor<T>, spec: &NetworkSpec) -> Result<Tensor<T>> {
    let (n, c, h, w) = act.dims4("network forward")?;
    if c != spec.class_count || h != 1 || w != 1 {
        return Err(Error::shape(
            "network forward",
            format!("final activation {:?} is not [N, {}, 1, 1]", act.shape(), spec.class_count),
        ));
    }
    act.into_shape(&[n, c])
}

/// Inference pass: BN uses moving statistics, nothing is mutated.
pub fn forward_eval<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_input(spec, input)?;
    let n = input.shape()[0];
    let mut act = input.clone();
    for (idx, layer) in spec.layers.iter().enumerate() {
        act = apply_eval(&layer.kind, &params.layers[idx], act, n)?;
    }
    logits_view(act, spec)
}

fn apply_eval<T: Scalar>(
    kind: &LayerKind,
    params: &LayerParams<T>,
    act: Tensor<T>,
    n: usize,
) -> Result<Tensor<T>> {
    Ok(match (kind, params) {
        (LayerKind::Conv { .. }, LayerParams::Conv { weight }) => {
            let (stride, padding) = conv_geometry(kind);
            conv2d_forward(&act, weight, stride, padding)?
        }
        (LayerKind::DepthwiseConv { .. }, LayerParams::DepthwiseConv { weight }) => {
            let (stride, padding) = conv_geometry(kind);
            depthwise_conv2d_forward(&act, weight, stride, padding)?
        }
        (LayerKind::BatchNorm { .. }, LayerParams::BatchNorm(bn)) => bn_forward_eval(bn, &act)?,
        (LayerKind::Relu, _) => relu_forward(&act),
        (LayerKind::MaxPool, _) => maxpool2x2_forward(&act)?.0,
        (LayerKind::GlobalAvgPool, _) => global_avgpool_forward(&act)?,
        (LayerKind::Fc { out_features, .. }, LayerParams::Fc { weight, bias }) => {
            fc_forward(&act, weight, bias.as_deref())?.into_shape(&[n, *out_features, 1, 1])?
        }
        _ => {
            return Err(Error::shape(
                "network forward",
                format!("parameter slot does not match layer kind {}", kind.name()),
            ))
        }
    })
}

/// Statistics-updating pass without a tape. `BnMode::Eval` is equivalent to
/// [`forward_eval`]; `Train` and `Recalibrate` normalize each BN layer by the
/// batch and fold the batch statistics into its moving estimates.
pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    input: &Tensor<T>,
    mode: BnMode,
) -> Result<Tensor<T>> {
    if mode == BnMode::Eval {
        return forward_eval(spec, params, input);
    }
    check_input(spec, input)?;
    let n = input.shape()[0];
    let mut act = input.clone();
    for (idx, layer) in spec.layers.iter().enumerate() {
        act = match (&layer.kind, &mut params.layers[idx]) {
            (LayerKind::BatchNorm { .. }, LayerParams::BatchNorm(bn)) => {
                bn_forward(bn, &act, mode)?.0
            }
            (kind, slot) => apply_eval(kind, slot, act, n)?,
        };
    }
    logits_view(act, spec)
}

/// Training pass: BN batch statistics, moving updates, and a tape for
/// [`backward`].
pub fn forward_train<T: Scalar>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, Tape<T>)> {
    check_input(spec, input)?;
    let n = input.shape()[0];
    let count = spec.layers.len();
    let mut tape = Tape {
        layer_inputs: Vec::with_capacity(count),
        bn_caches: vec![None; count],
        pool_argmax: (0..count).map(|_| None).collect(),
    };
    let mut act = input.clone();
    for (idx, layer) in spec.layers.iter().enumerate() {
        let next = match (&layer.kind, &mut params.layers[idx]) {
            (LayerKind::BatchNorm { .. }, LayerParams::BatchNorm(bn)) => {
                let (out, cache) = bn_forward(bn, &act, BnMode::Train)?;
                tape.bn_caches[idx] = cache;
                out
            }
            (LayerKind::MaxPool, _) => {
                let (out, argmax) = maxpool2x2_forward(&act)?;
                tape.pool_argmax[idx] = Some(argmax);
                out
            }
            (kind, slot) => apply_eval(kind, slot, act.clone(), n)?,
        };
        tape.layer_inputs.push(act);
        act = next;
    }
    Ok((logits_view(act, spec)?, tape))
}

/// Backpropagates `grad_logits` (`[N, class_count]`, typically from the
/// cross-entropy gradient) through the taped pass. Returns parameter
/// gradients; the input gradient is discarded at the boundary.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    tape: &Tape<T>,
    grad_logits: &Tensor<T>,
) -> Result<Grads<T>> {
    let (n, k) = grad_logits.dims2("network backward")?;
    if k != spec.class_count || tape.layer_inputs.len() != spec.layers.len() {
        return Err(Error::shape(
            "network backward",
            format!("grad shape {:?} or tape does not match the network", grad_logits.shape()),
        ));
    }
    let mut grads = params.zero_grads();
    let mut grad = grad_logits.clone().into_shape(&[n, k, 1, 1])?;
    for (idx, layer) in spec.layers.iter().enumerate().rev() {
        let input = &tape.layer_inputs[idx];
        grad = match (&layer.kind, &params.layers[idx]) {
            (LayerKind::Conv { .. }, LayerParams::Conv { weight }) => {
                let (stride, padding) = conv_geometry(&layer.kind);
                let (gi, gw) = conv2d_backward(input, weight, &grad, stride, padding)?;
                grads.layers[idx] = LayerGrads::Conv { weight: gw };
                gi
            }
            (LayerKind::DepthwiseConv { .. }, LayerParams::DepthwiseConv { weight }) => {
                let (stride, padding) = conv_geometry(&layer.kind);
                let (gi, gw) = depthwise_conv2d_backward(input, weight, &grad, stride, padding)?;
                grads.layers[idx] = LayerGrads::DepthwiseConv { weight: gw };
                gi
            }
            (LayerKind::BatchNorm { .. }, LayerParams::BatchNorm(bn)) => {
                let cache = tape.bn_caches[idx].as_ref().ok_or_else(|| {
                    Error::shape("network backward", format!("layer {idx}: no BN cache on tape"))
                })?;
                let (gi, gg, gb) = bn_backward(bn, input, cache, &grad)?;
                grads.layers[idx] = LayerGrads::BatchNorm { gamma: gg, beta: gb };
                gi
            }
            (LayerKind::Relu, _) => relu_backward(input, &grad)?,
            (LayerKind::MaxPool, _) => {
                let argmax = tape.pool_argmax[idx].as_ref().ok_or_else(|| {
                    Error::shape("network backward", format!("layer {idx}: no pool argmax on tape"))
                })?;
                maxpool2x2_backward(input.shape(), argmax, &grad)?
            }
            (LayerKind::GlobalAvgPool, _) => global_avgpool_backward(input.shape(), &grad)?,
            (LayerKind::Fc { out_features, .. }, LayerParams::Fc { weight, bias }) => {
                let grad2d = grad.into_shape(&[n, *out_features])?;
                let (gi, gw, gb) = fc_backward(input, weight, &grad2d)?;
                grads.layers[idx] = LayerGrads::Fc {
                    weight: gw,
                    bias: bias.as_ref().map(|_| gb),
                };
                gi
            }
            _ => {
                return Err(Error::shape(
                    "network backward",
                    format!("parameter slot does not match layer kind {}", layer.kind.name()),
                ))
            }
        };
    }
    Ok(grads)
}
