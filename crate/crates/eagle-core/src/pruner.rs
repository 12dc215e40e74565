//! Filter-importance ranking and structural surgery: turns a network plus a
//! layer-wise ratio vector into a smaller, runnable network.
//!
//! Surgery is two-pass: filter rankings are computed from the ORIGINAL
//! parameters for every prunable layer first, then all slices are applied.
//! Downstream coupling (BN channels, depthwise layers, the next layer's
//! input slices) follows each pruned layer's keep set; the classifier's
//! output dimension is never touched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{count_flops, LayerKind, LayerParams, NetworkSpec, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceCriterion {
    L1Norm,
    L2Norm,
}

/// One pruning ratio per prunable layer (parallel to
/// [`NetworkSpec::prunable_layers`]), plus the FLOPs ratio the vector
/// realizes on its network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningStrategy {
    pub ratios: Vec<f64>,
    pub realized_flops_ratio: f64,
}

impl PruningStrategy {
    pub fn new(spec: &NetworkSpec, ratios: Vec<f64>) -> Result<Self> {
        let realized_flops_ratio = strategy_flops_ratio(spec, &ratios)?;
        Ok(PruningStrategy {
            ratios,
            realized_flops_ratio,
        })
    }
}

fn check_ratios(spec: &NetworkSpec, ratios: &[f64]) -> Result<Vec<usize>> {
    let prunable = spec.prunable_layers();
    if ratios.len() != prunable.len() {
        return Err(Error::InvalidArgument(format!(
            "strategy has {} ratios for {} prunable layers",
            ratios.len(),
            prunable.len()
        )));
    }
    for (&layer, &r) in prunable.iter().zip(ratios) {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "ratio {r} for layer {layer} would leave no filters (need 0 <= r < 1)"
            )));
        }
    }
    Ok(prunable)
}

/// floor(r * count): how many filters a ratio removes from a layer.
fn removed_count(count: usize, ratio: f64) -> usize {
    (ratio * count as f64).floor() as usize
}

/// Channel/feature bookkeeping for one walk over the layers: how many
/// channels the current activation has in the pruned net vs the original.
struct ChannelTrack {
    kept: usize,
    orig: usize,
}

/// The pruned network's spec, by pure shape arithmetic (no parameters are
/// touched). Used both for surgery and for scoring candidate strategies
/// cheaply during search.
pub fn pruned_spec(spec: &NetworkSpec, ratios: &[f64]) -> Result<NetworkSpec> {
    let prunable = check_ratios(spec, ratios)?;
    let ratio_of = |layer: usize| -> f64 {
        prunable
            .iter()
            .position(|&l| l == layer)
            .map_or(0.0, |slot| ratios[slot])
    };
    let mut track = ChannelTrack {
        kept: spec.input_shape[0],
        orig: spec.input_shape[0],
    };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let kind = match &layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let kept_out = out_channels - removed_count(*out_channels, ratio_of(idx));
                let kind = LayerKind::Conv {
                    in_channels: track.kept,
                    out_channels: kept_out,
                    kernel: *kernel,
                    stride: *stride,
                    padding: *padding,
                };
                track = ChannelTrack { kept: kept_out, orig: *out_channels };
                kind
            }
            LayerKind::DepthwiseConv {
                kernel,
                stride,
                padding,
                ..
            } => LayerKind::DepthwiseConv {
                channels: track.kept,
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
            },
            LayerKind::BatchNorm { .. } => LayerKind::BatchNorm { channels: track.kept },
            LayerKind::Relu => LayerKind::Relu,
            LayerKind::MaxPool => LayerKind::MaxPool,
            LayerKind::GlobalAvgPool => LayerKind::GlobalAvgPool,
            LayerKind::Fc {
                in_features,
                out_features,
                bias,
            } => {
                // Features per surviving channel: the spatial plane size at
                // this point, unchanged by pruning.
                let block = in_features / track.orig;
                let kept_out = out_features - removed_count(*out_features, ratio_of(idx));
                let kind = LayerKind::Fc {
                    in_features: track.kept * block,
                    out_features: kept_out,
                    bias: *bias,
                };
                track = ChannelTrack { kept: kept_out, orig: *out_features };
                kind
            }
        };
        layers.push(crate::netgraph::LayerSpec {
            kind,
            prunable: layer.prunable,
        });
    }
    let pruned = NetworkSpec {
        input_shape: spec.input_shape,
        class_count: spec.class_count,
        layers,
    };
    pruned.validate()?;
    Ok(pruned)
}

/// FLOPs of the pruned network relative to the original, in (0, 1].
pub fn strategy_flops_ratio(spec: &NetworkSpec, ratios: &[f64]) -> Result<f64> {
    let original = count_flops(spec)?.total;
    let pruned = count_flops(&pruned_spec(spec, ratios)?)?.total;
    if original == 0 {
        return Err(Error::InvalidArgument("network has zero FLOPs".into()));
    }
    Ok(pruned as f64 / original as f64)
}

/// Filter indices of one prunable layer ordered least important first:
/// ascending by L1 or L2 norm over each filter's full kernel, ties broken by
/// lower original index.
pub fn rank_filters<T: Scalar>(
    params: &ParamStore<T>,
    layer_index: usize,
    criterion: ImportanceCriterion,
) -> Result<Vec<usize>> {
    let weight = match params.layers.get(layer_index) {
        Some(LayerParams::Conv { weight }) | Some(LayerParams::Fc { weight, .. }) => weight,
        Some(_) => {
            return Err(Error::InvalidArgument(format!(
                "layer {layer_index} is not a prunable kind"
            )))
        }
        None => {
            return Err(Error::InvalidArgument(format!(
                "layer {layer_index} out of range"
            )))
        }
    };
    let filters = weight.shape()[0];
    let span = weight.numel() / filters;
    let mut norms: Vec<(f64, usize)> = (0..filters)
        .map(|f| {
            let kernel = &weight.data()[f * span..(f + 1) * span];
            let norm = match criterion {
                ImportanceCriterion::L1Norm => kernel.iter().map(|w| w.to_f64().abs()).sum(),
                ImportanceCriterion::L2Norm => {
                    kernel.iter().map(|w| w.to_f64().powi(2)).sum::<f64>().sqrt()
                }
            };
            (norm, f)
        })
        .collect();
    norms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(norms.into_iter().map(|(_, f)| f).collect())
}

/// Ascending indices of the filters a layer keeps under `ratio`.
fn keep_set<T: Scalar>(
    params: &ParamStore<T>,
    layer_index: usize,
    count: usize,
    ratio: f64,
    criterion: ImportanceCriterion,
) -> Result<Vec<usize>> {
    let removed = removed_count(count, ratio);
    let ranking = rank_filters(params, layer_index, criterion)?;
    let mut kept: Vec<usize> = ranking[removed..].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

fn slice_rows<T: Scalar>(weight: &Tensor<T>, keep: &[usize]) -> Tensor<T> {
    let span = weight.numel() / weight.shape()[0];
    let mut data = Vec::with_capacity(keep.len() * span);
    for &f in keep {
        data.extend_from_slice(&weight.data()[f * span..(f + 1) * span]);
    }
    let mut shape = weight.shape().to_vec();
    shape[0] = keep.len();
    Tensor::from_vec(&shape, data).expect("row slice preserves span")
}

/// Keeps the given input channels of a conv weight `[O, I, Kh, Kw]`.
fn slice_conv_inputs<T: Scalar>(weight: &Tensor<T>, keep: &[usize]) -> Tensor<T> {
    let s = weight.shape();
    let (o, i, span) = (s[0], s[1], s[2] * s[3]);
    let mut data = Vec::with_capacity(o * keep.len() * span);
    for f in 0..o {
        for &c in keep {
            let start = (f * i + c) * span;
            data.extend_from_slice(&weight.data()[start..start + span]);
        }
    }
    Tensor::from_vec(&[o, keep.len(), s[2], s[3]], data).expect("input slice preserves span")
}

/// Keeps the input-feature blocks of an FC weight `[O, I]` that correspond
/// to surviving channels, `block` features per channel.
fn slice_fc_inputs<T: Scalar>(weight: &Tensor<T>, keep: &[usize], block: usize) -> Tensor<T> {
    let s = weight.shape();
    let (o, i) = (s[0], s[1]);
    let mut data = Vec::with_capacity(o * keep.len() * block);
    for row in 0..o {
        for &c in keep {
            let start = row * i + c * block;
            data.extend_from_slice(&weight.data()[start..start + block]);
        }
    }
    Tensor::from_vec(&[o, keep.len() * block], data).expect("fc slice preserves block")
}

fn slice_vec<T: Copy>(v: &[T], keep: &[usize]) -> Vec<T> {
    keep.iter().map(|&i| v[i]).collect()
}

/// Removes the lowest-ranked filters of every prunable layer per the
/// strategy, slicing coupled state (BN channels, depthwise kernels, the next
/// layer's inputs) to match. Returns a network that passes full shape
/// inference and evaluates without the removed filters.
pub fn apply_strategy<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    strategy: &PruningStrategy,
    criterion: ImportanceCriterion,
) -> Result<(NetworkSpec, ParamStore<T>)> {
    params.check_against(spec)?;
    let prunable = check_ratios(spec, &strategy.ratios)?;
    let new_spec = pruned_spec(spec, &strategy.ratios)?;

    // Pass 1: keep sets from the original parameters.
    let mut keeps: Vec<Option<Vec<usize>>> = vec![None; spec.layers.len()];
    for (slot, &layer) in prunable.iter().enumerate() {
        let count = spec
            .out_channels(layer)
            .expect("prunable layers have an output width");
        keeps[layer] = Some(keep_set(params, layer, count, strategy.ratios[slot], criterion)?);
    }

    // Pass 2: surgery, tracking which input channels of each layer survive.
    // `input_keep: None` means every channel survived.
    let mut input_keep: Option<Vec<usize>> = None;
    let mut orig_channels = spec.input_shape[0];
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        match (&layer.kind, &params.layers[idx]) {
            (LayerKind::Conv { out_channels, .. }, LayerParams::Conv { weight }) => {
                let mut w = weight.clone();
                if let Some(keep) = &input_keep {
                    w = slice_conv_inputs(&w, keep);
                }
                if let Some(keep) = &keeps[idx] {
                    w = slice_rows(&w, keep);
                }
                layers.push(LayerParams::Conv { weight: w });
                input_keep = keeps[idx].clone();
                orig_channels = *out_channels;
            }
            (LayerKind::DepthwiseConv { .. }, LayerParams::DepthwiseConv { weight }) => {
                let w = match &input_keep {
                    Some(keep) => slice_rows(weight, keep),
                    None => weight.clone(),
                };
                layers.push(LayerParams::DepthwiseConv { weight: w });
            }
            (LayerKind::BatchNorm { .. }, LayerParams::BatchNorm(bn)) => {
                let bn = match &input_keep {
                    Some(keep) => {
                        let mut sliced = crate::batchnorm::BnState::new(keep.len());
                        sliced.gamma = slice_vec(&bn.gamma, keep);
                        sliced.beta = slice_vec(&bn.beta, keep);
                        sliced.moving_mean = slice_vec(&bn.moving_mean, keep);
                        sliced.moving_var = slice_vec(&bn.moving_var, keep);
                        sliced.epsilon = bn.epsilon;
                        sliced.momentum = bn.momentum;
                        sliced
                    }
                    None => bn.clone(),
                };
                layers.push(LayerParams::BatchNorm(bn));
            }
            (
                LayerKind::Fc {
                    in_features,
                    out_features,
                    ..
                },
                LayerParams::Fc { weight, bias },
            ) => {
                let mut w = weight.clone();
                if let Some(keep) = &input_keep {
                    let block = in_features / orig_channels;
                    w = slice_fc_inputs(&w, keep, block);
                }
                let mut b = bias.clone();
                if let Some(keep) = &keeps[idx] {
                    w = slice_rows(&w, keep);
                    b = b.map(|bias| slice_vec(&bias, keep));
                }
                layers.push(LayerParams::Fc { weight: w, bias: b });
                input_keep = keeps[idx].clone();
                orig_channels = *out_features;
            }
            (_, LayerParams::Stateless) => layers.push(LayerParams::Stateless),
            _ => {
                return Err(Error::shape(
                    "apply_strategy",
                    format!("layer {idx}: parameter slot does not match the spec"),
                ))
            }
        }
    }
    let new_params = ParamStore { layers };
    new_params.check_against(&new_spec)?;
    Ok((new_spec, new_params))
}
