//! Sequential network description, parameter storage, and the graph walker.
//!
//! A network is a flat list of layers; shapes, FLOPs, and pruning all derive
//! from the same [`NetworkSpec`]. FLOPs are counted as multiply-accumulates:
//! convolutions and FC layers carry all of them, BN/activations/pooling count
//! as zero (their cost is noise next to the convs at any scale we run).

mod arch;
mod forward;
mod params;

pub use arch::{micro_cnn, micro_mobilenet};
pub use forward::{backward, forward, forward_eval, forward_train, Tape};
pub use params::{Grads, LayerGrads, LayerParams, ParamStore};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// One kernel per channel; channel count is inherited from the producer
    /// upstream, which is why these layers are never independently prunable.
    DepthwiseConv {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    /// Fixed 2x2 window, stride 2.
    MaxPool,
    GlobalAvgPool,
    Fc {
        in_features: usize,
        out_features: usize,
        /// Only FC layers not followed by BN carry a bias (BN's beta subsumes
        /// it otherwise). In practice: the classifier head.
        bias: bool,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::DepthwiseConv { .. } => "depthwise_conv",
            LayerKind::BatchNorm { .. } => "batch_norm",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool => "max_pool",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Fc { .. } => "fc",
        }
    }

    /// Does this layer carry a weight tensor?
    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv { .. } | LayerKind::DepthwiseConv { .. } | LayerKind::Fc { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub prunable: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        LayerSpec { kind, prunable: false }
    }

    pub fn prunable(kind: LayerKind) -> Self {
        LayerSpec { kind, prunable: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[C, H, W]` of one input sample.
    pub input_shape: [usize; 3],
    pub class_count: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Output shape `[C, H, W]` of every layer in order, starting from
    /// `input_shape`. Fails on any geometric inconsistency.
    pub fn infer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut cur = self.input_shape;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let err = |detail: String| {
                Err(Error::shape(
                    "infer_shapes",
                    format!("layer {idx} ({}): {detail}", layer.kind.name()),
                ))
            };
            cur = match &layer.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if *in_channels != cur[0] {
                        return err(format!("expects {in_channels} channels, gets {}", cur[0]));
                    }
                    let h = conv_dim(cur[1], *kernel, *stride, *padding);
                    let w = conv_dim(cur[2], *kernel, *stride, *padding);
                    match (h, w) {
                        (Some(h), Some(w)) => [*out_channels, h, w],
                        _ => return err(format!("kernel {kernel} does not fit {}x{}", cur[1], cur[2])),
                    }
                }
                LayerKind::DepthwiseConv {
                    channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if *channels != cur[0] {
                        return err(format!("expects {channels} channels, gets {}", cur[0]));
                    }
                    let h = conv_dim(cur[1], *kernel, *stride, *padding);
                    let w = conv_dim(cur[2], *kernel, *stride, *padding);
                    match (h, w) {
                        (Some(h), Some(w)) => [*channels, h, w],
                        _ => return err(format!("kernel {kernel} does not fit {}x{}", cur[1], cur[2])),
                    }
                }
                LayerKind::BatchNorm { channels } => {
                    if *channels != cur[0] {
                        return err(format!("normalizes {channels} channels, gets {}", cur[0]));
                    }
                    cur
                }
                LayerKind::Relu => cur,
                LayerKind::MaxPool => {
                    if cur[1] < 2 || cur[2] < 2 {
                        return err(format!("plane {}x{} too small to pool", cur[1], cur[2]));
                    }
                    [cur[0], cur[1] / 2, cur[2] / 2]
                }
                LayerKind::GlobalAvgPool => [cur[0], 1, 1],
                LayerKind::Fc {
                    in_features,
                    out_features,
                    ..
                } => {
                    let flat = cur[0] * cur[1] * cur[2];
                    if *in_features != flat {
                        return err(format!("expects {in_features} features, gets {flat}"));
                    }
                    [*out_features, 1, 1]
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Structural validation: shapes must infer, the net must end in a
    /// classifier FC of `class_count` outputs, bias flags must respect the
    /// BN-subsumption rule, and prunable marks must sit on layers that can
    /// actually be pruned.
    pub fn validate(&self) -> Result<()> {
        self.infer_shapes()?;
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::Unsupported("empty network".into()))?;
        match &last.kind {
            LayerKind::Fc { out_features, .. } if *out_features == self.class_count => {}
            _ => {
                return Err(Error::Unsupported(format!(
                    "network must end in an FC classifier with {} outputs",
                    self.class_count
                )))
            }
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            let followed_by_bn = matches!(
                self.layers.get(idx + 1).map(|l| &l.kind),
                Some(LayerKind::BatchNorm { .. })
            );
            if let LayerKind::Fc { bias, .. } = layer.kind {
                if bias && followed_by_bn {
                    return Err(Error::Unsupported(format!(
                        "layer {idx}: FC bias is redundant under the following BN"
                    )));
                }
            }
            if layer.prunable {
                match layer.kind {
                    LayerKind::Conv { .. } => {}
                    LayerKind::Fc { .. } if idx + 1 < self.layers.len() => {}
                    _ => {
                        return Err(Error::Unsupported(format!(
                            "layer {idx} ({}) cannot be marked prunable",
                            layer.kind.name()
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Indices of prunable layers, in network order. The pruning-strategy
    /// ratio vector is indexed parallel to this list.
    pub fn prunable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.prunable)
            .map(|(i, _)| i)
            .collect()
    }

    /// Out-channel (or hidden-unit) count of a prunable layer.
    pub fn out_channels(&self, layer: usize) -> Option<usize> {
        match self.layers.get(layer)?.kind {
            LayerKind::Conv { out_channels, .. } => Some(out_channels),
            LayerKind::DepthwiseConv { channels, .. } => Some(channels),
            LayerKind::Fc { out_features, .. } => Some(out_features),
            _ => None,
        }
    }
}

fn conv_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Multiply-accumulate counts per layer for a single input sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopsReport {
    pub per_layer: Vec<u64>,
    pub total: u64,
}

pub fn count_flops(spec: &NetworkSpec) -> Result<FlopsReport> {
    let shapes = spec.infer_shapes()?;
    let mut per_layer = Vec::with_capacity(spec.layers.len());
    for (idx, layer) in spec.layers.iter().enumerate() {
        let out = &shapes[idx];
        let macs = match &layer.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel * out[1] * out[2]) as u64,
            LayerKind::DepthwiseConv { channels, kernel, .. } => {
                (channels * kernel * kernel * out[1] * out[2]) as u64
            }
            LayerKind::Fc {
                in_features,
                out_features,
                ..
            } => (in_features * out_features) as u64,
            _ => 0,
        };
        per_layer.push(macs);
    }
    let total = per_layer.iter().sum();
    Ok(FlopsReport { per_layer, total })
}

/// Learnable parameter count from the spec alone (weights, biases, BN
/// gamma/beta; moving statistics are state, not parameters).
pub fn count_params(spec: &NetworkSpec) -> u64 {
    spec.layers
        .iter()
        .map(|layer| match &layer.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel) as u64,
            LayerKind::DepthwiseConv { channels, kernel, .. } => (channels * kernel * kernel) as u64,
            LayerKind::BatchNorm { channels } => 2 * *channels as u64,
            LayerKind::Fc {
                in_features,
                out_features,
                bias,
            } => (in_features * out_features + if *bias { *out_features } else { 0 }) as u64,
            _ => 0,
        })
        .sum()
}

/// Histogram of absolute weight magnitudes for one weighted layer. A value v
/// lands in bin i when `edges[i] <= v < edges[i+1]`; values outside the edge
/// range are not counted.
pub fn weight_histogram<T: Scalar>(
    params: &ParamStore<T>,
    layer_index: usize,
    edges: &[f64],
) -> Result<Vec<usize>> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "weight_histogram: bin edges must be strictly increasing, at least two".into(),
        ));
    }
    let weight = match params.layers.get(layer_index) {
        Some(LayerParams::Conv { weight })
        | Some(LayerParams::DepthwiseConv { weight })
        | Some(LayerParams::Fc { weight, .. }) => weight,
        Some(_) => {
            return Err(Error::InvalidArgument(format!(
                "weight_histogram: layer {layer_index} carries no weight tensor"
            )))
        }
        None => {
            return Err(Error::InvalidArgument(format!(
                "weight_histogram: layer {layer_index} out of range"
            )))
        }
    };
    let mut counts = vec![0usize; edges.len() - 1];
    for &w in weight.data() {
        let v = w.to_f64().abs();
        // Bins are few; a linear scan is clearer than a partition_point dance.
        for (i, pair) in edges.windows(2).enumerate() {
            if v >= pair[0] && v < pair[1] {
                counts[i] += 1;
                break;
            }
        }
    }
    Ok(counts)
}
