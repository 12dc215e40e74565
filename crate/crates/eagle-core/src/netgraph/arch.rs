//! Built-in desk-scale architectures.

use crate::error::{Error, Result};
use crate::netgraph::{LayerKind, LayerSpec, NetworkSpec};

/// Plain CNN: one Conv(3x3, s1, p1) - BN - ReLU - MaxPool stage per entry in
/// `widths`, then GlobalAvgPool and an FC classifier. Every conv is prunable.
///
/// Each stage halves the spatial plane, so the input must be at least
/// 2^len(widths) on both sides.
pub fn micro_cnn(input_shape: [usize; 3], class_count: usize, widths: &[usize]) -> Result<NetworkSpec> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(Error::InvalidArgument(
            "micro_cnn: widths must be non-empty and positive".into(),
        ));
    }
    let mut layers = Vec::new();
    let mut channels = input_shape[0];
    for &width in widths {
        layers.push(LayerSpec::prunable(LayerKind::Conv {
            in_channels: channels,
            out_channels: width,
            kernel: 3,
            stride: 1,
            padding: 1,
        }));
        layers.push(LayerSpec::new(LayerKind::BatchNorm { channels: width }));
        layers.push(LayerSpec::new(LayerKind::Relu));
        layers.push(LayerSpec::new(LayerKind::MaxPool));
        channels = width;
    }
    layers.push(LayerSpec::new(LayerKind::GlobalAvgPool));
    layers.push(LayerSpec::new(LayerKind::Fc {
        in_features: channels,
        out_features: class_count,
        bias: true,
    }));
    let spec = NetworkSpec {
        input_shape,
        class_count,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Depthwise-separable CNN: a standard conv stem, then one block per entry in
/// `widths[1..]`, each a DepthwiseConv(3x3) - BN - ReLU followed by a
/// pointwise Conv(1x1) - BN - ReLU. Blocks alternate stride 1 and stride 2
/// depthwise convs (starting with 1) so the plane shrinks as channels grow.
/// Pointwise convs and the stem are prunable; depthwise layers inherit their
/// channel count from the producer above and are not.
pub fn micro_mobilenet(
    input_shape: [usize; 3],
    class_count: usize,
    widths: &[usize],
) -> Result<NetworkSpec> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidArgument(
            "micro_mobilenet: need a stem width plus at least one block width".into(),
        ));
    }
    let mut layers = vec![
        LayerSpec::prunable(LayerKind::Conv {
            in_channels: input_shape[0],
            out_channels: widths[0],
            kernel: 3,
            stride: 1,
            padding: 1,
        }),
        LayerSpec::new(LayerKind::BatchNorm { channels: widths[0] }),
        LayerSpec::new(LayerKind::Relu),
    ];
    let mut channels = widths[0];
    for (block, &width) in widths[1..].iter().enumerate() {
        let stride = if block % 2 == 1 { 2 } else { 1 };
        layers.push(LayerSpec::new(LayerKind::DepthwiseConv {
            channels,
            kernel: 3,
            stride,
            padding: 1,
        }));
        layers.push(LayerSpec::new(LayerKind::BatchNorm { channels }));
        layers.push(LayerSpec::new(LayerKind::Relu));
        layers.push(LayerSpec::prunable(LayerKind::Conv {
            in_channels: channels,
            out_channels: width,
            kernel: 1,
            stride: 1,
            padding: 0,
        }));
        layers.push(LayerSpec::new(LayerKind::BatchNorm { channels: width }));
        layers.push(LayerSpec::new(LayerKind::Relu));
        channels = width;
    }
    layers.push(LayerSpec::new(LayerKind::GlobalAvgPool));
    layers.push(LayerSpec::new(LayerKind::Fc {
        in_features: channels,
        out_features: class_count,
        bias: true,
    }));
    let spec = NetworkSpec {
        input_shape,
        class_count,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}
