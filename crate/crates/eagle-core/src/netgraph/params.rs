//! Parameter and gradient storage, one slot per layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batchnorm::BnState;
use crate::error::{Error, Result};
use crate::netgraph::{LayerKind, NetworkSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T: Scalar> {
    Conv { weight: Tensor<T> },
    DepthwiseConv { weight: Tensor<T> },
    BatchNorm(BnState<T>),
    Fc { weight: Tensor<T>, bias: Option<Vec<T>> },
    /// Activations and pooling carry nothing.
    Stateless,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Seeded weight initialization: convolutions draw from U(-b, b) with
    /// b = sqrt(6 / fan_in) (the ReLU-gain Kaiming-uniform variant), FC
    /// layers from U(-b, b) with b = 1 / sqrt(fan_in) (the linear-layer
    /// convention, which keeps fresh classifier logits near zero); biases
    /// start at zero, BN at identity. All draws happen in f64 so f32 and
    /// f64 stores built from the same seed describe the same network.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            layers.push(match &layer.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let bound = (6.0 / (in_channels * kernel * kernel) as f64).sqrt();
                    let weight = draw_uniform(
                        &mut rng,
                        &[*out_channels, *in_channels, *kernel, *kernel],
                        bound,
                    );
                    LayerParams::Conv { weight }
                }
                LayerKind::DepthwiseConv { channels, kernel, .. } => {
                    let bound = (6.0 / (kernel * kernel) as f64).sqrt();
                    let weight =
                        draw_uniform(&mut rng, &[*channels, 1, *kernel, *kernel], bound);
                    LayerParams::DepthwiseConv { weight }
                }
                LayerKind::BatchNorm { channels } => LayerParams::BatchNorm(BnState::new(*channels)),
                LayerKind::Fc {
                    in_features,
                    out_features,
                    bias,
                } => {
                    let bound = 1.0 / (*in_features as f64).sqrt();
                    let weight =
                        draw_uniform(&mut rng, &[*out_features, *in_features], bound);
                    let bias = bias.then(|| vec![T::zero(); *out_features]);
                    LayerParams::Fc { weight, bias }
                }
                LayerKind::Relu | LayerKind::MaxPool | LayerKind::GlobalAvgPool => {
                    LayerParams::Stateless
                }
            });
        }
        Ok(ParamStore { layers })
    }

    /// Zero-filled gradient buffers shaped like this store.
    pub fn zero_grads(&self) -> Grads<T> {
        let layers = self
            .layers
            .iter()
            .map(|p| match p {
                LayerParams::Conv { weight } => LayerGrads::Conv {
                    weight: Tensor::zeros(weight.shape()),
                },
                LayerParams::DepthwiseConv { weight } => LayerGrads::DepthwiseConv {
                    weight: Tensor::zeros(weight.shape()),
                },
                LayerParams::BatchNorm(bn) => LayerGrads::BatchNorm {
                    gamma: vec![T::zero(); bn.channels()],
                    beta: vec![T::zero(); bn.channels()],
                },
                LayerParams::Fc { weight, bias } => LayerGrads::Fc {
                    weight: Tensor::zeros(weight.shape()),
                    bias: bias.as_ref().map(|b| vec![T::zero(); b.len()]),
                },
                LayerParams::Stateless => LayerGrads::None,
            })
            .collect();
        Grads { layers }
    }

    /// Checks that stored shapes agree with the spec. Used after loading a
    /// checkpoint, where the two travel separately.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::shape(
                "check_against",
                format!(
                    "store has {} layers, spec has {}",
                    self.layers.len(),
                    spec.layers.len()
                ),
            ));
        }
        for (idx, (params, layer)) in self.layers.iter().zip(&spec.layers).enumerate() {
            let ok = match (params, &layer.kind) {
                (
                    LayerParams::Conv { weight },
                    LayerKind::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        ..
                    },
                ) => weight.shape() == [*out_channels, *in_channels, *kernel, *kernel],
                (LayerParams::DepthwiseConv { weight }, LayerKind::DepthwiseConv { channels, kernel, .. }) => {
                    weight.shape() == [*channels, 1, *kernel, *kernel]
                }
                (LayerParams::BatchNorm(bn), LayerKind::BatchNorm { channels }) => {
                    bn.channels() == *channels
                }
                (
                    LayerParams::Fc { weight, bias },
                    LayerKind::Fc {
                        in_features,
                        out_features,
                        bias: has_bias,
                    },
                ) => {
                    weight.shape() == [*out_features, *in_features]
                        && bias.is_some() == *has_bias
                        && bias.as_ref().map_or(true, |b| b.len() == *out_features)
                }
                (
                    LayerParams::Stateless,
                    LayerKind::Relu | LayerKind::MaxPool | LayerKind::GlobalAvgPool,
                ) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::shape(
                    "check_against",
                    format!("layer {idx} ({}) does not match the spec", layer.kind.name()),
                ));
            }
        }
        Ok(())
    }
}

fn draw_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("draw_uniform: shape/data length disagree")
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads<T: Scalar> {
    Conv { weight: Tensor<T> },
    DepthwiseConv { weight: Tensor<T> },
    BatchNorm { gamma: Vec<T>, beta: Vec<T> },
    Fc { weight: Tensor<T>, bias: Option<Vec<T>> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T: Scalar> {
    pub layers: Vec<LayerGrads<T>>,
}
