//! Model persistence.
//!
//! A checkpoint is a single binary file: an 8-byte magic, a format version,
//! a JSON header (the network description plus, for pruned models, the
//! strategy that produced them), per-layer parameter blobs, and a SHA-256
//! trailer over everything before it. Blob payloads are little-endian f32
//! regardless of the in-memory scalar type, so round-trips are bit-exact in
//! f32 mode and f32-resolution in f64 mode.
//!
//! BN epsilon and momentum are process-wide defaults, never mutated
//! persistently, and are therefore not stored; loading reconstructs them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use eagle_core::netgraph::{LayerKind, LayerParams, NetworkSpec, ParamStore};
use eagle_core::pruner::PruningStrategy;
use eagle_core::tensor::Tensor;
use eagle_core::{Error, Result, Scalar};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"EGLCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const SHA256_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    strategy: Option<PruningStrategy>,
}

#[derive(Debug, Clone)]
pub struct LoadedCheckpoint<T: Scalar> {
    pub spec: NetworkSpec,
    pub params: ParamStore<T>,
    pub strategy: Option<PruningStrategy>,
}

fn ckpt_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn push_blob<T: Scalar>(buf: &mut Vec<u8>, shape: &[usize], data: &[T]) {
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
    }
}

fn push_tensor<T: Scalar>(buf: &mut Vec<u8>, t: &Tensor<T>) {
    push_blob(buf, t.shape(), t.data());
}

/// Serializes a model (and optionally the pruning strategy that shaped it)
/// to `path`. The byte stream is a pure function of its inputs, so saving
/// the same model twice yields identical files.
pub fn save<T: Scalar>(
    path: &Path,
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    strategy: Option<&PruningStrategy>,
) -> Result<()> {
    params.check_against(spec)?;
    let header = serde_json::to_vec(&Header {
        spec: spec.clone(),
        strategy: strategy.cloned(),
    })
    .map_err(|e| ckpt_err(path, format!("header serialization failed: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for layer in &params.layers {
        match layer {
            LayerParams::Conv { weight } | LayerParams::DepthwiseConv { weight } => {
                push_tensor(&mut buf, weight)
            }
            LayerParams::BatchNorm(bn) => {
                let c = &[bn.channels()];
                push_blob(&mut buf, c, &bn.gamma);
                push_blob(&mut buf, c, &bn.beta);
                push_blob(&mut buf, c, &bn.moving_mean);
                push_blob(&mut buf, c, &bn.moving_var);
            }
            LayerParams::Fc { weight, bias } => {
                push_tensor(&mut buf, weight);
                if let Some(bias) = bias {
                    push_blob(&mut buf, &[bias.len()], bias);
                }
            }
            LayerParams::Stateless => {}
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, &buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ckpt_err(
                self.path,
                format!(
                    "file truncated: needed {n} bytes at offset {}, {} remain",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            ));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob<T: Scalar>(&mut self, layer: usize, expect: &[usize]) -> Result<Vec<T>> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(ckpt_err(
                self.path,
                format!("layer {layer}: implausible blob rank {ndim}"),
            ));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u32()? as usize);
        }
        if dims != expect {
            return Err(ckpt_err(
                self.path,
                format!("layer {layer}: blob shape {dims:?} does not match the network description's {expect:?}"),
            ));
        }
        let count: usize = dims.iter().product();
        let raw = self.take(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect())
    }
}

/// Loads a checkpoint, verifying magic, version, integrity checksum, and
/// that every blob's shape matches the embedded network description.
pub fn load<T: Scalar>(path: &Path) -> Result<LoadedCheckpoint<T>> {
    let buf = std::fs::read(path).map_err(|e| ckpt_err(path, format!("read failed: {e}")))?;
    if buf.len() < CHECKPOINT_MAGIC.len() + 4 + 8 + SHA256_LEN {
        return Err(ckpt_err(path, format!("file too short ({} bytes)", buf.len())));
    }
    let (body, trailer) = buf.split_at(buf.len() - SHA256_LEN);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(ckpt_err(path, "integrity checksum mismatch"));
    }

    let mut r = Reader {
        buf: body,
        pos: 0,
        path,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(ckpt_err(path, "not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| ckpt_err(path, format!("header parse failed: {e}")))?;
    header.spec.validate()?;

    let mut layers = Vec::with_capacity(header.spec.layers.len());
    for (idx, layer) in header.spec.layers.iter().enumerate() {
        let params = match layer.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => LayerParams::Conv {
                weight: Tensor::from_vec(
                    &[out_channels, in_channels, kernel, kernel],
                    r.blob(idx, &[out_channels, in_channels, kernel, kernel])?,
                )?,
            },
            LayerKind::DepthwiseConv { channels, kernel, .. } => LayerParams::DepthwiseConv {
                weight: Tensor::from_vec(
                    &[channels, 1, kernel, kernel],
                    r.blob(idx, &[channels, 1, kernel, kernel])?,
                )?,
            },
            LayerKind::BatchNorm { channels } => {
                let mut bn = eagle_core::batchnorm::BnState::<T>::new(channels);
                bn.gamma = r.blob(idx, &[channels])?;
                bn.beta = r.blob(idx, &[channels])?;
                bn.moving_mean = r.blob(idx, &[channels])?;
                bn.moving_var = r.blob(idx, &[channels])?;
                LayerParams::BatchNorm(bn)
            }
            LayerKind::Fc {
                in_features,
                out_features,
                bias,
            } => LayerParams::Fc {
                weight: Tensor::from_vec(
                    &[out_features, in_features],
                    r.blob(idx, &[out_features, in_features])?,
                )?,
                bias: if bias {
                    Some(r.blob(idx, &[out_features])?)
                } else {
                    None
                },
            },
            LayerKind::Relu | LayerKind::MaxPool | LayerKind::GlobalAvgPool => LayerParams::Stateless,
        };
        layers.push(params);
    }
    if r.pos != body.len() {
        return Err(ckpt_err(
            path,
            format!("{} unexpected trailing bytes after the last blob", body.len() - r.pos),
        ));
    }
    let params = ParamStore { layers };
    params.check_against(&header.spec)?;
    Ok(LoadedCheckpoint {
        spec: header.spec,
        params,
        strategy: header.strategy,
    })
}
