//! Dataset ingestion, deterministic splits, and batching.
//!
//! Loaders scale pixels to [0,1] and standardize with per-channel mean/std
//! supplied by the caller (normalization constants belong to experiment
//! config, not code). Splits are index-set operations on an already-loaded
//! split, seeded and stratified so the same seed always carves the same sets.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Subval,
    Test,
    Recalib,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T: Scalar> {
    /// `[N, C, H, W]`, already standardized.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub role: SplitRole,
}

impl<T: Scalar> DatasetSplit<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of a single sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn check_labels(&self, class_count: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= class_count) {
            None => Ok(()),
            Some(i) => Err(Error::DataFormat {
                path: format!("{:?} split", self.role).into(),
                detail: format!("label {} at index {i} is out of range for {class_count} classes", self.labels[i]),
            }),
        }
    }

    /// New split holding the samples at `indices`, in the given order.
    pub fn gather(&self, indices: &[usize], role: SplitRole) -> Result<DatasetSplit<T>> {
        let sample = self.images.numel() / self.len().max(1);
        let mut images = Vec::with_capacity(indices.len() * sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Split(format!(
                    "index {i} out of range for a split of {}",
                    self.len()
                )));
            }
            images.extend_from_slice(&self.images.data()[i * sample..(i + 1) * sample]);
            labels.push(self.labels[i]);
        }
        let shape = self.sample_shape();
        let images = Tensor::from_vec(&[indices.len(), shape[0], shape[1], shape[2]], images)?;
        Ok(DatasetSplit { images, labels, role })
    }
}

/// Per-channel standardization constants, applied after the [0,1] scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::InvalidArgument(format!(
                "normalization has {}/{} channel constants, data has {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("normalization std must be positive".into()));
        }
        Ok(())
    }
}

/// Reads a dataset file, folding I/O failures into a data error that names
/// the path; a bare OS error with no file name is useless in a run that
/// touches several dataset files.
fn read_data_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::DataFormat {
        path: path.to_path_buf(),
        detail: format!("read failed: {e}"),
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            detail: format!("truncated header: expected at least {end} bytes, got {}", bytes.len()),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

fn standardize<T: Scalar>(
    pixels: &[u8],
    shape: &[usize],
    norm: &Normalization,
) -> Result<Tensor<T>> {
    let channels = shape[1];
    norm.check(channels)?;
    let plane = shape[2] * shape[3];
    let data = pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let c = (i / plane) % channels;
            T::from_f64((p as f64 / 255.0 - norm.mean[c]) / norm.std[c])
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Reads an IDX image/label file pair (the MNIST container format:
/// big-endian magic 0x00000803 for N x rows x cols u8 images, 0x00000801 for
/// labels).
pub fn load_idx<T: Scalar>(
    images_path: &Path,
    labels_path: &Path,
    norm: &Normalization,
    role: SplitRole,
) -> Result<DatasetSplit<T>> {
    let bytes = read_data_file(images_path)?;
    let magic = be_u32(&bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::DataFormat {
            path: images_path.to_path_buf(),
            detail: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(&bytes, 4, images_path)? as usize;
    let rows = be_u32(&bytes, 8, images_path)? as usize;
    let cols = be_u32(&bytes, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::DataFormat {
            path: images_path.to_path_buf(),
            detail: format!("truncated image data: expected {expected} bytes, got {}", bytes.len()),
        });
    }

    let label_bytes = read_data_file(labels_path)?;
    let magic = be_u32(&label_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::DataFormat {
            path: labels_path.to_path_buf(),
            detail: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = be_u32(&label_bytes, 4, labels_path)? as usize;
    let expected = 8 + label_count;
    if label_bytes.len() != expected {
        return Err(Error::DataFormat {
            path: labels_path.to_path_buf(),
            detail: format!("truncated label data: expected {expected} bytes, got {}", label_bytes.len()),
        });
    }
    if label_count != count {
        return Err(Error::DataFormat {
            path: labels_path.to_path_buf(),
            detail: format!("{label_count} labels for {count} images"),
        });
    }

    let images = standardize(&bytes[16..], &[count, 1, rows, cols], norm)?;
    let labels = label_bytes[8..].iter().map(|&b| b as usize).collect();
    Ok(DatasetSplit { images, labels, role })
}

/// Reads CIFAR-10 binary batches (one label byte plus 3072 image bytes per
/// record, channel-major RGB) and concatenates them in path order.
pub fn load_cifar_binary<T: Scalar>(
    paths: &[impl AsRef<Path>],
    norm: &Normalization,
    role: SplitRole,
) -> Result<DatasetSplit<T>> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("load_cifar_binary: no paths given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = read_data_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::DataFormat {
                path: path.to_path_buf(),
                detail: format!(
                    "{} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
                    bytes.len()
                ),
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            let label = record[0] as usize;
            if label >= CIFAR_CLASSES {
                return Err(Error::DataFormat {
                    path: path.to_path_buf(),
                    detail: format!("label byte {label} at record {} exceeds {CIFAR_CLASSES} classes", labels.len()),
                });
            }
            labels.push(label);
            pixels.extend_from_slice(&record[1..]);
        }
    }
    let count = labels.len();
    let images = standardize(&pixels, &[count, 3, 32, 32], norm)?;
    Ok(DatasetSplit { images, labels, role })
}

/// Deterministic class-conditioned Gaussian blobs: class c gets a blob
/// center on a circle and a class-specific width, each sample jitters the
/// center slightly and adds pixel noise. Both cues matter: the center makes
/// classes linearly separable on raw pixels, the width keeps them separable
/// even for translation-invariant models (anything ending in global average
/// pooling sees only the width). Useful as a dependency-free dataset for
/// tests.
pub fn synth_blobs<T: Scalar>(
    class_count: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<DatasetSplit<T>> {
    if class_count == 0 || per_class == 0 || image_size == 0 {
        return Err(Error::InvalidArgument("synth_blobs: all sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f64, 0.02).expect("fixed sigma is valid");
    let n = class_count * per_class;
    let mut images = Vec::with_capacity(n * image_size * image_size);
    let mut labels = Vec::with_capacity(n);
    let mid = (image_size as f64 - 1.0) / 2.0;
    let radius = image_size as f64 / 4.0;
    let base_sigma = image_size as f64 / 8.0;
    for i in 0..n {
        let class = i % class_count;
        let angle = std::f64::consts::TAU * class as f64 / class_count as f64;
        let spread = 0.7 + 0.6 * class as f64 / (class_count - 1).max(1) as f64;
        let sigma = base_sigma * spread;
        let cx = mid + radius * angle.cos() + rng.random_range(-1.0..1.0);
        let cy = mid + radius * angle.sin() + rng.random_range(-1.0..1.0);
        let amplitude = rng.random_range(0.8..1.0);
        for y in 0..image_size {
            for x in 0..image_size {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = amplitude * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                images.push(T::from_f64(v.clamp(0.0, 1.0)));
            }
        }
        labels.push(class);
    }
    let images = Tensor::from_vec(&[n, 1, image_size, image_size], images)?;
    Ok(DatasetSplit {
        images,
        labels,
        role: SplitRole::Train,
    })
}

/// The three working splits carved from a loaded training split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet<T: Scalar> {
    /// Training data minus the sub-validation samples.
    pub train: DatasetSplit<T>,
    /// Held-out slice of training data used to score candidates.
    pub subval: DatasetSplit<T>,
    /// Statistics-recalibration subset, drawn from `train` (overlap with
    /// training is fine: it is training data reused for statistics).
    pub recalib: DatasetSplit<T>,
}

/// Carves stratified, seeded subsets out of a training split. Per class:
/// `floor(count * subval_fraction)` samples become sub-validation and are
/// removed from training; `floor(count * recalib_fraction)` samples (counted
/// against the ORIGINAL class size) are then drawn from what remains.
pub fn make_splits<T: Scalar>(
    source: &DatasetSplit<T>,
    subval_fraction: f64,
    recalib_fraction: f64,
    seed: u64,
) -> Result<SplitSet<T>> {
    if source.is_empty() {
        return Err(Error::Split("cannot split an empty dataset".into()));
    }
    if subval_fraction < 0.0 || recalib_fraction < 0.0 || subval_fraction + recalib_fraction >= 1.0 {
        return Err(Error::Split(format!(
            "fractions must be non-negative and sum below 1: got subval {subval_fraction}, \
             recalib {recalib_fraction}"
        )));
    }
    let class_count = source.labels.iter().max().copied().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &label) in source.labels.iter().enumerate() {
        by_class[label].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut subval_idx = Vec::new();
    let mut recalib_idx = Vec::new();
    for (class, indices) in by_class.iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        let n = indices.len();
        let n_subval = (n as f64 * subval_fraction).floor() as usize;
        let n_recalib = (n as f64 * recalib_fraction).floor() as usize;
        if n_subval >= n {
            return Err(Error::Split(format!(
                "subval fraction {subval_fraction} leaves class {class} without training samples"
            )));
        }
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        subval_idx.extend_from_slice(&shuffled[..n_subval]);
        let remaining = &shuffled[n_subval..];
        train_idx.extend_from_slice(remaining);
        if n_recalib > remaining.len() {
            return Err(Error::Split(format!(
                "recalib fraction {recalib_fraction} needs {n_recalib} samples from class {class}, \
                 only {} remain after the subval carve",
                remaining.len()
            )));
        }
        let mut pool = remaining.to_vec();
        pool.shuffle(&mut rng);
        recalib_idx.extend_from_slice(&pool[..n_recalib]);
    }
    train_idx.sort_unstable();
    subval_idx.sort_unstable();
    recalib_idx.sort_unstable();

    debug_assert!(train_idx.iter().all(|i| subval_idx.binary_search(i).is_err()));
    Ok(SplitSet {
        train: source.gather(&train_idx, SplitRole::Train)?,
        subval: source.gather(&subval_idx, SplitRole::Subval)?,
        recalib: source.gather(&recalib_idx, SplitRole::Recalib)?,
    })
}

/// Iterates a split in mini-batches. `shuffle_seed: Some(s)` visits samples
/// in a seeded random order (training); `None` keeps file order (evaluation).
/// The final short batch is yielded too, so every sample is seen once.
pub struct BatchIter<'a, T: Scalar> {
    split: &'a DatasetSplit<T>,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a, T: Scalar> BatchIter<'a, T> {
    pub fn new(split: &'a DatasetSplit<T>, batch_size: usize, shuffle_seed: Option<u64>) -> Self {
        let mut order: Vec<usize> = (0..split.len()).collect();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        BatchIter {
            split,
            order,
            batch_size: batch_size.max(1),
            cursor: 0,
        }
    }
}

impl<T: Scalar> Iterator for BatchIter<'_, T> {
    type Item = (Tensor<T>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = &self.order[self.cursor..end];
        self.cursor = end;
        let batch = self
            .split
            .gather(indices, self.split.role)
            .expect("batch indices come from 0..len");
        Some((batch.images, batch.labels))
    }
}
