//! Turns the `[dataset]` config section into in-memory splits.

use eagle_core::data::{
    load_cifar_binary, load_idx, make_splits, synth_blobs, DatasetSplit, Normalization, SplitRole,
    SplitSet, CIFAR_CLASSES,
};
use eagle_core::{Error, Result, Scalar};

use crate::config::{DatasetKind, DatasetSection};

pub struct LoadedData<T: Scalar> {
    pub splits: SplitSet<T>,
    pub test: DatasetSplit<T>,
    pub input_shape: [usize; 3],
    pub class_count: usize,
}

fn normalization(ds: &DatasetSection, channels: usize) -> Result<Normalization> {
    match (&ds.mean, &ds.std) {
        (None, None) => Ok(Normalization::identity(channels)),
        (Some(mean), Some(std)) => Ok(Normalization {
            mean: mean.clone(),
            std: std.clone(),
        }),
        _ => Err(Error::InvalidArgument(
            "dataset.mean and dataset.std must be given together or not at all".into(),
        )),
    }
}

pub fn load_dataset<T: Scalar>(ds: &DatasetSection) -> Result<LoadedData<T>> {
    let (train_source, test, class_count) = match ds.kind {
        DatasetKind::Idx => {
            let norm = normalization(ds, 1)?;
            let paths = [
                ds.train_images.as_ref(),
                ds.train_labels.as_ref(),
                ds.test_images.as_ref(),
                ds.test_labels.as_ref(),
            ];
            let [ti, tl, vi, vl] = paths.map(|p| p.expect("validated at config load"));
            let train = load_idx::<T>(ti, tl, &norm, SplitRole::Train)?;
            let test = load_idx::<T>(vi, vl, &norm, SplitRole::Test)?;
            (train, test, ds.classes)
        }
        DatasetKind::Cifar => {
            let norm = normalization(ds, 3)?;
            let train = load_cifar_binary::<T>(&ds.train_bins, &norm, SplitRole::Train)?;
            let test = load_cifar_binary::<T>(&ds.test_bins, &norm, SplitRole::Test)?;
            (train, test, CIFAR_CLASSES)
        }
        DatasetKind::Blobs => {
            let train = synth_blobs::<T>(ds.classes, ds.per_class, ds.image_size, ds.seed)?;
            let mut test = synth_blobs::<T>(
                ds.classes,
                ds.test_per_class,
                ds.image_size,
                ds.seed.wrapping_add(1),
            )?;
            test.role = SplitRole::Test;
            (train, test, ds.classes)
        }
    };
    train_source.check_labels(class_count)?;
    test.check_labels(class_count)?;
    if train_source.sample_shape() != test.sample_shape() {
        return Err(Error::InvalidArgument(format!(
            "train and test sample shapes differ: {:?} vs {:?}",
            train_source.sample_shape(),
            test.sample_shape()
        )));
    }
    let input_shape = train_source.sample_shape();
    let splits = make_splits(&train_source, ds.subval_fraction, ds.recalib_fraction, ds.seed)?;
    Ok(LoadedData {
        splits,
        test,
        input_shape,
        class_count,
    })
}
