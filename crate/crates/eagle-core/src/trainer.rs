//! SGD training and fine-tuning loops.
//!
//! One loop is single-threaded and fully seeded: batch order, initialization,
//! and update order are all deterministic, so the same config produces the
//! same parameters bit for bit. Divergence surfaces as a typed error naming
//! the epoch, batch, and first non-finite layer (in debug builds the tensor
//! kernels' finiteness assertions usually fire earlier, which is fine: that
//! is a development aid, this is the production guard).

use serde::{Deserialize, Serialize};

use crate::data::{BatchIter, DatasetSplit};
use crate::error::{Error, Result};
use crate::netgraph::{
    backward, forward_eval, forward_train, Grads, LayerGrads, LayerParams, NetworkSpec, ParamStore,
};
use crate::scalar::Scalar;
use crate::tensor::{softmax_cross_entropy, Tensor};

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// 1-based epochs after which the learning rate is multiplied by
    /// `lr_decay` (empty for a constant rate).
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale training defaults: 10 epochs, batch 128, lr 0.05 decaying
    /// x0.1 after 60% and 85% of the epochs.
    pub fn desk_train(seed: u64) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            base_lr: 0.05,
            lr_milestones: vec![6, 8],
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed,
        }
    }

    /// Desk-scale fine-tuning defaults: 2 epochs at a constant 1e-3, other
    /// hyperparameters inherited from training.
    pub fn desk_finetune(seed: u64) -> Self {
        TrainConfig {
            epochs: 2,
            batch_size: 128,
            base_lr: 1e-3,
            lr_milestones: Vec::new(),
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.base_lr >= 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument(
                "base_lr must be non-negative and lr_decay positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "momentum must be in [0,1) and weight_decay non-negative".into(),
            ));
        }
        let increasing = self.lr_milestones.windows(2).all(|w| w[0] < w[1]);
        if !increasing || self.lr_milestones.iter().any(|&m| m == 0 || m >= self.epochs.max(1)) {
            return Err(Error::InvalidArgument(
                "lr_milestones must be strictly increasing and inside (0, epochs)".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch index.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| epoch > m).count();
        self.base_lr * self.lr_decay.powi(drops as i32)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub lr: f64,
}

/// Top-1 accuracy of the model on a split, BN in Eval mode, deterministic.
pub fn evaluate_accuracy<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    split: &DatasetSplit<T>,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Split(format!("cannot evaluate on an empty {:?} split", split.role)));
    }
    let mut hits = 0usize;
    for (images, labels) in BatchIter::new(split, EVAL_BATCH, None) {
        let logits = forward_eval(spec, params, &images)?;
        hits += count_hits(&logits, &labels);
    }
    Ok(hits as f64 / split.len() as f64)
}

fn count_hits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(row, &label)| {
            let scores = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0;
            for (i, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = i;
                }
            }
            best == label
        })
        .count()
}

/// Names the first layer holding a non-finite parameter, for divergence
/// diagnostics.
fn first_non_finite_layer<T: Scalar>(spec: &NetworkSpec, params: &ParamStore<T>) -> Option<String> {
    for (idx, layer) in params.layers.iter().enumerate() {
        let bad = match layer {
            LayerParams::Conv { weight } | LayerParams::DepthwiseConv { weight } => {
                weight.data().iter().any(|v| !v.is_finite())
            }
            LayerParams::BatchNorm(bn) => bn
                .gamma
                .iter()
                .chain(&bn.beta)
                .chain(&bn.moving_mean)
                .chain(&bn.moving_var)
                .any(|v| !v.is_finite()),
            LayerParams::Fc { weight, bias } => {
                weight.data().iter().any(|v| !v.is_finite())
                    || bias.as_ref().is_some_and(|b| b.iter().any(|v| !v.is_finite()))
            }
            LayerParams::Stateless => false,
        };
        if bad {
            return Some(format!("layer {idx} ({})", spec.layers[idx].kind.name()));
        }
    }
    None
}

fn divergence_error<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    epoch: usize,
    batch: usize,
    loss: f64,
) -> Error {
    let location = first_non_finite_layer(spec, params)
        .unwrap_or_else(|| "the logits (no stored parameter is non-finite yet)".into());
    Error::Numeric(format!(
        "training diverged at epoch {epoch}, batch {batch}: loss = {loss}; \
         first non-finite values in {location}"
    ))
}

fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    velocity: &mut Grads<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let lr = T::from_f64(lr);
    let m = T::from_f64(momentum);
    let wd = T::from_f64(weight_decay);
    let update = |w: &mut [T], g: &[T], v: &mut [T]| {
        for i in 0..w.len() {
            v[i] = m * v[i] + g[i] + wd * w[i];
            w[i] = w[i] - lr * v[i];
        }
    };
    for (slot, (grad, vel)) in params
        .layers
        .iter_mut()
        .zip(grads.layers.iter().zip(velocity.layers.iter_mut()))
    {
        match (slot, grad, vel) {
            (
                LayerParams::Conv { weight },
                LayerGrads::Conv { weight: g },
                LayerGrads::Conv { weight: v },
            )
            | (
                LayerParams::DepthwiseConv { weight },
                LayerGrads::DepthwiseConv { weight: g },
                LayerGrads::DepthwiseConv { weight: v },
            ) => update(weight.data_mut(), g.data(), v.data_mut()),
            (
                LayerParams::BatchNorm(bn),
                LayerGrads::BatchNorm { gamma: gg, beta: gb },
                LayerGrads::BatchNorm { gamma: vg, beta: vb },
            ) => {
                update(&mut bn.gamma, gg, vg);
                update(&mut bn.beta, gb, vb);
            }
            (
                LayerParams::Fc { weight, bias },
                LayerGrads::Fc { weight: gw, bias: gb },
                LayerGrads::Fc { weight: vw, bias: vb },
            ) => {
                update(weight.data_mut(), gw.data(), vw.data_mut());
                if let (Some(b), Some(gb), Some(vb)) = (bias, gb, vb) {
                    update(b, gb, vb);
                }
            }
            _ => {}
        }
    }
}

/// Runs SGD for `config.epochs` epochs, mutating `params` in place. Returns
/// the per-epoch log; `on_epoch` fires after each epoch with the fresh
/// record and the current parameter state (for streaming output and
/// per-epoch inspection such as weight histograms).
pub fn train<T: Scalar>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    train_split: &DatasetSplit<T>,
    eval_split: &DatasetSplit<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore<T>),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_split.is_empty() {
        return Err(Error::Split("cannot train on an empty split".into()));
    }
    let mut velocity = params.zero_grads();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let lr = config.lr_for_epoch(epoch);
        let order_seed = config.seed.wrapping_add(epoch as u64);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for (batch_idx, (images, labels)) in
            BatchIter::new(train_split, config.batch_size, Some(order_seed)).enumerate()
        {
            let (logits, tape) = forward_train(spec, params, &images)?;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, &labels)?;
            let loss = loss.to_f64();
            if !loss.is_finite() {
                return Err(divergence_error(spec, params, epoch, batch_idx, loss));
            }
            hits += count_hits(&logits, &labels);
            loss_sum += loss * labels.len() as f64;
            let grads = backward(spec, params, &tape, &grad_logits)?;
            sgd_step(params, &grads, &mut velocity, lr, config.momentum, config.weight_decay);
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / train_split.len() as f64,
            train_acc: hits as f64 / train_split.len() as f64,
            eval_acc: evaluate_accuracy(spec, params, eval_split)?,
            lr,
        };
        on_epoch(&record, params);
        log.push(record);
    }
    Ok(log)
}

/// Fine-tunes in place and returns the best per-epoch eval accuracy along
/// with the log. Zero epochs degenerate to a plain evaluation of the
/// incoming parameters.
pub fn finetune<T: Scalar>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    train_split: &DatasetSplit<T>,
    eval_split: &DatasetSplit<T>,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord, &ParamStore<T>),
) -> Result<(f64, Vec<EpochRecord>)> {
    if config.epochs == 0 {
        return Ok((evaluate_accuracy(spec, params, eval_split)?, Vec::new()));
    }
    let log = train(spec, params, train_split, eval_split, config, on_epoch)?;
    let best = log.iter().map(|r| r.eval_acc).fold(f64::MIN, f64::max);
    Ok((best, log))
}
