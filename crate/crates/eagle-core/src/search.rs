//! Strategy sampling, candidate evaluation, and winner selection: the
//! search loop that turns a trained full-size model into ranked pruning
//! candidates.
//!
//! Sampling is Monte Carlo with a uniform draw per prunable layer, rejection
//! filtered against a FLOPs-ratio window. Every candidate is scored two
//! ways on the sub-validation split: "vanilla" (the pruned net inherits the
//! full model's moving BN statistics unchanged) and "adaptive" (moving
//! statistics are reset and recalibrated on a slice of training data with
//! all learnable parameters frozen). The top candidates by adaptive score
//! are fine-tuned; the best fine-tuned accuracy picks the winner.

use serde::{Deserialize, Serialize};

use crate::data::{BatchIter, DatasetSplit, SplitSet};
use crate::error::{Error, Result};
use crate::netgraph::{forward, LayerParams, NetworkSpec, ParamStore};
use crate::pruner::{apply_strategy, strategy_flops_ratio, ImportanceCriterion, PruningStrategy};
use crate::scalar::Scalar;
use crate::trainer::{evaluate_accuracy, finetune, TrainConfig};
use crate::batchnorm::BnMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How recalibration folds batch statistics into the moving estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecalibStats {
    /// Exponential moving update with each BN layer's own momentum (the
    /// default reading of the update rule).
    Momentum,
    /// Plain average over the recalibration passes, realized by setting the
    /// momentum of iteration k to (k-1)/k. Exposed for comparison since the
    /// source leaves the iteration rule open.
    CumulativeMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub candidate_count: usize,
    /// R: per-layer ratios are drawn uniformly from [0, R).
    pub max_ratio: f64,
    /// Tighter bound for the first prunable layer, which feeds everything
    /// downstream and rarely tolerates aggressive pruning.
    pub first_layer_max_ratio: f64,
    /// None searches unconstrained; Some(t) keeps only strategies whose
    /// realized FLOPs ratio lands within `flops_tolerance` of t.
    pub flops_target: Option<f64>,
    pub flops_tolerance: f64,
    /// Rejection-sampling attempts allowed per accepted strategy.
    pub attempt_budget: usize,
    pub recalib_iterations: usize,
    pub recalib_batch_size: usize,
    pub recalib_stats: RecalibStats,
    /// Fraction of the training set carved off as the scoring split.
    pub subval_fraction: f64,
    /// Fraction of the training set visited during recalibration.
    pub recalib_fraction: f64,
    pub top_k_to_finetune: usize,
    pub seed: u64,
}

impl SearchConfig {
    pub fn desk_default(seed: u64) -> Self {
        SearchConfig {
            candidate_count: 50,
            max_ratio: 0.7,
            first_layer_max_ratio: 0.2,
            flops_target: None,
            flops_tolerance: 0.02,
            attempt_budget: 10_000,
            recalib_iterations: 100,
            recalib_batch_size: 128,
            recalib_stats: RecalibStats::Momentum,
            subval_fraction: 0.05,
            recalib_fraction: 1.0 / 30.0,
            top_k_to_finetune: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidate_count == 0 || self.top_k_to_finetune == 0 {
            return Err(Error::InvalidArgument(
                "candidate_count and top_k_to_finetune must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.max_ratio) || !(0.0..1.0).contains(&self.first_layer_max_ratio) {
            return Err(Error::InvalidArgument(
                "max_ratio and first_layer_max_ratio must lie in [0, 1)".into(),
            ));
        }
        if let Some(target) = self.flops_target {
            if !(target > 0.0 && target <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "flops_target {target} must lie in (0, 1]"
                )));
            }
        }
        if !(self.flops_tolerance > 0.0) || self.attempt_budget == 0 {
            return Err(Error::InvalidArgument(
                "flops_tolerance must be positive and attempt_budget at least 1".into(),
            ));
        }
        if self.recalib_iterations == 0 || self.recalib_batch_size == 0 {
            return Err(Error::InvalidArgument(
                "recalib_iterations and recalib_batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.subval_fraction)
            || !(0.0..1.0).contains(&self.recalib_fraction)
            || self.subval_fraction == 0.0
            || self.recalib_fraction == 0.0
        {
            return Err(Error::InvalidArgument(
                "subval_fraction and recalib_fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One scored candidate. `acc_finetuned` appears only after fine-tuning;
/// `checkpoint` is filled by callers that persist the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: usize,
    pub strategy: PruningStrategy,
    pub acc_vanilla: f64,
    pub acc_adaptive: f64,
    pub acc_finetuned: Option<f64>,
    pub checkpoint: Option<String>,
}

/// Samples `candidate_count` strategies, rejection-filtered against the
/// FLOPs window when a target is set. Deterministic given the seed: draws
/// are sequential from one stream regardless of how evaluation later
/// parallelizes.
pub fn generate_strategies(spec: &NetworkSpec, config: &SearchConfig) -> Result<Vec<PruningStrategy>> {
    config.validate()?;
    let prunable = spec.prunable_layers();
    if prunable.is_empty() {
        return Err(Error::Unsupported("network has no prunable layers".into()));
    }
    let bounds: Vec<f64> = (0..prunable.len())
        .map(|slot| {
            if slot == 0 {
                config.max_ratio.min(config.first_layer_max_ratio)
            } else {
                config.max_ratio
            }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut strategies = Vec::with_capacity(config.candidate_count);
    for _ in 0..config.candidate_count {
        let mut accepted = None;
        for _attempt in 0..config.attempt_budget {
            // Scaling a [0,1) draw keeps the stream length fixed even when a
            // bound is zero (an empty uniform range cannot be sampled).
            let ratios: Vec<f64> = bounds
                .iter()
                .map(|&b| rng.random_range(0.0..1.0) * b)
                .collect();
            let realized = strategy_flops_ratio(spec, &ratios)?;
            let ok = match config.flops_target {
                None => true,
                Some(target) => (realized - target).abs() <= config.flops_tolerance,
            };
            if ok {
                accepted = Some(PruningStrategy {
                    ratios,
                    realized_flops_ratio: realized,
                });
                break;
            }
        }
        match accepted {
            Some(s) => strategies.push(s),
            None => {
                return Err(Error::SearchInfeasible {
                    target: config.flops_target.unwrap_or(1.0),
                    tolerance: config.flops_tolerance,
                    attempts: config.attempt_budget,
                })
            }
        }
    }
    Ok(strategies)
}

/// Accuracy of the pruned model exactly as pruned: moving BN statistics
/// inherited from the full-size parent, nothing recalibrated or mutated.
pub fn evaluate_vanilla<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    subval: &DatasetSplit<T>,
) -> Result<f64> {
    evaluate_accuracy(spec, params, subval)
}

/// Resets every BN layer's moving statistics and rebuilds them with
/// `iterations` statistics-only forward passes over the split (cycling when
/// the split is smaller than iterations x batch). Learnable parameters are
/// untouched; only moving means/variances change.
pub fn recalibrate<T: Scalar>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    split: &DatasetSplit<T>,
    iterations: usize,
    batch_size: usize,
    stats: RecalibStats,
    seed: u64,
) -> Result<()> {
    if split.is_empty() {
        return Err(Error::Split("recalibration subset is empty".into()));
    }
    let saved_momenta: Vec<Option<T>> = params
        .layers
        .iter()
        .map(|l| match l {
            LayerParams::BatchNorm(bn) => Some(bn.momentum),
            _ => None,
        })
        .collect();
    for layer in params.layers.iter_mut() {
        if let LayerParams::BatchNorm(bn) = layer {
            bn.reset_moving_stats();
        }
    }
    let mut done = 0usize;
    'outer: loop {
        for (images, _) in BatchIter::new(split, batch_size, Some(seed)) {
            if done == iterations {
                break 'outer;
            }
            if stats == RecalibStats::CumulativeMean {
                let momentum = T::from_f64(done as f64 / (done + 1) as f64);
                for layer in params.layers.iter_mut() {
                    if let LayerParams::BatchNorm(bn) = layer {
                        bn.momentum = momentum;
                    }
                }
            }
            forward(spec, params, &images, BnMode::Recalibrate)?;
            done += 1;
        }
    }
    if stats == RecalibStats::CumulativeMean {
        for (layer, saved) in params.layers.iter_mut().zip(saved_momenta) {
            if let (LayerParams::BatchNorm(bn), Some(m)) = (layer, saved) {
                bn.momentum = m;
            }
        }
    }
    Ok(())
}

/// Adaptive evaluation: recalibrate the moving statistics on training data,
/// then measure Eval-mode accuracy on the sub-validation split. Mutates only
/// the BN moving statistics of `params`; weights, gamma, and beta stay
/// bit-identical.
pub fn evaluate_adaptive<T: Scalar>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    recalib: &DatasetSplit<T>,
    subval: &DatasetSplit<T>,
    config: &SearchConfig,
) -> Result<f64> {
    recalibrate(
        spec,
        params,
        recalib,
        config.recalib_iterations,
        config.recalib_batch_size,
        config.recalib_stats,
        config.seed,
    )?;
    evaluate_accuracy(spec, params, subval)
}

/// Per-channel absolute distance between two models' BN moving statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BnChannelDistance {
    /// Layer index in the network, channel index within the layer.
    pub layer: usize,
    pub channel: usize,
    pub d_mean: f64,
    pub d_var: f64,
}

pub fn bn_stats_distance<T: Scalar>(
    a: &ParamStore<T>,
    b: &ParamStore<T>,
) -> Result<Vec<BnChannelDistance>> {
    if a.layers.len() != b.layers.len() {
        return Err(Error::shape(
            "bn_stats_distance",
            format!("models have {} vs {} layers", a.layers.len(), b.layers.len()),
        ));
    }
    let mut rows = Vec::new();
    for (idx, (la, lb)) in a.layers.iter().zip(&b.layers).enumerate() {
        match (la, lb) {
            (LayerParams::BatchNorm(bn_a), LayerParams::BatchNorm(bn_b)) => {
                if bn_a.channels() != bn_b.channels() {
                    return Err(Error::shape(
                        "bn_stats_distance",
                        format!(
                            "layer {idx}: {} vs {} BN channels",
                            bn_a.channels(),
                            bn_b.channels()
                        ),
                    ));
                }
                for c in 0..bn_a.channels() {
                    rows.push(BnChannelDistance {
                        layer: idx,
                        channel: c,
                        d_mean: (bn_a.moving_mean[c].to_f64() - bn_b.moving_mean[c].to_f64()).abs(),
                        d_var: (bn_a.moving_var[c].to_f64() - bn_b.moving_var[c].to_f64()).abs(),
                    });
                }
            }
            (LayerParams::BatchNorm(_), _) | (_, LayerParams::BatchNorm(_)) => {
                return Err(Error::shape(
                    "bn_stats_distance",
                    format!("layer {idx}: BN present in only one model"),
                ))
            }
            _ => {}
        }
    }
    Ok(rows)
}

/// Everything a search run needs, bundled so the entry point stays readable.
pub struct SearchJob<'a, T: Scalar> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParamStore<T>,
    pub splits: &'a SplitSet<T>,
    /// Held-out split used only for the fine-tuned accuracy Y.
    pub test: &'a DatasetSplit<T>,
    pub criterion: ImportanceCriterion,
    pub finetune: &'a TrainConfig,
    pub config: &'a SearchConfig,
    /// Candidate evaluations run `workers` at a time; results merge in id
    /// order, so any worker count produces identical output.
    pub workers: usize,
}

/// A fine-tuned candidate, returned so callers can persist it.
#[derive(Debug, Clone)]
pub struct FinetunedModel<T: Scalar> {
    pub id: usize,
    pub spec: NetworkSpec,
    pub params: ParamStore<T>,
    pub acc: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<T: Scalar> {
    /// All candidates, sorted by adaptive accuracy descending (id breaks
    /// ties). Top-k carry `acc_finetuned`.
    pub records: Vec<CandidateRecord>,
    /// Freshly fine-tuned models, in rank order. Candidates whose
    /// fine-tuned accuracy arrived via `resume` are not re-tuned and do not
    /// reappear here.
    pub finetuned: Vec<FinetunedModel<T>>,
    /// Candidate id with the best fine-tuned accuracy.
    pub winner: Option<usize>,
}

fn evaluate_candidate<T: Scalar>(
    job: &SearchJob<'_, T>,
    id: usize,
    strategy: &PruningStrategy,
) -> Result<CandidateRecord> {
    let (pspec, mut pparams) = apply_strategy(job.spec, job.params, strategy, job.criterion)?;
    let acc_vanilla = evaluate_vanilla(&pspec, &pparams, &job.splits.subval)?;
    let acc_adaptive =
        evaluate_adaptive(&pspec, &mut pparams, &job.splits.recalib, &job.splits.subval, job.config)?;
    Ok(CandidateRecord {
        id,
        strategy: strategy.clone(),
        acc_vanilla,
        acc_adaptive,
        acc_finetuned: None,
        checkpoint: None,
    })
}

/// Rebuilds a candidate's pruned, recalibrated model (deterministic given
/// the full model), used before fine-tuning so the search loop never has to
/// keep every candidate's parameters alive.
fn materialize_candidate<T: Scalar>(
    job: &SearchJob<'_, T>,
    strategy: &PruningStrategy,
) -> Result<(NetworkSpec, ParamStore<T>)> {
    let (pspec, mut pparams) = apply_strategy(job.spec, job.params, strategy, job.criterion)?;
    recalibrate(
        &pspec,
        &mut pparams,
        &job.splits.recalib,
        job.config.recalib_iterations,
        job.config.recalib_batch_size,
        job.config.recalib_stats,
        job.config.seed,
    )?;
    Ok((pspec, pparams))
}

/// Runs the full candidate search. `resume` carries records from an earlier
/// interrupted run (matched by id against the regenerated strategy list;
/// mismatches are an error); their evaluations are reused instead of
/// recomputed. `on_record` fires for every newly computed record, in a
/// deterministic order: evaluation records by ascending id, then fine-tuned
/// updates by rank.
pub fn run_search<T: Scalar>(
    job: &SearchJob<'_, T>,
    resume: &[CandidateRecord],
    mut on_record: impl FnMut(&CandidateRecord),
) -> Result<SearchOutcome<T>> {
    job.config.validate()?;
    job.finetune.validate()?;
    let strategies = generate_strategies(job.spec, job.config)?;

    let mut records: Vec<Option<CandidateRecord>> = vec![None; strategies.len()];
    for old in resume {
        let strategy = strategies.get(old.id).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "resume record {} does not fit a search of {} candidates",
                old.id,
                strategies.len()
            ))
        })?;
        if old.strategy.ratios != strategy.ratios {
            return Err(Error::InvalidArgument(format!(
                "resume record {} was sampled under a different configuration",
                old.id
            )));
        }
        records[old.id] = Some(old.clone());
    }

    // Evaluate missing candidates, `workers` at a time. Spawn order and
    // merge order are both ascending id, so output is stable for any
    // worker count.
    let pending: Vec<usize> = (0..strategies.len()).filter(|&id| records[id].is_none()).collect();
    let workers = job.workers.max(1);
    for chunk in pending.chunks(workers) {
        let mut results: Vec<(usize, Result<CandidateRecord>)> = if workers == 1 {
            chunk
                .iter()
                .map(|&id| (id, evaluate_candidate(job, id, &strategies[id])))
                .collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&id| {
                        let strategy = &strategies[id];
                        (id, scope.spawn(move || evaluate_candidate(job, id, strategy)))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|(id, h)| (id, h.join().expect("candidate evaluation panicked")))
                    .collect()
            })
        };
        results.sort_by_key(|(id, _)| *id);
        for (id, result) in results {
            let record = result?;
            on_record(&record);
            records[id] = Some(record);
        }
    }

    let mut records: Vec<CandidateRecord> = records.into_iter().map(|r| r.expect("all ids filled")).collect();
    records.sort_by(|a, b| {
        b.acc_adaptive
            .total_cmp(&a.acc_adaptive)
            .then(a.id.cmp(&b.id))
    });

    // Fine-tune the top k that do not already carry a fine-tuned accuracy.
    let k = job.config.top_k_to_finetune.min(records.len());
    let mut finetuned = Vec::new();
    for rank in 0..k {
        if records[rank].acc_finetuned.is_some() {
            continue;
        }
        let id = records[rank].id;
        let (pspec, mut pparams) = materialize_candidate(job, &records[rank].strategy)?;
        let mut config = job.finetune.clone();
        config.seed = job.finetune.seed.wrapping_add(id as u64);
        let (acc, _log) = finetune(&pspec, &mut pparams, &job.splits.train, job.test, &config, |_, _| {})?;
        records[rank].acc_finetuned = Some(acc);
        on_record(&records[rank]);
        finetuned.push(FinetunedModel {
            id,
            spec: pspec,
            params: pparams,
            acc,
        });
    }

    let winner = records[..k]
        .iter()
        .filter_map(|r| r.acc_finetuned.map(|acc| (r.id, acc)))
        .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id);

    Ok(SearchOutcome {
        records,
        finetuned,
        winner,
    })
}
