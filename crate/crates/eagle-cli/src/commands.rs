//! The subcommand implementations. Each one is a pure function of the
//! resolved configuration, its input artifacts, and the seeds: rerunning a
//! command single-threaded reproduces its output files byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::json;

use eagle_core::netgraph::{
    micro_cnn, micro_mobilenet, weight_histogram, LayerKind, LayerParams, NetworkSpec, ParamStore,
};
use eagle_core::pruner::apply_strategy;
use eagle_core::search::{
    bn_stats_distance, recalibrate, run_search, BnChannelDistance, RecalibStats, SearchJob,
};
use eagle_core::trainer::{evaluate_accuracy, finetune, train};
use eagle_core::{correlation, Error, Result, Scalar};

use crate::checkpoint;
use crate::config::{ArchKind, ExperimentConfig};
use crate::dataset::{load_dataset, LoadedData};
use crate::reports;

pub fn build_spec(
    config: &ExperimentConfig,
    input_shape: [usize; 3],
    class_count: usize,
) -> Result<NetworkSpec> {
    match config.model.arch {
        ArchKind::MicroCnn => micro_cnn(input_shape, class_count, &config.model.widths),
        ArchKind::MicroMobilenet => micro_mobilenet(input_shape, class_count, &config.model.widths),
    }
}

fn prepare_out_dir(config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    config.write_resolved(&config.out_dir)
}

fn check_model_fits<T: Scalar>(spec: &NetworkSpec, data: &LoadedData<T>) -> Result<()> {
    if spec.input_shape != data.input_shape || spec.class_count != data.class_count {
        return Err(Error::InvalidArgument(format!(
            "checkpoint expects input {:?} with {} classes but the dataset provides {:?} with {}",
            spec.input_shape, spec.class_count, data.input_shape, data.class_count
        )));
    }
    Ok(())
}

pub fn cmd_train<T: Scalar>(config: &ExperimentConfig) -> Result<()> {
    prepare_out_dir(config)?;
    let data = load_dataset::<T>(&config.dataset)?;
    let spec = build_spec(config, data.input_shape, data.class_count)?;
    let mut params = ParamStore::<T>::init(&spec, config.model.init_seed)?;

    let log_path = config.out_dir.join("train_log.jsonl");
    if log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let mut stream_err: Option<Error> = None;
    let log = train(
        &spec,
        &mut params,
        &data.splits.train,
        &data.splits.subval,
        &config.train.to_train_config(),
        |record, _| {
            if stream_err.is_none() {
                stream_err = reports::append_jsonl(&log_path, record).err();
            }
        },
    )?;
    if let Some(e) = stream_err {
        return Err(e);
    }

    let ckpt_path = config.out_dir.join("model.ckpt");
    checkpoint::save(&ckpt_path, &spec, &params, None)?;
    let final_acc = evaluate_accuracy(&spec, &params, &data.splits.subval)?;
    println!(
        "{}",
        json!({
            "command": "train",
            "epochs": log.len(),
            "final_eval_acc": final_acc,
            "checkpoint": ckpt_path.display().to_string(),
        })
    );
    Ok(())
}

pub fn cmd_eval<T: Scalar>(config: &ExperimentConfig, ckpt: &Path, split: &str) -> Result<()> {
    let loaded = checkpoint::load::<T>(ckpt)?;
    let data = load_dataset::<T>(&config.dataset)?;
    check_model_fits(&loaded.spec, &data)?;
    let part = match split {
        "train" => &data.splits.train,
        "subval" => &data.splits.subval,
        "recalib" => &data.splits.recalib,
        "test" => &data.test,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown split \"{other}\" (expected train, subval, recalib, or test)"
            )))
        }
    };
    let accuracy = evaluate_accuracy(&loaded.spec, &loaded.params, part)?;
    println!(
        "{}",
        json!({
            "command": "eval",
            "split": split,
            "samples": part.len(),
            "accuracy": accuracy,
        })
    );
    Ok(())
}

pub fn cmd_search<T: Scalar>(config: &ExperimentConfig, workers: usize, ckpt: &Path) -> Result<()> {
    prepare_out_dir(config)?;
    let full = checkpoint::load::<T>(ckpt)?;
    let data = load_dataset::<T>(&config.dataset)?;
    check_model_fits(&full.spec, &data)?;

    let search_config = config.resolved_search();
    let ft_config = config.finetune.to_train_config();
    let candidates_path = config.out_dir.join("candidates.jsonl");
    reports::repair_jsonl_tail(&candidates_path)?;
    let resume = reports::read_candidates(&candidates_path)?;

    let job = SearchJob {
        spec: &full.spec,
        params: &full.params,
        splits: &data.splits,
        test: &data.test,
        criterion: config.search.criterion,
        finetune: &ft_config,
        config: &search_config,
        workers,
    };
    let mut stream_err: Option<Error> = None;
    let outcome = run_search(&job, &resume, |record| {
        // Fine-tuned rows are appended only after their checkpoints are on
        // disk (below), so a crash never leaves a row pointing at nothing.
        if record.acc_finetuned.is_none() && stream_err.is_none() {
            stream_err = reports::append_jsonl(&candidates_path, record).err();
        }
    })?;
    if let Some(e) = stream_err {
        return Err(e);
    }

    let mut records = outcome.records;
    for model in &outcome.finetuned {
        let name = format!("finetuned_{}.ckpt", model.id);
        let record = records
            .iter_mut()
            .find(|r| r.id == model.id)
            .expect("fine-tuned candidate is in the record set");
        checkpoint::save(&config.out_dir.join(&name), &model.spec, &model.params, Some(&record.strategy))?;
        record.checkpoint = Some(name);
        reports::append_jsonl(&candidates_path, record)?;
    }

    reports::write_candidates_csv(&config.out_dir.join("candidates.csv"), &records)?;
    reports::write_scatter_csv(&config.out_dir.join("scatter.csv"), &records)?;

    let winner = outcome
        .winner
        .and_then(|id| records.iter().find(|r| r.id == id))
        .cloned();
    if let Some(w) = &winner {
        if let Some(rel) = &w.checkpoint {
            let src = config.out_dir.join(rel);
            if src.exists() {
                std::fs::copy(&src, config.out_dir.join("winner.ckpt"))?;
            }
        }
        let summary = serde_json::to_string_pretty(w).map_err(|e| Error::DataFormat {
            path: config.out_dir.join("winner.json"),
            detail: e.to_string(),
        })?;
        std::fs::write(config.out_dir.join("winner.json"), summary)?;
    }
    println!(
        "{}",
        json!({
            "command": "search",
            "candidates": records.len(),
            "winner": winner.as_ref().map(|w| w.id),
            "winner_acc_finetuned": winner.as_ref().and_then(|w| w.acc_finetuned),
        })
    );
    Ok(())
}

fn weight_data<T: Scalar>(params: &ParamStore<T>, layer: usize) -> Option<&[T]> {
    match &params.layers[layer] {
        LayerParams::Conv { weight }
        | LayerParams::DepthwiseConv { weight }
        | LayerParams::Fc { weight, .. } => Some(weight.data()),
        _ => None,
    }
}

/// Symmetric, fixed bin edges per tracked layer, sized from the initial
/// weights so the per-epoch blocks stay comparable.
fn histogram_edges<T: Scalar>(spec: &NetworkSpec, params: &ParamStore<T>) -> BTreeMap<usize, Vec<f64>> {
    const BINS: usize = 40;
    let mut edges = BTreeMap::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        if !matches!(
            layer.kind,
            LayerKind::Conv { .. } | LayerKind::DepthwiseConv { .. } | LayerKind::Fc { .. }
        ) {
            continue;
        }
        let max_abs = weight_data(params, i)
            .map(|d| d.iter().fold(0.0f64, |m, v| m.max(v.to_f64().abs())))
            .unwrap_or(0.0);
        let half = if max_abs > 0.0 { max_abs * 1.25 } else { 1.0 };
        let step = 2.0 * half / BINS as f64;
        edges.insert(i, (0..=BINS).map(|b| -half + step * b as f64).collect());
    }
    edges
}

fn histogram_block<T: Scalar>(
    out: &mut String,
    epoch: usize,
    params: &ParamStore<T>,
    edges: &BTreeMap<usize, Vec<f64>>,
) -> Result<()> {
    for (&layer, e) in edges {
        let counts = weight_histogram(params, layer, e)?;
        for (bin, &count) in counts.iter().enumerate() {
            out.push_str(&format!("{epoch},{layer},{},{},{count}\n", e[bin], e[bin + 1]));
        }
    }
    Ok(())
}

pub fn cmd_finetune<T: Scalar>(config: &ExperimentConfig, ckpt: &Path) -> Result<()> {
    prepare_out_dir(config)?;
    let loaded = checkpoint::load::<T>(ckpt)?;
    let data = load_dataset::<T>(&config.dataset)?;
    check_model_fits(&loaded.spec, &data)?;
    let spec = loaded.spec;
    let mut params = loaded.params;

    let log_path = config.out_dir.join("finetune_log.jsonl");
    if log_path.exists() {
        std::fs::remove_file(&log_path)?;
    }
    let edges = histogram_edges(&spec, &params);
    let mut hist = String::from("epoch,layer,bin_lo,bin_hi,count\n");
    histogram_block(&mut hist, 0, &params, &edges)?;

    let mut stream_err: Option<Error> = None;
    let (best, log) = finetune(
        &spec,
        &mut params,
        &data.splits.train,
        &data.test,
        &config.finetune.to_train_config(),
        |record, p| {
            if stream_err.is_none() {
                stream_err = reports::append_jsonl(&log_path, record)
                    .and_then(|()| histogram_block(&mut hist, record.epoch, p, &edges))
                    .err();
            }
        },
    )?;
    if let Some(e) = stream_err {
        return Err(e);
    }
    std::fs::write(config.out_dir.join("weight_histograms.csv"), hist)?;

    let out_ckpt = config.out_dir.join("finetuned.ckpt");
    checkpoint::save(&out_ckpt, &spec, &params, loaded.strategy.as_ref())?;
    println!(
        "{}",
        json!({
            "command": "finetune",
            "epochs": log.len(),
            "best_eval_acc": best,
            "checkpoint": out_ckpt.display().to_string(),
        })
    );
    Ok(())
}

pub fn cmd_correlate<T: Scalar>(
    config: &ExperimentConfig,
    ckpt: &Path,
    labeled: &[(String, std::path::PathBuf)],
) -> Result<()> {
    prepare_out_dir(config)?;
    let full = checkpoint::load::<T>(ckpt)?;
    let data = load_dataset::<T>(&config.dataset)?;
    check_model_fits(&full.spec, &data)?;
    let search_config = config.resolved_search();
    let ft = config.finetune.to_train_config();

    let mut all_reports = Vec::new();
    for (label, path) in labeled {
        let mut records = reports::read_candidates(path)?;
        if records.is_empty() {
            return Err(Error::Stat(format!(
                "candidates file {} holds no records",
                path.display()
            )));
        }
        // Analysis mode: every candidate gets the same fine-tuning the
        // search winners got, resumably (each result appends immediately).
        for record in records.iter_mut() {
            if record.acc_finetuned.is_some() {
                continue;
            }
            let (pspec, mut pparams) =
                apply_strategy(&full.spec, &full.params, &record.strategy, config.search.criterion)?;
            recalibrate(
                &pspec,
                &mut pparams,
                &data.splits.recalib,
                search_config.recalib_iterations,
                search_config.recalib_batch_size,
                search_config.recalib_stats,
                search_config.seed,
            )?;
            let mut cfg = ft.clone();
            cfg.seed = ft.seed.wrapping_add(record.id as u64);
            let (acc, _) = finetune(&pspec, &mut pparams, &data.splits.train, &data.test, &cfg, |_, _| {})?;
            record.acc_finetuned = Some(acc);
            reports::append_jsonl(path, record)?;
        }
        let report = correlation::build_report(&records, label)?;
        println!(
            "{}",
            serde_json::to_string(&report).map_err(|e| Error::Stat(e.to_string()))?
        );
        let scatter_name = format!("scatter_{}.csv", reports::sanitize_label(label));
        reports::write_scatter_csv(&config.out_dir.join(scatter_name), &records)?;
        all_reports.push(report);
    }
    reports::write_correlation_csv(&config.out_dir.join("correlation.csv"), &all_reports)?;
    Ok(())
}

pub fn cmd_bn_distance<T: Scalar>(
    config: &ExperimentConfig,
    full_path: &Path,
    pruned_path: &Path,
) -> Result<()> {
    prepare_out_dir(config)?;
    let full = checkpoint::load::<T>(full_path)?;
    let pruned = checkpoint::load::<T>(pruned_path)?;
    let strategy = pruned.strategy.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{}: checkpoint embeds no pruning strategy; one is needed to rebuild inherited statistics",
            pruned_path.display()
        ))
    })?;
    let (pspec, inherited) = apply_strategy(&full.spec, &full.params, &strategy, config.search.criterion)?;
    if pspec != pruned.spec {
        return Err(Error::InvalidArgument(
            "pruned checkpoint's network does not match its strategy applied to the full checkpoint"
                .into(),
        ));
    }
    let data = load_dataset::<T>(&config.dataset)?;
    check_model_fits(&full.spec, &data)?;
    let sc = config.resolved_search();

    // Adaptive: the search's recalibration posture on training data.
    let mut adaptive = inherited.clone();
    recalibrate(
        &pspec,
        &mut adaptive,
        &data.splits.recalib,
        sc.recalib_iterations,
        sc.recalib_batch_size,
        sc.recalib_stats,
        sc.seed,
    )?;
    // Reference: equal-weight statistics from one full pass over held-out
    // data, the closest desk-scale stand-in for the "true" activations.
    let mut reference = inherited.clone();
    let passes = data.test.len().div_ceil(sc.recalib_batch_size);
    recalibrate(
        &pspec,
        &mut reference,
        &data.test,
        passes,
        sc.recalib_batch_size,
        RecalibStats::CumulativeMean,
        sc.seed,
    )?;

    let global_rows = bn_stats_distance(&inherited, &reference)?;
    let adaptive_rows = bn_stats_distance(&adaptive, &reference)?;
    if global_rows.is_empty() {
        return Err(Error::Unsupported(
            "model has no batch-normalization layers to compare".into(),
        ));
    }
    reports::write_bn_distance_csv(&config.out_dir.join("bn_distance.csv"), &global_rows, &adaptive_rows)?;

    let mean = |rows: &[BnChannelDistance], pick: fn(&BnChannelDistance) -> f64| {
        rows.iter().map(pick).sum::<f64>() / rows.len() as f64
    };
    println!(
        "{}",
        json!({
            "command": "bn_distance",
            "rows": global_rows.len(),
            "mean_d_mean_global": mean(&global_rows, |r| r.d_mean),
            "mean_d_mean_adaptive": mean(&adaptive_rows, |r| r.d_mean),
            "mean_d_var_global": mean(&global_rows, |r| r.d_var),
            "mean_d_var_adaptive": mean(&adaptive_rows, |r| r.d_var),
        })
    );
    Ok(())
}
