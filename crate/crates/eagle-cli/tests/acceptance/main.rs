//! Acceptance gate for the pruning toolkit.
//!
//! Each test covers one numbered claim about the end-to-end behavior and
//! prints a single line, `ACCEPTANCE C<n> PASS - ...` or `... FAIL - ...`,
//! before asserting. The pipeline criteria drive the real `eagle` binary on
//! a synthetic ten-class glyph dataset (see `synthdata`); the kernel-level
//! criteria call the library directly against independent oracles.
//!
//! Heavy artifacts (the trained parent model, the candidate searches) are
//! cached under CARGO_TARGET_TMPDIR and keyed by step markers, so reruns
//! only pay for what is missing. Tests are named in criterion order; with
//! the single-threaded runner that makes the expensive shared steps build
//! inside criterion 1 where the time budget is checked.


use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;

use eagle_core::batchnorm::{bn_backward, bn_forward, BnMode, BnState};
use eagle_core::netgraph::{count_flops, forward_eval, forward_train, micro_cnn, micro_mobilenet, LayerParams, ParamStore};
use eagle_core::pruner::{apply_strategy, strategy_flops_ratio, ImportanceCriterion, PruningStrategy};
use eagle_core::search::{evaluate_adaptive, recalibrate};
use eagle_core::tensor::{
    conv2d_backward, conv2d_forward, depthwise_conv2d_backward, depthwise_conv2d_forward,
    fc_backward, fc_forward, global_avgpool_backward, global_avgpool_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward, relu_forward, softmax_cross_entropy, Tensor,
};
use eagle_core::trainer::evaluate_accuracy;

const TRAIN_N: usize = 10_000;
const TEST_N: usize = 2_000;
const GLYPH_SEED: u64 = 7;
const TRAIN_EPOCHS: usize = 8;

// ---------------------------------------------------------------------------
// Infrastructure: binary runner, cached steps, config rendering.
// ---------------------------------------------------------------------------

fn root() -> &'static Path {
    static R: OnceLock<PathBuf> = OnceLock::new();
    R.get_or_init(|| {
        let r = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        fs::create_dir_all(&r).expect("create acceptance root");
        r
    })
}

fn eagle_cmd(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eagle"));
    cmd.args(args).env_remove("EAGLE_PRECISION");
    cmd
}

/// Runs the binary to completion and returns every stdout line that parses
/// as JSON (progress prose is ignored). Panics on a non-zero exit.
fn eagle_json(args: &[&str]) -> Vec<Value> {
    let out = eagle_cmd(args).output().expect("spawn eagle");
    assert!(
        out.status.success(),
        "eagle {:?} failed\nstdout:\n{}\nstderr:\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

/// Runs `f` once per artifact directory and cache key: a marker file records
/// the key digest and the elapsed seconds, so later invocations skip the
/// work unless the key (usually the rendered config) has changed. Returns
/// the recorded duration in seconds.
fn step(dir: &Path, name: &str, key: &str, f: impl FnOnce()) -> f64 {
    use sha2::{Digest, Sha256};
    fs::create_dir_all(dir).expect("create step dir");
    let digest = format!("{:x}", Sha256::digest(key.as_bytes()));
    let marker = dir.join(format!(".done-{name}"));
    if let Ok(text) = fs::read_to_string(&marker) {
        let mut parts = text.split_whitespace();
        if parts.next() == Some(digest.as_str()) {
            if let Some(secs) = parts.next().and_then(|s| s.parse().ok()) {
                return secs;
            }
        }
    }
    let start = Instant::now();
    f();
    let secs = start.elapsed().as_secs_f64();
    fs::write(&marker, format!("{digest} {secs:.3}")).expect("write step marker");
    secs
}

fn verdict(tag: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {tag} {} - {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{tag} failed: {detail}");
}

/// An artifact directory whose name carries a digest of the configuration
/// that fills it, so changed settings start from an empty directory instead
/// of tripping over stale artifacts. Returns the directory and the rendered
/// config text (which embeds the directory as its out_dir).
fn keyed_dir(base: &str, data: &[PathBuf; 4], k: &Knobs, extra: &str) -> (PathBuf, String) {
    use sha2::{Digest, Sha256};
    let probe = format!("{}{extra}", config_text(Path::new("OUT"), data, k));
    let digest = format!("{:x}", Sha256::digest(probe.as_bytes()));
    let dir = root().join(format!("{base}_{}", &digest[..8]));
    let text = config_text(&dir, data, k);
    fs::create_dir_all(&dir).expect("create keyed dir");
    (dir, text)
}

#[derive(Debug, Clone, Deserialize)]
struct Strategy {
    ratios: Vec<f64>,
    realized_flops_ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct Candidate {
    id: usize,
    strategy: Strategy,
    acc_vanilla: f64,
    acc_adaptive: f64,
    acc_finetuned: Option<f64>,
    #[allow(dead_code)]
    checkpoint: Option<String>,
}

/// Parses a candidate ledger, keeping the last row per id (fine-tuning
/// appends an updated row rather than rewriting).
fn read_ledger(path: &Path) -> Vec<Candidate> {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("read {path:?}: {e}"));
    let mut latest: std::collections::BTreeMap<usize, Candidate> = Default::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let c: Candidate = serde_json::from_str(line).expect("ledger row parses");
        latest.insert(c.id, c);
    }
    latest.into_values().collect()
}

struct Knobs {
    count: usize,
    flops_target: Option<f64>,
    top_k: usize,
    criterion: &'static str,
    recalib_iterations: usize,
    search_seed: u64,
    train_epochs: usize,
}

impl Knobs {
    fn full(count: usize, flops_target: Option<f64>, top_k: usize, criterion: &'static str, seed: u64) -> Self {
        Knobs {
            count,
            flops_target,
            top_k,
            criterion,
            recalib_iterations: 100,
            search_seed: seed,
            train_epochs: TRAIN_EPOCHS,
        }
    }
}

fn config_text(out_dir: &Path, data: &[PathBuf; 4], k: &Knobs) -> String {
    let target = k
        .flops_target
        .map(|t| format!("flops_target = {t}\n"))
        .unwrap_or_default();
    format!(
        r#"out_dir = "{out}"

[dataset]
kind = "idx"
train_images = "{ti}"
train_labels = "{tl}"
test_images = "{vi}"
test_labels = "{vl}"
classes = 10
subval_fraction = 0.1
recalib_fraction = 0.0334
seed = 7

[model]
arch = "micro_cnn"
widths = [6, 12, 24]
init_seed = 1

[train]
epochs = {epochs}
batch_size = 64
base_lr = 0.08
lr_milestones = [5, 7]
seed = 11

[finetune]
epochs = 2
batch_size = 64
base_lr = 0.001
seed = 12

[search]
candidate_count = {count}
max_ratio = 0.7
{target}recalib_iterations = {recal}
recalib_batch_size = 64
top_k_to_finetune = {top_k}
criterion = "{crit}"
seed = {sseed}
"#,
        out = out_dir.display(),
        ti = data[0].display(),
        tl = data[1].display(),
        vi = data[2].display(),
        vl = data[3].display(),
        epochs = k.train_epochs,
        count = k.count,
        target = target,
        recal = k.recalib_iterations,
        top_k = k.top_k,
        crit = k.criterion,
        sseed = k.search_seed,
    )
}

/// Trained parent model shared by the pipeline criteria.
struct MainCtx {
    data: [PathBuf; 4],
    cfg: PathBuf,
    ckpt: PathBuf,
    train_secs: f64,
}

fn main_ctx() -> &'static MainCtx {
    static C: OnceLock<MainCtx> = OnceLock::new();
    C.get_or_init(|| {
        let data = synthdata::ensure_glyphs(&root().join("data"), TRAIN_N, TEST_N, GLYPH_SEED);
        let (dir, text) = keyed_dir("parent", &data, &Knobs::full(1, None, 1, "l1_norm", 0), "");
        let cfg = dir.join("config.toml");
        fs::write(&cfg, &text).expect("write parent config");
        let cfg_s = cfg.to_str().unwrap().to_owned();
        let train_secs = step(&dir, "train", &text, || {
            eagle_json(&["--config", &cfg_s, "train"]);
        });
        MainCtx {
            data,
            cfg,
            ckpt: dir.join("model.ckpt"),
            train_secs,
        }
    })
}

/// One completed candidate search (evaluations plus fine-tuning of every
/// candidate) against the shared parent model.
struct Group {
    dir: PathBuf,
    cfg: PathBuf,
    records: Vec<Candidate>,
    secs: f64,
}

fn run_group(name: &str, criterion: &'static str, flops: Option<f64>, count: usize, seed: u64) -> Group {
    let ctx = main_ctx();
    let (dir, text) = keyed_dir(name, &ctx.data, &Knobs::full(count, flops, count, criterion, seed), "");
    let cfg = dir.join("config.toml");
    fs::write(&cfg, &text).expect("write group config");
    let cfg_s = cfg.to_str().unwrap().to_owned();
    let ckpt_s = ctx.ckpt.to_str().unwrap().to_owned();
    let secs = step(&dir, "search", &text, || {
        eagle_json(&["--config", &cfg_s, "search", "--checkpoint", &ckpt_s]);
    });
    let records = read_ledger(&dir.join("candidates.jsonl"));
    assert_eq!(records.len(), count, "group {name} has every candidate");
    assert!(
        records.iter().all(|r| r.acc_finetuned.is_some()),
        "group {name} fine-tuned every candidate"
    );
    if let Some(target) = flops {
        assert!(
            records
                .iter()
                .all(|r| (r.strategy.realized_flops_ratio - target).abs() <= 0.02),
            "group {name} kept every candidate within tolerance of the FLOPs target"
        );
    }
    Group { dir, cfg, records, secs }
}

fn group_unconstrained_l1() -> &'static Group {
    static G: OnceLock<Group> = OnceLock::new();
    G.get_or_init(|| run_group("unconstrained_l1", "l1_norm", None, 50, 21))
}

fn group_fifty_l1() -> &'static Group {
    static G: OnceLock<Group> = OnceLock::new();
    G.get_or_init(|| run_group("fifty_l1", "l1_norm", Some(0.5), 50, 22))
}

fn group_unconstrained_l2() -> &'static Group {
    static G: OnceLock<Group> = OnceLock::new();
    G.get_or_init(|| run_group("unconstrained_l2", "l2_norm", None, 50, 23))
}

fn group_fifty_l2() -> &'static Group {
    static G: OnceLock<Group> = OnceLock::new();
    G.get_or_init(|| run_group("fifty_l2", "l2_norm", Some(0.5), 50, 24))
}

/// Correlation reports for two candidate groups, computed by the real
/// `correlate` subcommand. Returns (unconstrained, constrained) keyed maps.
fn correlate_groups(tag: &str, unc: &Group, fifty: &Group) -> (Value, Value) {
    let dir = root().join(format!("report_{tag}"));
    fs::create_dir_all(&dir).expect("create report dir");
    let ctx = main_ctx();
    let lines = eagle_json(&[
        "--config",
        unc.cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
        "correlate",
        "--checkpoint",
        ctx.ckpt.to_str().unwrap(),
        "--candidates",
        &format!("unconstrained={}", unc.dir.join("candidates.jsonl").display()),
        "--candidates",
        &format!("fifty={}", fifty.dir.join("candidates.jsonl").display()),
    ]);
    let find = |label: &str| {
        lines
            .iter()
            .find(|v| v["label"] == label)
            .unwrap_or_else(|| panic!("correlate printed a report for {label}"))
            .clone()
    };
    (find("unconstrained"), find("fifty"))
}

/// The spearman-gap contract shared by criteria 1 and 5: within each group,
/// the adaptive-statistics score must rank fine-tuned accuracy well
/// (spearman >= 0.5) and beat the stale-statistics score by >= 0.2.
fn spearman_gap_holds(report: &Value) -> (bool, String) {
    let sa = report["spearman_adaptive"].as_f64().expect("spearman_adaptive");
    let sv = report["spearman_vanilla"].as_f64().expect("spearman_vanilla");
    let ok = sa >= 0.5 && sa - sv >= 0.2;
    (ok, format!("spearman adaptive {sa:.3} vs vanilla {sv:.3}"))
}

/// The evaluation-quality contract shared by criteria 2 and 5: adaptive
/// scores average >= 5 points above vanilla, and vanilla puts more mass
/// below 30% accuracy.
fn eval_quality_holds(records: &[&Candidate]) -> (bool, String) {
    let n = records.len() as f64;
    let mean_a: f64 = records.iter().map(|r| r.acc_adaptive).sum::<f64>() / n;
    let mean_v: f64 = records.iter().map(|r| r.acc_vanilla).sum::<f64>() / n;
    let below_a = records.iter().filter(|r| r.acc_adaptive < 0.30).count();
    let below_v = records.iter().filter(|r| r.acc_vanilla < 0.30).count();
    let ok = mean_a - mean_v >= 0.05 && below_v > below_a;
    (
        ok,
        format!(
            "mean adaptive {:.1}% vs vanilla {:.1}%, mass below 30%: vanilla {below_v}/{} vs adaptive {below_a}/{}",
            mean_a * 100.0,
            mean_v * 100.0,
            records.len(),
            records.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// Criterion 1: adaptive-statistics evaluation predicts fine-tuned accuracy,
// stale statistics do not, in both an unconstrained and a 50%-FLOPs search.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_correlation_gap() {
    let ctx = main_ctx();
    let unc = group_unconstrained_l1();
    let fifty = group_fifty_l1();
    let (rep_unc, rep_fifty) = correlate_groups("l1", unc, fifty);

    let (ok_u, msg_u) = spearman_gap_holds(&rep_unc);
    let (ok_f, msg_f) = spearman_gap_holds(&rep_fifty);
    let total_secs = ctx.train_secs + unc.secs + fifty.secs;
    let within_budget = total_secs < 7200.0;
    verdict(
        "C1",
        ok_u && ok_f && within_budget,
        &format!(
            "unconstrained: {msg_u}; fifty: {msg_f}; pipeline took {total_secs:.0}s (budget 7200s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: adaptive evaluation scores are far above stale-statistics
// scores on the same candidates, which pile up below 30% accuracy.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_evaluation_quality() {
    let all: Vec<&Candidate> = group_unconstrained_l1()
        .records
        .iter()
        .chain(group_fifty_l1().records.iter())
        .collect();
    let (ok, msg) = eval_quality_holds(&all);
    verdict("C2", ok, &msg);
}

// ---------------------------------------------------------------------------
// Criterion 3: after recalibration the batch-norm statistics of a pruned
// candidate sit closer to its true validation statistics than the inherited
// full-model statistics do, per channel, for both means and variances.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_bn_distance() {
    let fifty = group_fifty_l1();
    let winner: Value = serde_json::from_str(
        &fs::read_to_string(fifty.dir.join("winner.json")).expect("winner.json exists"),
    )
    .expect("winner.json parses");
    let realized = winner["strategy"]["realized_flops_ratio"].as_f64().unwrap();
    assert!(
        (realized - 0.5).abs() <= 0.02,
        "winner sits at the 50% FLOPs target (got {realized})"
    );

    let dir = root().join("report_bn");
    let lines = eagle_json(&[
        "--config",
        fifty.cfg.to_str().unwrap(),
        "--out-dir",
        dir.to_str().unwrap(),
        "bn-distance",
        "--full",
        main_ctx().ckpt.to_str().unwrap(),
        "--pruned",
        fifty.dir.join("winner.ckpt").to_str().unwrap(),
    ]);
    let rep = lines.last().expect("bn-distance prints a report");
    let mg = rep["mean_d_mean_global"].as_f64().unwrap();
    let ma = rep["mean_d_mean_adaptive"].as_f64().unwrap();
    let vg = rep["mean_d_var_global"].as_f64().unwrap();
    let va = rep["mean_d_var_adaptive"].as_f64().unwrap();
    verdict(
        "C3",
        ma < mg && va < vg,
        &format!(
            "candidate at {:.0}% FLOPs: |d mean| adaptive {ma:.4} < global {mg:.4}, |d var| adaptive {va:.4} < global {vg:.4}",
            realized * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: at an equal 50% FLOPs budget, the searched winner fine-tunes
// to at least the accuracy of a uniform-ratio baseline (win, or tie within
// 0.2 points), across three seeds.
// ---------------------------------------------------------------------------

/// Builds the uniform-ratio baseline at the same FLOPs budget as the search:
/// one ratio shared by every prunable layer, chosen so the realized FLOPs
/// ratio lands nearest the target, materialized and recalibrated exactly the
/// way search candidates are.
fn write_uniform_baseline(cfg_path: &Path, seed: u64, parent: &Path, out: &Path, target: f64) {
    let mut config = eagle_cli::config::ExperimentConfig::load(cfg_path).expect("load config");
    config.override_seeds(seed);
    let loaded = eagle_cli::checkpoint::load::<f32>(parent).expect("load parent");
    let data = eagle_cli::dataset::load_dataset::<f32>(&config.dataset).expect("load data");
    let n = loaded.spec.prunable_layers().len();

    let mut best = (f64::INFINITY, 0.0);
    for i in 0..950 {
        let u = i as f64 * 0.001;
        let r = strategy_flops_ratio(&loaded.spec, &vec![u; n]).expect("ratio");
        if (r - target).abs() < best.0 {
            best = ((r - target).abs(), u);
        }
    }
    assert!(best.0 <= 0.02, "uniform ratio can reach the FLOPs target");
    let strategy = PruningStrategy::new(&loaded.spec, vec![best.1; n]).expect("strategy");
    let (pspec, mut pparams) =
        apply_strategy(&loaded.spec, &loaded.params, &strategy, ImportanceCriterion::L1Norm)
            .expect("materialize baseline");
    let sc = config.resolved_search();
    recalibrate(
        &pspec,
        &mut pparams,
        &data.splits.recalib,
        sc.recalib_iterations,
        sc.recalib_batch_size,
        sc.recalib_stats,
        sc.seed,
    )
    .expect("recalibrate baseline");
    eagle_cli::checkpoint::save(out, &pspec, &pparams, Some(&strategy)).expect("save baseline");
}

fn c4_seed_result(seed: u64) -> (f64, f64) {
    let ctx = main_ctx();
    let (dir, text) = keyed_dir(
        &format!("c4_s{seed}"),
        &ctx.data,
        &Knobs::full(20, Some(0.5), 2, "l1_norm", 0),
        &seed.to_string(),
    );
    let cfg = dir.join("config.toml");
    fs::write(&cfg, &text).expect("write c4 config");
    let key = format!("{text}seed={seed}");
    let cfg_s = cfg.to_str().unwrap().to_owned();
    let seed_s = seed.to_string();
    let ckpt = dir.join("model.ckpt");
    let result_path = dir.join("result.json");

    if !result_path.exists() {
        step(&dir, "train", &key, || {
            eagle_json(&["--config", &cfg_s, "--seed", &seed_s, "train"]);
        });
        step(&dir, "search", &key, || {
            eagle_json(&[
                "--config",
                &cfg_s,
                "--seed",
                &seed_s,
                "search",
                "--checkpoint",
                ckpt.to_str().unwrap(),
            ]);
        });
        let winner: Value = serde_json::from_str(
            &fs::read_to_string(dir.join("winner.json")).expect("winner.json exists"),
        )
        .expect("winner.json parses");
        let winner_acc = winner["acc_finetuned"].as_f64().expect("winner was fine-tuned");

        let baseline_ckpt = dir.join("baseline.ckpt");
        write_uniform_baseline(&cfg, seed, &ckpt, &baseline_ckpt, 0.5);
        let out = eagle_json(&[
            "--config",
            &cfg_s,
            "--seed",
            &seed_s,
            "--out-dir",
            dir.join("baseline").to_str().unwrap(),
            "finetune",
            "--checkpoint",
            baseline_ckpt.to_str().unwrap(),
        ]);
        let baseline_acc = out.last().expect("finetune reports")["best_eval_acc"]
            .as_f64()
            .expect("baseline accuracy");
        fs::write(
            &result_path,
            serde_json::to_string(&serde_json::json!({
                "winner": winner_acc,
                "baseline": baseline_acc,
            }))
            .unwrap(),
        )
        .expect("write c4 result");
    }
    let result: Value =
        serde_json::from_str(&fs::read_to_string(&result_path).expect("read c4 result")).unwrap();
    (
        result["winner"].as_f64().unwrap(),
        result["baseline"].as_f64().unwrap(),
    )
}

#[test]
fn criterion_04_beats_uniform_baseline() {
    let mut msgs = Vec::new();
    let mut ok = true;
    for seed in [31u64, 32, 33] {
        let (winner, baseline) = c4_seed_result(seed);
        ok &= winner >= baseline - 0.002;
        msgs.push(format!(
            "seed {seed}: winner {:.1}% vs uniform {:.1}%",
            winner * 100.0,
            baseline * 100.0
        ));
    }
    verdict("C4", ok, &msgs.join("; "));
}

// ---------------------------------------------------------------------------
// Criterion 5: the pipeline is importance-criterion agnostic; with L2-norm
// ranking the criterion 1 and 2 contracts hold at the same thresholds.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_l2_criterion_agnostic() {
    let unc = group_unconstrained_l2();
    let fifty = group_fifty_l2();
    let (rep_unc, rep_fifty) = correlate_groups("l2", unc, fifty);

    let (ok_u, msg_u) = spearman_gap_holds(&rep_unc);
    let (ok_f, msg_f) = spearman_gap_holds(&rep_fifty);
    let all: Vec<&Candidate> = unc.records.iter().chain(fifty.records.iter()).collect();
    let (ok_q, msg_q) = eval_quality_holds(&all);
    verdict(
        "C5",
        ok_u && ok_f && ok_q,
        &format!("unconstrained: {msg_u}; fifty: {msg_f}; {msg_q}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: correlation statistics agree with brute-force references to
// 1e-12 on vectors with ties.
// ---------------------------------------------------------------------------

fn pearson_ref(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Average ranks by brute-force counting, independent of any sort order:
/// rank(i) = #(smaller) + (#(equal) + 1) / 2, one-based.
fn ranks_ref(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&o| o < v).count() as f64;
            let equal = x.iter().filter(|&&o| o == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Tau-b by explicit enumeration of all pairs.
fn kendall_ref(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].partial_cmp(&x[j]).unwrap();
            let dy = y[i].partial_cmp(&y[j]).unwrap();
            if dx.is_eq() {
                tied_x += 1;
            }
            if dy.is_eq() {
                tied_y += 1;
            }
            if dx.is_eq() || dy.is_eq() {
                continue;
            }
            if dx == dy {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as f64;
    (concordant - discordant) as f64 / ((n0 - tied_x as f64).sqrt() * (n0 - tied_y as f64).sqrt())
}

#[test]
fn criterion_06_correlation_oracles() {
    use eagle_core::correlation::{kendall, pearson, spearman};
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.random_range(20..120);
        let levels = [3usize, 5, 11, 64][case % 4];
        let (x, y) = loop {
            let x: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..levels) as f64 * 0.37 - 1.0)
                .collect();
            let y: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..levels) as f64 * 0.59 + x[0])
                .collect();
            let constant =
                |v: &[f64]| v.iter().all(|&a| a == v[0]);
            if !constant(&x) && !constant(&y) {
                break (x, y);
            }
        };
        let checks = [
            (pearson(&x, &y).unwrap(), pearson_ref(&x, &y)),
            (spearman(&x, &y).unwrap(), pearson_ref(&ranks_ref(&x), &ranks_ref(&y))),
            (kendall(&x, &y).unwrap(), kendall_ref(&x, &y)),
        ];
        for (got, want) in checks {
            worst = worst.max((got - want).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "C6",
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        &format!("100 tied-vector cases, worst |impl - brute force| = {worst:.2e}, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: every backward kernel matches central finite differences in
// f64 to 1e-6 relative error across >= 20 seeded cases per kernel.
// ---------------------------------------------------------------------------

const EPS: f64 = 1e-4;

fn fd_close(fd: f64, analytic: f64) -> Result<(), String> {
    let err = (fd - analytic).abs();
    let bound = 1e-9 + 1e-6 * fd.abs().max(analytic.abs());
    if err < bound {
        Ok(())
    } else {
        Err(format!("fd {fd} vs analytic {analytic} (err {err:.2e})"))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rand_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Central-difference check of d(loss)/d(tensor) for every listed tensor,
/// on a random sample of coordinates. `eval` recomputes the scalar loss from
/// the (perturbed) flat tensors; `analytic` is the backward pass's answer.
fn fd_check(
    name: &str,
    tensors: &mut [Vec<f64>],
    eval: &dyn Fn(&[Vec<f64>]) -> f64,
    analytic: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) {
    for ti in 0..analytic.len() {
        let len = tensors[ti].len();
        for _ in 0..6.min(len) {
            let ci = rng.random_range(0..len);
            let orig = tensors[ti][ci];
            tensors[ti][ci] = orig + EPS;
            let up = eval(tensors);
            tensors[ti][ci] = orig - EPS;
            let down = eval(tensors);
            tensors[ti][ci] = orig;
            let fd = (up - down) / (2.0 * EPS);
            fd_close(fd, analytic[ti][ci])
                .unwrap_or_else(|e| panic!("{name} tensor {ti} coord {ci}: {e}"));
        }
    }
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

#[test]
fn criterion_07_gradients_match_finite_differences() {
    let start = Instant::now();
    for seed in 0..20u64 {
        let rng = &mut ChaCha8Rng::seed_from_u64(0xC7_0000 + seed);

        // Standard convolution, varied stride and padding.
        {
            let (n, cin, cout, h, w) = (2, 3, 4, 5, 5);
            let (stride, padding) = (1 + (seed % 2) as usize, (seed / 2 % 2) as usize);
            let in_shape = [n, cin, h, w];
            let w_shape = [cout, cin, 3, 3];
            let mut ts = vec![rand_vec(rng, n * cin * h * w), rand_vec(rng, cout * cin * 9)];
            let out = conv2d_forward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), stride, padding).unwrap();
            let coeff = rand_vec(rng, out.numel());
            let go = t(out.shape(), &coeff);
            let (gi, gw) =
                conv2d_backward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), &go, stride, padding).unwrap();
            let eval = move |ts: &[Vec<f64>]| {
                let o = conv2d_forward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), stride, padding).unwrap();
                dot(o.data(), &coeff)
            };
            fd_check("conv2d", &mut ts, &eval, &[gi.data().to_vec(), gw.data().to_vec()], rng);
        }

        // Depthwise convolution.
        {
            let (n, c, h, w) = (2, 3, 6, 6);
            let (stride, padding) = (1 + (seed % 2) as usize, (seed % 2) as usize);
            let in_shape = [n, c, h, w];
            let w_shape = [c, 1, 3, 3];
            let mut ts = vec![rand_vec(rng, n * c * h * w), rand_vec(rng, c * 9)];
            let out =
                depthwise_conv2d_forward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), stride, padding).unwrap();
            let coeff = rand_vec(rng, out.numel());
            let go = t(out.shape(), &coeff);
            let (gi, gw) =
                depthwise_conv2d_backward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), &go, stride, padding)
                    .unwrap();
            let eval = move |ts: &[Vec<f64>]| {
                let o = depthwise_conv2d_forward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), stride, padding)
                    .unwrap();
                dot(o.data(), &coeff)
            };
            fd_check("depthwise", &mut ts, &eval, &[gi.data().to_vec(), gw.data().to_vec()], rng);
        }

        // Fully connected with bias.
        {
            let (n, fin, fout) = (3, 7, 4);
            let in_shape = [n, fin];
            let w_shape = [fout, fin];
            let mut ts = vec![rand_vec(rng, n * fin), rand_vec(rng, fout * fin), rand_vec(rng, fout)];
            let coeff = rand_vec(rng, n * fout);
            let go = t(&[n, fout], &coeff);
            let (gi, gw, gb) = fc_backward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), &go).unwrap();
            let eval = move |ts: &[Vec<f64>]| {
                let o = fc_forward(&t(&in_shape, &ts[0]), &t(&w_shape, &ts[1]), Some(&ts[2])).unwrap();
                dot(o.data(), &coeff)
            };
            fd_check(
                "fc",
                &mut ts,
                &eval,
                &[gi.data().to_vec(), gw.data().to_vec(), gb],
                rng,
            );
        }

        // ReLU, inputs kept away from the kink.
        {
            let shape = [2, 3, 4, 4];
            let mut ts = vec![(0..96)
                .map(|_| {
                    let m: f64 = rng.random_range(0.002..1.0);
                    if rng.random_range(0..2) == 0 {
                        m
                    } else {
                        -m
                    }
                })
                .collect::<Vec<f64>>()];
            let coeff = rand_vec(rng, 96);
            let go = t(&shape, &coeff);
            let gi = relu_backward(&t(&shape, &ts[0]), &go).unwrap();
            let eval = move |ts: &[Vec<f64>]| dot(relu_forward(&t(&shape, &ts[0])).data(), &coeff);
            fd_check("relu", &mut ts, &eval, &[gi.data().to_vec()], rng);
        }

        // Max pooling, window winners lifted clear of ties.
        {
            let shape = [2, 2, 4, 6];
            let mut data = rand_vec(rng, 2 * 2 * 4 * 6);
            for n in 0..2 {
                for c in 0..2 {
                    for py in 0..2 {
                        for px in 0..3 {
                            let base = ((n * 2 + c) * 4 + py * 2) * 6 + px * 2;
                            let idx = [base, base + 1, base + 6, base + 7];
                            let max = idx
                                .iter()
                                .copied()
                                .max_by(|&a, &b| data[a].partial_cmp(&data[b]).unwrap())
                                .unwrap();
                            data[max] += 0.2;
                        }
                    }
                }
            }
            let mut ts = vec![data];
            let (out, argmax) = maxpool2x2_forward(&t(&shape, &ts[0])).unwrap();
            let coeff = rand_vec(rng, out.numel());
            let go = t(out.shape(), &coeff);
            let gi = maxpool2x2_backward(&shape, &argmax, &go).unwrap();
            let eval = move |ts: &[Vec<f64>]| {
                dot(maxpool2x2_forward(&t(&shape, &ts[0])).unwrap().0.data(), &coeff)
            };
            fd_check("maxpool", &mut ts, &eval, &[gi.data().to_vec()], rng);
        }

        // Global average pooling.
        {
            let shape = [2, 3, 4, 4];
            let mut ts = vec![rand_vec(rng, 96)];
            let coeff = rand_vec(rng, 6);
            let go = t(&[2, 3], &coeff);
            let gi = global_avgpool_backward(&shape, &go).unwrap();
            let eval = move |ts: &[Vec<f64>]| {
                dot(global_avgpool_forward(&t(&shape, &ts[0])).unwrap().data(), &coeff)
            };
            fd_check("global_avgpool", &mut ts, &eval, &[gi.data().to_vec()], rng);
        }

        // Batch norm in training mode: input, gamma, and beta gradients.
        {
            let (n, c, h, w) = (3, 2, 3, 3);
            let shape = [n, c, h, w];
            let mut ts = vec![
                rand_vec(rng, n * c * h * w),
                (0..c).map(|_| rng.random_range(0.5..1.5)).collect(),
                (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
            ];
            let coeff = rand_vec(rng, n * c * h * w);
            let go = t(&shape, &coeff);
            let run = |ts: &[Vec<f64>]| {
                let mut st = BnState::<f64>::new(c);
                st.gamma = ts[1].clone();
                st.beta = ts[2].clone();
                bn_forward(&mut st, &t(&shape, &ts[0]), BnMode::Train).unwrap()
            };
            let (_, cache) = run(&ts);
            let mut st = BnState::<f64>::new(c);
            st.gamma = ts[1].clone();
            st.beta = ts[2].clone();
            let (gi, gg, gb) = bn_backward(&st, &t(&shape, &ts[0]), &cache.unwrap(), &go).unwrap();
            let eval = move |ts: &[Vec<f64>]| {
                let mut st = BnState::<f64>::new(c);
                st.gamma = ts[1].clone();
                st.beta = ts[2].clone();
                let (out, _) = bn_forward(&mut st, &t(&shape, &ts[0]), BnMode::Train).unwrap();
                dot(out.data(), &coeff)
            };
            fd_check("batchnorm", &mut ts, &eval, &[gi.data().to_vec(), gg, gb], rng);
        }

        // Softmax cross-entropy: the loss gradient itself.
        {
            let (n, k) = (4, 5);
            let shape = [n, k];
            let mut ts = vec![rand_vec(rng, n * k)];
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let (_, grad) = softmax_cross_entropy(&t(&shape, &ts[0]), &labels).unwrap();
            let labels_eval = labels.clone();
            let eval = move |ts: &[Vec<f64>]| {
                softmax_cross_entropy(&t(&shape, &ts[0]), &labels_eval).unwrap().0
            };
            fd_check("softmax_xent", &mut ts, &eval, &[grad.data().to_vec()], rng);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "C7",
        elapsed < Duration::from_secs(60),
        &format!("8 kernels x 20 seeded cases match central differences at 1e-6 relative, {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: pruning preserves function where it must. Removing
// exactly-zero filters leaves logits unchanged; the analytic FLOPs ratio of
// a strategy equals the materialized network's counted FLOPs on 1000 fuzzed
// strategies; an all-zero strategy round-trips to the identical checkpoint.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_function_preservation() {
    // Part 1: dead filters (zero weights, zero BN shift and mean on their
    // channels) can be pruned without moving the logits.
    let spec = micro_cnn([1, 12, 12], 10, &[8, 16]).unwrap();
    let mut params = ParamStore::<f64>::init(&spec, 41).unwrap();
    let dead = [1usize, 4, 6];
    if let LayerParams::Conv { weight } = &mut params.layers[0] {
        let span = weight.numel() / 8;
        for &f in &dead {
            weight.data_mut()[f * span..(f + 1) * span].fill(0.0);
        }
    }
    if let LayerParams::BatchNorm(bn) = &mut params.layers[1] {
        for &f in &dead {
            bn.beta[f] = 0.0;
            bn.moving_mean[f] = 0.0;
        }
    }
    let strategy = PruningStrategy::new(&spec, vec![3.0 / 8.0, 0.0]).unwrap();
    let (pspec, pparams) =
        apply_strategy(&spec, &params, &strategy, ImportanceCriterion::L1Norm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let input = t(&[4, 1, 12, 12], &rand_vec(&mut rng, 4 * 144));
    let full_logits = forward_eval(&spec, &params, &input).unwrap();
    let pruned_logits = forward_eval(&pspec, &pparams, &input).unwrap();
    let logit_gap = full_logits.max_abs_diff(&pruned_logits).unwrap();

    // Part 2: the cheap analytic FLOPs ratio agrees exactly with counting
    // the materialized network, across fuzzed strategies on both arches.
    let specs = [
        micro_cnn([1, 16, 16], 10, &[8, 12, 16]).unwrap(),
        micro_mobilenet([3, 16, 16], 10, &[8, 12, 16]).unwrap(),
    ];
    let mut fuzzed = 0usize;
    for spec in &specs {
        let params = ParamStore::<f32>::init(spec, 5).unwrap();
        let full_flops = count_flops(spec).unwrap().total;
        let n = spec.prunable_layers().len();
        for _ in 0..500 {
            let ratios: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.95)).collect();
            let analytic = strategy_flops_ratio(spec, &ratios).unwrap();
            let strat = PruningStrategy::new(spec, ratios).unwrap();
            let (ps, pp) = apply_strategy(spec, &params, &strat, ImportanceCriterion::L1Norm).unwrap();
            pp.check_against(&ps).unwrap();
            let counted = count_flops(&ps).unwrap().total as f64 / full_flops as f64;
            assert_eq!(analytic, counted, "analytic and materialized FLOPs ratios are identical");
            fuzzed += 1;
        }
    }

    // Part 3: an all-zero strategy is the identity, down to checkpoint bytes.
    let spec0 = micro_cnn([1, 8, 8], 5, &[4, 6]).unwrap();
    let mut params0 = ParamStore::<f32>::init(&spec0, 9).unwrap();
    let images = t(&[3, 1, 8, 8], &rand_vec(&mut rng, 3 * 64));
    let images32 = Tensor::<f32>::from_vec(
        &[3, 1, 8, 8],
        images.data().iter().map(|&v| v as f32).collect(),
    )
    .unwrap();
    forward_train(&spec0, &mut params0, &images32).unwrap();
    let zero = PruningStrategy::new(&spec0, vec![0.0, 0.0]).unwrap();
    let (zspec, zparams) =
        apply_strategy(&spec0, &params0, &zero, ImportanceCriterion::L1Norm).unwrap();
    assert_eq!(zspec, spec0, "zero-ratio pruning keeps the spec");
    let dir = root().join("c8");
    fs::create_dir_all(&dir).unwrap();
    let path_a = dir.join("original.ckpt");
    let path_b = dir.join("zero_pruned.ckpt");
    eagle_cli::checkpoint::save(&path_a, &spec0, &params0, None).unwrap();
    eagle_cli::checkpoint::save(&path_b, &zspec, &zparams, None).unwrap();
    let bytes_equal = fs::read(&path_a).unwrap() == fs::read(&path_b).unwrap();
    let reloaded = eagle_cli::checkpoint::load::<f32>(&path_b).unwrap();
    let roundtrip_equal = reloaded.params == params0;

    verdict(
        "C8",
        logit_gap < 1e-5 && bytes_equal && roundtrip_equal,
        &format!(
            "zero-filter logit gap {logit_gap:.2e}; {fuzzed} fuzzed strategies FLOPs-exact; zero-ratio checkpoint byte-identical"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: recalibration is self-consistent. On the unpruned trained
// model the adaptive evaluation lands within 1 point of the direct
// evaluation, and recalibration touches no learnable parameter.
// ---------------------------------------------------------------------------

fn learnables_bits<T: eagle_core::Scalar>(params: &ParamStore<T>) -> Vec<u64> {
    let mut bits = Vec::new();
    for layer in &params.layers {
        match layer {
            LayerParams::Conv { weight }
            | LayerParams::DepthwiseConv { weight } => {
                bits.extend(weight.data().iter().map(|v| v.to_f64().to_bits()));
            }
            LayerParams::Fc { weight, bias } => {
                bits.extend(weight.data().iter().map(|v| v.to_f64().to_bits()));
                if let Some(b) = bias {
                    bits.extend(b.iter().map(|v| v.to_f64().to_bits()));
                }
            }
            LayerParams::BatchNorm(bn) => {
                bits.extend(bn.gamma.iter().map(|v| v.to_f64().to_bits()));
                bits.extend(bn.beta.iter().map(|v| v.to_f64().to_bits()));
            }
            LayerParams::Stateless => {}
        }
    }
    bits
}

#[test]
fn criterion_09_recalibration_self_consistency() {
    let ctx = main_ctx();
    let config = eagle_cli::config::ExperimentConfig::load(&ctx.cfg).unwrap();
    let loaded = eagle_cli::checkpoint::load::<f32>(&ctx.ckpt).unwrap();
    let data = eagle_cli::dataset::load_dataset::<f32>(&config.dataset).unwrap();
    let sc = config.resolved_search();

    let direct = evaluate_accuracy(&loaded.spec, &loaded.params, &data.splits.subval).unwrap();
    let mut adapted = loaded.params.clone();
    let before = learnables_bits(&adapted);
    let adaptive =
        evaluate_adaptive(&loaded.spec, &mut adapted, &data.splits.recalib, &data.splits.subval, &sc)
            .unwrap();
    let after = learnables_bits(&adapted);

    let gap = (adaptive - direct).abs();
    verdict(
        "C9",
        gap <= 0.01 && before == after,
        &format!(
            "direct {:.2}% vs adaptive {:.2}% (gap {:.2} points); learnables bit-identical after recalibration",
            direct * 100.0,
            adaptive * 100.0,
            gap * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: determinism and crash recovery. Same config and seed with
// one worker gives a byte-identical ledger; a search killed mid-run resumes
// without recomputing any completed candidate.
// ---------------------------------------------------------------------------

fn c10_setup(base: &str) -> (PathBuf, PathBuf, String) {
    let ctx = main_ctx();
    let mut k = Knobs::full(16, None, 1, "l1_norm", 91);
    k.recalib_iterations = 250;
    let (dir, text) = keyed_dir(base, &ctx.data, &k, base);
    let cfg = dir.join("config.toml");
    fs::write(&cfg, &text).expect("write c10 config");
    (dir, cfg, text)
}

fn c10_search_args<'a>(cfg: &'a str, ckpt: &'a str) -> Vec<&'a str> {
    vec!["--config", cfg, "--workers", "1", "search", "--checkpoint", ckpt]
}

/// Launches the search and kills it once `min_rows` complete rows exist.
/// Returns the surviving ledger bytes. Panics if the run finishes before the
/// threshold (the fixture is sized so it never does).
fn kill_mid_search(dir: &Path, cfg: &str, ckpt: &str) -> Vec<u8> {
    let ledger = dir.join("candidates.jsonl");
    let mut child: Child = eagle_cmd(&c10_search_args(cfg, ckpt))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn search");
    let min_rows = 3;
    loop {
        std::thread::sleep(Duration::from_millis(30));
        let complete = fs::read_to_string(&ledger)
            .map(|t| t.matches('\n').count())
            .unwrap_or(0);
        if complete >= min_rows {
            child.kill().expect("kill search");
            break;
        }
        if let Some(status) = child.try_wait().expect("poll search") {
            panic!("search finished (status {status}) before the kill threshold; the fixture is too fast");
        }
    }
    child.wait().expect("reap search");
    fs::read(&ledger).expect("killed run left a ledger")
}

#[test]
fn criterion_10_determinism_and_resume() {
    let ctx = main_ctx();
    let ckpt = ctx.ckpt.to_str().unwrap().to_owned();

    // Fresh double run: byte-identical ledgers. The two configs differ only
    // in their output directory.
    let (dir_a, cfg_a, text_a) = c10_setup("det_a");
    let (dir_b, cfg_b, text_b) = c10_setup("det_b");
    step(&dir_a, "search", &text_a, || {
        eagle_json(&c10_search_args(cfg_a.to_str().unwrap(), &ckpt));
    });
    step(&dir_b, "search", &text_b, || {
        eagle_json(&c10_search_args(cfg_b.to_str().unwrap(), &ckpt));
    });
    let bytes_a = fs::read(dir_a.join("candidates.jsonl")).unwrap();
    let bytes_b = fs::read(dir_b.join("candidates.jsonl")).unwrap();
    let identical = bytes_a == bytes_b;

    // Kill mid-run, then resume to completion.
    let (dir_k, cfg_k, text_k) = c10_setup("det_kill");
    let snapshot_path = dir_k.join("kill_snapshot.jsonl");
    step(&dir_k, "killresume", &text_k, || {
        let snapshot = kill_mid_search(&dir_k, cfg_k.to_str().unwrap(), &ckpt);
        fs::write(&snapshot_path, &snapshot).expect("persist kill snapshot");
        eagle_json(&c10_search_args(cfg_k.to_str().unwrap(), &ckpt));
    });
    let snapshot = fs::read(&snapshot_path).unwrap();
    let final_bytes = fs::read(dir_k.join("candidates.jsonl")).unwrap();

    // Complete pre-kill rows survive verbatim as a prefix (append-only
    // resume; at most a partial trailing line was dropped).
    let keep = snapshot
        .iter()
        .rposition(|&b| b == b'\n')
        .map(|i| i + 1)
        .unwrap_or(0);
    let prefix_intact = final_bytes.starts_with(&snapshot[..keep]);
    let survived = snapshot[..keep].iter().filter(|&&b| b == b'\n').count();

    // No completed candidate was recomputed: every id has exactly one
    // evaluation row in the final ledger.
    let text = String::from_utf8(final_bytes.clone()).unwrap();
    let mut eval_rows: std::collections::BTreeMap<usize, usize> = Default::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let c: Candidate = serde_json::from_str(line).expect("resumed ledger parses");
        if c.acc_finetuned.is_none() {
            *eval_rows.entry(c.id).or_default() += 1;
        }
    }
    let no_recompute = eval_rows.len() == 16 && eval_rows.values().all(|&n| n == 1);

    // And the crash-resumed run converges to the uninterrupted result.
    let rec_a = read_ledger(&dir_a.join("candidates.jsonl"));
    let rec_k = read_ledger(&dir_k.join("candidates.jsonl"));
    let same_outcome = rec_a.len() == rec_k.len()
        && rec_a.iter().zip(&rec_k).all(|(a, k)| {
            a.id == k.id
                && a.strategy.ratios == k.strategy.ratios
                && a.acc_vanilla == k.acc_vanilla
                && a.acc_adaptive == k.acc_adaptive
        });

    verdict(
        "C10",
        identical && prefix_intact && no_recompute && same_outcome,
        &format!(
            "double run byte-identical: {identical}; {survived} pre-kill rows kept verbatim, every id evaluated once after resume, resumed run matches the uninterrupted ledger"
        ),
    );
}
