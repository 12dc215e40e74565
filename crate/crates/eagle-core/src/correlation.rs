//! Rank and linear correlation between cheap sub-net scores and their
//! fine-tuned accuracies.
//!
//! Three coefficients: Pearson (linear), Spearman (monotone, via average
//! fractional ranks), and Kendall tau-b (pairwise concordance with tie
//! correction; evaluated accuracies on a small scoring split tie often, so
//! the untied tau would be ill-defined). Constant inputs are an error, not a
//! silent zero: a report full of zeros would look meaningful and be wrong.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::CandidateRecord;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Stat(format!(
            "correlation inputs have different lengths: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Stat(format!("need at least 2 points, got {}", x.len())));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::Stat(format!("correlation input contains non-finite value {v}")));
    }
    Ok(())
}

/// Linear correlation: sample covariance over the product of sample
/// standard deviations.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Stat(
            "correlation is undefined for a constant vector".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Average fractional ranks (1-based); tied values share the mean of the
/// positions they occupy.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Monotone correlation: Pearson on average fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

/// Kendall tau-b: (concordant - discordant) / sqrt((n0 - n1)(n0 - n2)) with
/// the standard tie terms, counted over all pairs in O(n^2).
pub fn kendall(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                ties_x += 1;
                ties_y += 1;
            } else if dx == 0.0 {
                ties_x += 1;
            } else if dy == 0.0 {
                ties_y += 1;
            } else if dx * dy > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Stat(
            "kendall tau is undefined when one vector is entirely tied".into(),
        ));
    }
    Ok((concordant - discordant) as f64 / denom)
}

/// One row of the correlation study: all six coefficients for a set of
/// candidates under one FLOPs-constraint label.
///
/// Columns are named by evaluation method (adaptive recalibration vs the
/// stale inherited statistics) rather than by symbol, because the source
/// material labels the two methods inconsistently across its tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub label: String,
    pub n: usize,
    pub pearson_adaptive: f64,
    pub pearson_vanilla: f64,
    pub spearman_adaptive: f64,
    pub spearman_vanilla: f64,
    pub kendall_adaptive: f64,
    pub kendall_vanilla: f64,
}

/// Correlates both evaluation methods' scores against the fine-tuned
/// accuracy over a candidate set. Every record must carry a fine-tuned
/// accuracy and there must be at least 3 of them.
pub fn build_report(records: &[CandidateRecord], label: &str) -> Result<CorrelationReport> {
    if records.len() < 3 {
        return Err(Error::Stat(format!(
            "correlation report needs at least 3 candidates, got {}",
            records.len()
        )));
    }
    let mut adaptive = Vec::with_capacity(records.len());
    let mut vanilla = Vec::with_capacity(records.len());
    let mut finetuned = Vec::with_capacity(records.len());
    for record in records {
        let y = record.acc_finetuned.ok_or_else(|| {
            Error::Stat(format!("candidate {} has no fine-tuned accuracy", record.id))
        })?;
        adaptive.push(record.acc_adaptive);
        vanilla.push(record.acc_vanilla);
        finetuned.push(y);
    }
    Ok(CorrelationReport {
        label: label.to_string(),
        n: records.len(),
        pearson_adaptive: pearson(&adaptive, &finetuned)?,
        pearson_vanilla: pearson(&vanilla, &finetuned)?,
        spearman_adaptive: spearman(&adaptive, &finetuned)?,
        spearman_vanilla: spearman(&vanilla, &finetuned)?,
        kendall_adaptive: kendall(&adaptive, &finetuned)?,
        kendall_vanilla: kendall(&vanilla, &finetuned)?,
    })
}
