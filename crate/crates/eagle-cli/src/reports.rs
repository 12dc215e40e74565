//! Result-file plumbing: append-only JSON-lines for crash-resumable state,
//! CSV for plot-ready reports. Floats are written with Rust's shortest
//! round-trip formatting, so equal runs produce byte-identical files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use eagle_core::correlation::CorrelationReport;
use eagle_core::search::{BnChannelDistance, CandidateRecord};
use eagle_core::{Error, Result};

/// Appends one JSON line and flushes, so a killed process leaves at worst a
/// truncated final line (which the reader skips).
pub fn append_jsonl<S: Serialize>(path: &Path, row: &S) -> Result<()> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(row).map_err(|e| Error::DataFormat {
        path: path.to_path_buf(),
        detail: format!("serialization failed: {e}"),
    })?;
    writeln!(file, "{line}")?;
    file.flush()?;
    Ok(())
}

/// Truncates a trailing partial line left by a killed writer, so the next
/// append starts on a fresh line instead of gluing onto the fragment and
/// corrupting it into an unreadable row. Returns the number of bytes cut.
pub fn repair_jsonl_tail(path: &Path) -> Result<u64> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e.into()),
    };
    if text.is_empty() || text.ends_with('\n') {
        return Ok(0);
    }
    let keep = text.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let file = std::fs::OpenOptions::new().write(true).open(path)?;
    file.set_len(keep as u64)?;
    Ok((text.len() - keep) as u64)
}

/// Reads a candidate results file, keeping the LAST line per candidate id
/// (later lines carry fine-tuning updates). A missing file is an empty run;
/// a truncated final line (crash artifact) is skipped; anything else
/// malformed is an error.
pub fn read_candidates(path: &Path) -> Result<Vec<CandidateRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut latest: BTreeMap<usize, CandidateRecord> = BTreeMap::new();
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CandidateRecord>(line) {
            Ok(record) => {
                latest.insert(record.id, record);
            }
            Err(e) => {
                let last = i + 1 == lines.len() && !text.ends_with('\n');
                if last {
                    continue;
                }
                return Err(Error::DataFormat {
                    path: path.to_path_buf(),
                    detail: format!("line {}: {e}", i + 1),
                });
            }
        }
    }
    Ok(latest.into_values().collect())
}

pub fn write_candidates_csv(path: &Path, records: &[CandidateRecord]) -> Result<()> {
    let mut rows: Vec<&CandidateRecord> = records.iter().collect();
    rows.sort_by_key(|r| r.id);
    let mut out = String::from("id,flops_ratio,acc_vanilla,acc_adaptive\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.id, r.strategy.realized_flops_ratio, r.acc_vanilla, r.acc_adaptive
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Evaluated-vs-fine-tuned scatter data: two rows (one per evaluation
/// method) for every candidate that has been fine-tuned.
pub fn write_scatter_csv(path: &Path, records: &[CandidateRecord]) -> Result<()> {
    let mut rows: Vec<&CandidateRecord> = records.iter().filter(|r| r.acc_finetuned.is_some()).collect();
    rows.sort_by_key(|r| r.id);
    let mut out = String::from("acc_evaluated,acc_finetuned,method\n");
    for r in rows {
        let y = r.acc_finetuned.expect("filtered above");
        out.push_str(&format!("{},{y},adaptive\n", r.acc_adaptive));
        out.push_str(&format!("{},{y},vanilla\n", r.acc_vanilla));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_correlation_csv(path: &Path, reports: &[CorrelationReport]) -> Result<()> {
    let mut out = String::from(
        "constraint,pearson_adaptive,pearson_vanilla,spearman_adaptive,spearman_vanilla,\
         kendall_adaptive,kendall_vanilla\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.pearson_adaptive,
            r.pearson_vanilla,
            r.spearman_adaptive,
            r.spearman_vanilla,
            r.kendall_adaptive,
            r.kendall_vanilla
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Rows come zipped: inherited-vs-reference and recalibrated-vs-reference
/// distances for the same (layer, channel).
pub fn write_bn_distance_csv(
    path: &Path,
    global: &[BnChannelDistance],
    adaptive: &[BnChannelDistance],
) -> Result<()> {
    let mut out = String::from("layer,channel,d_mean_global,d_mean_adaptive,d_var_global,d_var_adaptive\n");
    for (g, a) in global.iter().zip(adaptive) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            g.layer, g.channel, g.d_mean, a.d_mean, g.d_var, a.d_var
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Makes a constraint label safe for file names ("50%" becomes "50pct").
pub fn sanitize_label(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '%' => out.push_str("pct"),
            c if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' => out.push(c),
            _ => out.push('_'),
        }
    }
    out
}
