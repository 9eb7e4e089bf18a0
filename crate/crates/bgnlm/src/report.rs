//! Report emission: TSV tables (tab separators, `\n` endings) and JSON with
//! stable key order. Reports are byte-identical on replay except for the
//! `generated_at` field of the run stamp.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::gmjmcmc::{MergedRun, RunConfig};
use crate::inference::{Metrics, PosteriorSummary, RecoveryReport};

/// discoveries.tsv: signature, mip, oc, depth; descending mip, signatures
/// below 1e-4 omitted.
pub fn write_discoveries(path: &Path, summary: &PosteriorSummary, merged: &MergedRun) -> Result<()> {
    let mut rows: Vec<(&String, f64)> = summary
        .mip
        .iter()
        .filter(|(_, &p)| p >= 1e-4)
        .map(|(s, &p)| (s, p))
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "signature\tmip\toc\tdepth")?;
    for (sig, p) in rows {
        let feat = &merged.universe[sig].feature;
        writeln!(out, "{sig}\t{p:.6}\t{}\t{}", feat.oc, feat.depth)?;
    }
    out.flush()?;
    Ok(())
}

/// models.tsv: top models by posterior; the key is the sorted signature set
/// joined with `+` ("<intercept-only>" for the empty model).
pub fn write_models(path: &Path, summary: &PosteriorSummary, limit: usize) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "model\tposterior")?;
    for (key, p) in summary.top_models.iter().take(limit) {
        let label = if key.is_empty() {
            "<intercept-only>".to_string()
        } else {
            key.join("+")
        };
        writeln!(out, "{label}\t{p:.6}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_metrics(path: &Path, metrics: &Metrics) -> Result<()> {
    write_json(path, metrics)
}

pub fn write_recovery(path: &Path, report: &RecoveryReport) -> Result<()> {
    write_json(path, report)
}

/// Full replay stamp: command, config and the seed of every chain per
/// repetition. `generated_at` is the only field excluded from replay
/// comparisons.
#[derive(Serialize)]
pub struct RunStamp<'a> {
    pub command: String,
    pub data_path: String,
    pub response: String,
    pub config: &'a RunConfig,
    pub chain_seeds: Vec<Vec<u64>>,
    pub generated_at: u64,
}

pub fn write_stamp(path: &Path, stamp: &RunStamp) -> Result<()> {
    write_json(path, stamp)
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
