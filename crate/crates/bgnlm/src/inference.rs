//! Renormalized model posteriors, marginal inclusion probabilities,
//! model-averaged prediction and the power/FDR recovery protocol.

use std::collections::HashSet;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::feature::{evaluate, TransformLibrary};
use crate::glm::{Family, FamilySpec};
use crate::gmjmcmc::MergedRun;

/// Model-averaging weight floor: models below this posterior mass are
/// dropped from prediction and the rest renormalized.
pub const BMA_WEIGHT_FLOOR: f64 = 1e-4;

/// Posterior probabilities from unnormalized log values via logsumexp.
/// Entries at -inf map to exactly zero.
pub fn renormalize_logs(logs: &[f64]) -> Result<Vec<f64>> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logs.is_empty() || !max.is_finite() {
        return Err(Error::AllModelsInvalid);
    }
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    Ok(logs
        .iter()
        .map(|l| {
            if *l == f64::NEG_INFINITY {
                0.0
            } else {
                (l - max).exp() / sum
            }
        })
        .collect())
}

/// Renormalized posterior over the ledger's models, aligned with entry order.
pub fn renormalize(merged: &MergedRun) -> Result<Vec<f64>> {
    let logs: Vec<f64> = merged
        .entries
        .values()
        .map(|e| e.log_ml + e.log_prior)
        .collect();
    renormalize_logs(&logs)
}

/// mip(s) = sum of posteriors of models containing signature s, for every
/// signature in the universe.
pub fn marginal_inclusion(
    model_posteriors: &[f64],
    merged: &MergedRun,
) -> IndexMap<String, f64> {
    let mut mip: IndexMap<String, f64> = merged
        .universe
        .keys()
        .map(|s| (s.clone(), 0.0))
        .collect();
    for ((key, _), &p) in merged.entries.iter().zip(model_posteriors) {
        for sig in key {
            if let Some(v) = mip.get_mut(sig) {
                *v += p;
            }
        }
    }
    mip
}

#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub model_posteriors: Vec<f64>,
    pub mip: IndexMap<String, f64>,
    /// (sorted signature set, posterior), descending.
    pub top_models: Vec<(Vec<String>, f64)>,
}

pub fn summarize(merged: &MergedRun) -> Result<PosteriorSummary> {
    let model_posteriors = renormalize(merged)?;
    let mip = marginal_inclusion(&model_posteriors, merged);
    let mut top_models: Vec<(Vec<String>, f64)> = merged
        .entries
        .keys()
        .cloned()
        .zip(model_posteriors.iter().copied())
        .collect();
    top_models.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(PosteriorSummary {
        model_posteriors,
        mip,
        top_models,
    })
}

/// Bayesian-model-averaged prediction on new raw covariates. Features are
/// evaluated internally and standardized with the training parameters stored
/// in the universe. Models with posterior below the weight floor are dropped
/// and the remaining weights renormalized.
pub fn predict_bma(
    summary: &PosteriorSummary,
    merged: &MergedRun,
    x_new: &DMatrix<f64>,
    lib: &TransformLibrary,
    fam: &FamilySpec,
) -> Result<DVector<f64>> {
    let n = x_new.nrows();
    let selected: Vec<(usize, f64)> = summary
        .model_posteriors
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= BMA_WEIGHT_FLOOR)
        .map(|(i, &p)| (i, p))
        .collect();
    let total: f64 = selected.iter().map(|(_, p)| p).sum();
    if selected.is_empty() || total <= 0.0 {
        return Err(Error::AllModelsInvalid);
    }
    let mut yhat = DVector::zeros(n);
    for (idx, p) in selected {
        let (key, entry) = merged.entries.get_index(idx).expect("aligned index");
        let beta = entry
            .beta
            .as_ref()
            .ok_or_else(|| Error::MissingFit(format!("{key:?}")))?;
        let mut eta = DVector::from_element(n, beta[0]);
        for (c, sig) in entry.column_sigs.iter().enumerate() {
            let feat = merged
                .universe
                .get(sig)
                .ok_or_else(|| Error::MissingFit(sig.clone()))?;
            let raw = evaluate(&feat.feature, x_new, lib)?;
            let coef = beta[c + 1];
            for i in 0..n {
                eta[i] += coef * (raw[i] - feat.mean) / feat.sd;
            }
        }
        let w = p / total;
        match fam.family {
            Family::Gaussian => yhat += w * eta,
            Family::Bernoulli => {
                for i in 0..n {
                    let e = eta[i];
                    let mu = if e >= 0.0 {
                        1.0 / (1.0 + (-e).exp())
                    } else {
                        e.exp() / (1.0 + e.exp())
                    };
                    yhat[i] += w * mu;
                }
            }
        }
    }
    Ok(yhat)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub corr: f64,
}

pub fn metrics(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(Error::DegenerateInput("need equal lengths >= 2"));
    }
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    for i in 0..pred.len() {
        let d = pred[i] - truth[i];
        se += d * d;
        ae += d.abs();
    }
    let mp = pred.sum() / n;
    let mt = truth.sum() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    for i in 0..pred.len() {
        cov += (pred[i] - mp) * (truth[i] - mt);
        vp += (pred[i] - mp) * (pred[i] - mp);
        vt += (truth[i] - mt) * (truth[i] - mt);
    }
    if vt <= 0.0 {
        return Err(Error::DegenerateInput("constant truth: correlation undefined"));
    }
    let corr = if vp <= 0.0 { 0.0 } else { cov / (vp * vt).sqrt() };
    Ok(Metrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        corr,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    /// Fraction of merged results discovering at least one true feature.
    pub power: f64,
    /// Mean false-positive count per merged result.
    pub expected_fp: f64,
    /// Aggregate-ratio FDR: sum FP / (sum FP + sum TP), 0/0 -> 0.
    pub fdr: f64,
    /// Secondary reading: mean of per-run FP/(FP+TP).
    pub fdr_per_run_mean: f64,
    pub discoveries: Vec<Vec<String>>,
}

/// Discovery protocol over merged results: a signature is discovered when
/// its mip exceeds the threshold; a run scores one true positive when any
/// true signature is discovered, and every discovered non-true signature
/// counts as a false positive.
pub fn power_fdr(
    merged_mips: &[IndexMap<String, f64>],
    true_signatures: &HashSet<String>,
    threshold: f64,
) -> RecoveryReport {
    assert!(threshold > 0.0 && threshold < 1.0);
    let k = merged_mips.len();
    let mut tp_total = 0u64;
    let mut fp_total = 0u64;
    let mut per_run_fdr = 0.0;
    let mut discoveries = Vec::with_capacity(k);
    for mips in merged_mips {
        let mut found: Vec<String> = mips
            .iter()
            .filter(|(_, &p)| p > threshold)
            .map(|(s, _)| s.clone())
            .collect();
        found.sort();
        let tp = u64::from(found.iter().any(|s| true_signatures.contains(s)));
        let fp = found.iter().filter(|s| !true_signatures.contains(*s)).count() as u64;
        tp_total += tp;
        fp_total += fp;
        if tp + fp > 0 {
            per_run_fdr += fp as f64 / (tp + fp) as f64;
        }
        discoveries.push(found);
    }
    let kf = k.max(1) as f64;
    let fdr = if fp_total + tp_total == 0 {
        0.0
    } else {
        fp_total as f64 / (fp_total + tp_total) as f64
    };
    RecoveryReport {
        power: tp_total as f64 / kf,
        expected_fp: fp_total as f64 / kf,
        fdr,
        fdr_per_run_mean: per_run_fdr / kf,
        discoveries,
    }
}
