//! Subsampling-based stochastic GLM fitter: subsampled IRLS warm start
//! followed by minibatch SGD refinement. Drop-in compatible with the
//! full-data IRLS estimator; degenerates to it exactly at fraction 1 with no
//! SGD steps.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{gather_rows, 
    implied_dispersion, log_likelihood, score, wls_update, DesignMatrix, Family, FamilySpec,
    FitResult, BETA_CAP, ETA_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSchedule {
    /// Fraction of rows used per subsample, in (0, 1].
    pub fraction: f64,
    pub irls_iters: usize,
    pub sgd_iters: usize,
    /// Step size relative to the per-observation mean gradient.
    pub sgd_step0: f64,
    pub sgd_decay: f64,
}

impl Default for SubsampleSchedule {
    fn default() -> Self {
        Self {
            fraction: 1.0,
            irls_iters: 20,
            sgd_iters: 200,
            sgd_step0: 0.05,
            sgd_decay: 0.01,
        }
    }
}

impl SubsampleSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config("fraction must be in (0, 1]".into()));
        }
        if !(self.sgd_step0 > 0.0) || !(self.sgd_decay > 0.0 && self.sgd_decay <= 1.0) {
            return Err(Error::Config("invalid SGD step schedule".into()));
        }
        Ok(())
    }
}

/// Uniform without-replacement index set of size
/// `max(ceil(fraction * n), min(n, min_rows))`. The full index range is
/// returned without touching the rng when the size reaches `n`.
pub fn subsample_indices(n: usize, fraction: f64, min_rows: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(n >= 1 && fraction > 0.0 && fraction <= 1.0);
    let s = ((fraction * n as f64).ceil() as usize).max(min_rows.min(n)).min(n);
    if s == n {
        return (0..n).collect();
    }
    // Floyd's algorithm: O(s) draws regardless of n, which matters when this
    // runs once per SGD minibatch on tall data. A plain boolean membership
    // vector beats a hash set here.
    let mut seen = vec![false; n];
    let mut idx: Vec<usize> = Vec::with_capacity(s);
    for j in (n - s)..n {
        let t = rng.gen_range(0..=j);
        if seen[t] {
            seen[j] = true;
            idx.push(j);
        } else {
            seen[t] = true;
            idx.push(t);
        }
    }
    idx.sort_unstable();
    idx
}

/// Subsampled IRLS warm start: each iteration solves the weighted normal
/// equations of a fresh subsample, scaled by n/|subsample|. Returns the final
/// beta iterate plus the iteration count and the convergence flag of the
/// stopping rule (shared with the full-data fit when the fraction is 1).
pub fn s_irls_warmstart(
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    schedule: &SubsampleSchedule,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<(DVector<f64>, usize, bool)> {
    schedule.validate()?;
    let n = x.n();
    let d = x.p() + 1;
    let mut beta = DVector::zeros(d);
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=schedule.irls_iters {
        let idx = subsample_indices(n, schedule.fraction, d, rng);
        let full = idx.len() == n;
        let scale = n as f64 / idx.len() as f64;
        let rows = if full { None } else { Some(idx.as_slice()) };
        let updated = match wls_update(&beta, x, y, fam, rows, scale) {
            Ok(b) => b,
            Err(Error::RankDeficient) if !full => {
                // Redraw once, then signal.
                let idx2 = subsample_indices(n, schedule.fraction, d, rng);
                wls_update(&beta, x, y, fam, Some(&idx2), n as f64 / idx2.len() as f64)?
            }
            Err(e) => return Err(e),
        };
        beta = updated;
        iterations = it;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("beta iterate"));
        }
        match fam.family {
            Family::Gaussian => {
                if full {
                    converged = true;
                    break;
                }
            }
            Family::Bernoulli => {
                let s = if full {
                    score(&beta, x, y, fam)
                } else {
                    minibatch_gradient(&beta, x, y, fam, &idx, scale)
                };
                if s.amax() <= tol {
                    converged = true;
                    break;
                }
            }
        }
    }
    Ok((beta, iterations, converged))
}

/// Minibatch estimate of the full-data score at `beta`, i.e. the batch
/// gradient scaled by `scale` (= n / batch size for an unbiased surrogate).
pub fn minibatch_gradient(
    beta: &DVector<f64>,
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    rows: &[usize],
    scale: f64,
) -> DVector<f64> {
    // Gather the batch rows contiguously before the products; strided row
    // views into the column-major design would dominate the gradient cost.
    let xb = gather_rows(x.matrix(), rows);
    let yb = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    let eta = &xb * beta;
    let resid = DVector::from_fn(rows.len(), |i, _| match fam.family {
        // Unit-dispersion gaussian gradient: dispersion only rescales the
        // direction and is unknown mid-fit.
        Family::Gaussian => yb[i] - eta[i],
        Family::Bernoulli => {
            let ec = eta[i].clamp(-ETA_CAP, ETA_CAP);
            let mu = if ec >= 0.0 {
                1.0 / (1.0 + (-ec).exp())
            } else {
                ec.exp() / (1.0 + ec.exp())
            };
            yb[i] - mu
        }
    });
    scale * xb.tr_mul(&resid)
}

/// Minibatch gradient-ascent refinement. The step at iteration t is
/// `sgd_step0 / (1 + sgd_decay * t)` applied to the per-observation mean
/// gradient; the returned coefficients are the tail average of the second
/// half of the iterates (Polyak-Ruppert averaging), which shrinks the
/// stationary minibatch noise without extra passes over the data. The
/// reported log-likelihood is always the full-data value. Converged when
/// the norm of the averaged last-10 mean-gradient estimates drops below
/// 10 * tol.
pub fn sgd_refine(
    beta0: &DVector<f64>,
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    schedule: &SubsampleSchedule,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<(FitResult, Vec<usize>)> {
    schedule.validate()?;
    if beta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("beta0"));
    }
    let n = x.n();
    let d = x.p() + 1;
    let mut beta = beta0.clone();
    let mut last_rows: Vec<usize> = (0..n).collect();
    let window = 10usize.min(schedule.sgd_iters.max(1));
    let mut recent: Vec<DVector<f64>> = Vec::with_capacity(window);
    let tail_start = schedule.sgd_iters / 2;
    let mut tail_sum = DVector::zeros(d);
    let mut tail_count = 0usize;
    for t in 0..schedule.sgd_iters {
        let idx = subsample_indices(n, schedule.fraction, d, rng);
        let b = idx.len() as f64;
        let g_mean = minibatch_gradient(&beta, x, y, fam, &idx, 1.0 / b);
        let step = schedule.sgd_step0 / (1.0 + schedule.sgd_decay * t as f64);
        beta += step * &g_mean;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedNonFinite(t));
        }
        if t >= tail_start {
            tail_sum += &beta;
            tail_count += 1;
        }
        if recent.len() == window {
            recent.remove(0);
        }
        recent.push(g_mean);
        last_rows = idx;
    }
    if tail_count > 0 {
        beta = tail_sum / tail_count as f64;
    }
    let converged = if schedule.sgd_iters == 0 {
        false
    } else {
        let mut avg = DVector::zeros(d);
        for g in &recent {
            avg += g;
        }
        avg /= recent.len() as f64;
        avg.norm() < 10.0 * tol
    };
    let log_lik = log_likelihood(&beta, x, y, fam)?;
    let dispersion = implied_dispersion(&beta, x, y, fam);
    let mut converged = converged;
    if beta.amax() > BETA_CAP {
        converged = false;
    }
    Ok((
        FitResult {
            beta,
            log_lik,
            dispersion,
            converged,
            iterations: schedule.sgd_iters,
        },
        last_rows,
    ))
}

/// Warm start then SGD refinement. With fraction 1 and no SGD steps this is
/// exactly the full-data IRLS fit (same code path, same floats).
pub fn sirls_sgd_fit(
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    schedule: &SubsampleSchedule,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<FitResult> {
    sirls_sgd_fit_detailed(x, y, fam, schedule, tol, rng).map(|(fit, _)| fit)
}

/// As `sirls_sgd_fit`, additionally returning the final subsample rows (for
/// subsampled Hessian evaluation downstream).
pub fn sirls_sgd_fit_detailed(
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    schedule: &SubsampleSchedule,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<(FitResult, Vec<usize>)> {
    let (beta, iterations, warm_converged) = s_irls_warmstart(x, y, fam, schedule, tol, rng)?;
    if schedule.sgd_iters == 0 {
        let log_lik = log_likelihood(&beta, x, y, fam)?;
        let dispersion = implied_dispersion(&beta, x, y, fam);
        let mut converged = warm_converged;
        if beta.amax() > BETA_CAP {
            converged = false;
        }
        let n = x.n();
        return Ok((
            FitResult {
                beta,
                log_lik,
                dispersion,
                converged,
                iterations,
            },
            (0..n).collect(),
        ));
    }
    sgd_refine(&beta, x, y, fam, schedule, tol, rng)
}
