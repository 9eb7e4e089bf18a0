//! Exponential-family likelihoods, IRLS fitting and marginal likelihood
//! approximations for a fixed design matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cap on the linear predictor inside IRLS weight computations; keeps
/// separated bernoulli fits finite.
pub const ETA_CAP: f64 = 30.0;
/// Coefficient magnitude beyond which a bernoulli fit is declared divergent.
pub const BETA_CAP: f64 = 1e4;
/// Relative pivot threshold for rank detection in the weighted normal equations.
pub const PIVOT_REL_TOL: f64 = 1e-10;

pub const DEFAULT_MAX_ITER: usize = 25;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_BETA_PRIOR_VAR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Identity,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DispersionMode {
    Estimated,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub link: Link,
    pub dispersion_mode: DispersionMode,
}

impl FamilySpec {
    pub fn new(family: Family, link: Link, dispersion_mode: DispersionMode) -> Result<Self> {
        match (family, link) {
            (Family::Gaussian, Link::Identity) | (Family::Bernoulli, Link::Logit) => {}
            _ => {
                return Err(Error::Config(
                    "gaussian pairs with identity, bernoulli with logit".into(),
                ))
            }
        }
        if let DispersionMode::Fixed(v) = dispersion_mode {
            if !(v > 0.0) {
                return Err(Error::Config("fixed dispersion must be positive".into()));
            }
        }
        Ok(Self {
            family,
            link,
            dispersion_mode,
        })
    }

    pub fn gaussian() -> Self {
        Self::new(Family::Gaussian, Link::Identity, DispersionMode::Estimated).unwrap()
    }

    pub fn gaussian_fixed(sigma2: f64) -> Self {
        Self::new(
            Family::Gaussian,
            Link::Identity,
            DispersionMode::Fixed(sigma2),
        )
        .unwrap()
    }

    pub fn bernoulli() -> Self {
        Self::new(Family::Bernoulli, Link::Logit, DispersionMode::Fixed(1.0)).unwrap()
    }
}

/// Design matrix with an explicit all-ones intercept in column 0.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("design matrix"));
        }
        if values.ncols() == 0 || values.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Config("column 0 must be the all-ones intercept".into()));
        }
        Ok(Self { values })
    }

    /// Builds an intercept column plus the given feature columns.
    pub fn from_columns(n: usize, cols: &[&DVector<f64>]) -> Result<Self> {
        let mut m = DMatrix::zeros(n, cols.len() + 1);
        m.column_mut(0).fill(1.0);
        for (j, c) in cols.iter().enumerate() {
            if c.len() != n {
                return Err(Error::Config("column length mismatch".into()));
            }
            m.set_column(j + 1, c);
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Non-intercept column count.
    pub fn p(&self) -> usize {
        self.values.ncols() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub log_lik: f64,
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MlMethod {
    LaplaceFull,
    LaplaceSubsampled,
    AicProxy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalLikEstimate {
    pub log_value: f64,
    pub method: MlMethod,
    pub subsample_fraction: f64,
}

/// Contiguous copy of the given rows. Walks column-outer so both the source
/// column and the destination column stream sequentially; with sorted row
/// indices this is substantially faster than a row-outer gather on tall
/// column-major matrices.
pub(crate) fn gather_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let s = rows.len();
    let d = m.ncols();
    let mut out = DMatrix::<f64>::zeros(s, d);
    for j in 0..d {
        let src = m.column(j);
        let mut dst = out.column_mut(j);
        for (k, &i) in rows.iter().enumerate() {
            dst[k] = src[i];
        }
    }
    out
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)), stable for large |eta|.
fn ln_1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn check_inputs(x: &DesignMatrix, y: &DVector<f64>, fam: &FamilySpec) -> Result<()> {
    if y.len() != x.n() {
        return Err(Error::Config("response length does not match design rows".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("response"));
    }
    if fam.family == Family::Bernoulli && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Config("bernoulli response must be 0/1".into()));
    }
    Ok(())
}

/// Residual sum of squares at `beta`.
fn rss(beta: &DVector<f64>, x: &DesignMatrix, y: &DVector<f64>) -> f64 {
    let r = y - x.matrix() * beta;
    r.dot(&r)
}

/// Dispersion implied by the family spec at `beta` (plug-in RSS/n when estimated).
pub fn implied_dispersion(beta: &DVector<f64>, x: &DesignMatrix, y: &DVector<f64>, fam: &FamilySpec) -> f64 {
    match fam.family {
        Family::Bernoulli => 1.0,
        Family::Gaussian => match fam.dispersion_mode {
            DispersionMode::Fixed(v) => v,
            DispersionMode::Estimated => rss(beta, x, y) / x.n() as f64,
        },
    }
}

/// Exact log density/mass summed over rows.
pub fn log_likelihood(beta: &DVector<f64>, x: &DesignMatrix, y: &DVector<f64>, fam: &FamilySpec) -> Result<f64> {
    check_inputs(x, y, fam)?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("beta"));
    }
    let n = x.n() as f64;
    match fam.family {
        Family::Gaussian => {
            let ss = rss(beta, x, y);
            let phi = match fam.dispersion_mode {
                DispersionMode::Fixed(v) => v,
                DispersionMode::Estimated => ss / n,
            };
            Ok(-0.5 * n * (2.0 * std::f64::consts::PI * phi).ln() - 0.5 * ss / phi)
        }
        Family::Bernoulli => {
            let eta = x.matrix() * beta;
            let mut ll = 0.0;
            for i in 0..x.n() {
                ll += y[i] * eta[i] - ln_1p_exp(eta[i]);
            }
            Ok(ll)
        }
    }
}

/// Gradient of the log-likelihood with respect to beta.
pub fn score(beta: &DVector<f64>, x: &DesignMatrix, y: &DVector<f64>, fam: &FamilySpec) -> DVector<f64> {
    match fam.family {
        Family::Gaussian => {
            let phi = implied_dispersion(beta, x, y, fam);
            let r = y - x.matrix() * beta;
            x.matrix().tr_mul(&r) / phi
        }
        Family::Bernoulli => {
            let eta = x.matrix() * beta;
            let mu = eta.map(sigmoid);
            x.matrix().tr_mul(&(y - mu))
        }
    }
}

/// Solves the symmetric positive semi-definite system `a x = b` with a rank
/// check on the pivoted R diagonal. `a` is expected to be normal equations.
pub(crate) fn solve_pivoted(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let d0 = r[(0, 0)].abs();
    if d0 == 0.0 || !d0.is_finite() {
        return Err(Error::RankDeficient);
    }
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)].abs() <= PIVOT_REL_TOL * d0 {
            return Err(Error::RankDeficient);
        }
    }
    qr.solve(b).ok_or(Error::RankDeficient)
}

/// One weighted least-squares update at `beta` using only the rows in `rows`
/// (all rows when empty), with the normal equations scaled by `scale`.
pub(crate) fn wls_update(
    beta: &DVector<f64>,
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    rows: Option<&[usize]>,
    scale: f64,
) -> Result<DVector<f64>> {
    // Gather the working rows into a contiguous block once; the design is
    // column-major, so per-row strided access in the accumulation loop would
    // dominate the cost of a subsampled update on tall data.
    let xm = x.matrix();
    let gathered: DMatrix<f64>;
    let yg: DVector<f64>;
    let (xb, yb): (&DMatrix<f64>, &DVector<f64>) = match rows {
        Some(r) => {
            gathered = gather_rows(xm, r);
            yg = DVector::from_iterator(r.len(), r.iter().map(|&i| y[i]));
            (&gathered, &yg)
        }
        None => (xm, y),
    };
    let s = xb.nrows();
    let eta = xb * beta;
    let mut w = DVector::<f64>::zeros(s);
    let mut z = DVector::<f64>::zeros(s);
    for i in 0..s {
        match fam.family {
            Family::Gaussian => {
                w[i] = 1.0;
                z[i] = yb[i];
            }
            Family::Bernoulli => {
                let ec = eta[i].clamp(-ETA_CAP, ETA_CAP);
                let mu = sigmoid(ec);
                let wv = (mu * (1.0 - mu)).max(1e-10);
                w[i] = wv;
                z[i] = ec + (yb[i] - mu) / wv;
            }
        }
    }
    // Form W X by scaling columns elementwise, then use matrix products.
    let mut xw = xb.clone();
    for j in 0..xw.ncols() {
        let mut col = xw.column_mut(j);
        for i in 0..s {
            col[i] *= w[i];
        }
    }
    let xtwx = scale * xb.tr_mul(&xw);
    let xtwz = scale * xw.tr_mul(&z);
    solve_pivoted(&xtwx, &xtwz)
}

/// Full-data IRLS fit. Gaussian/identity reduces to a single least-squares
/// solve; bernoulli/logit iterates to `tol` on the sup-norm of the score.
pub fn irls_fit(
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    max_iter: usize,
    tol: f64,
) -> Result<FitResult> {
    check_inputs(x, y, fam)?;
    if x.n() < x.p() + 1 {
        return Err(Error::Config("need n >= p + 1 rows for a full-data fit".into()));
    }
    let mut beta = DVector::zeros(x.p() + 1);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        beta = wls_update(&beta, x, y, fam, None, 1.0)?;
        iterations = it;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("beta iterate"));
        }
        match fam.family {
            Family::Gaussian => {
                // The single weighted solve is the exact optimum.
                converged = true;
                break;
            }
            Family::Bernoulli => {
                let s = score(&beta, x, y, fam);
                if s.amax() <= tol {
                    converged = true;
                    break;
                }
            }
        }
    }
    if beta.amax() > BETA_CAP {
        converged = false;
    }
    let log_lik = log_likelihood(&beta, x, y, fam)?;
    let dispersion = implied_dispersion(&beta, x, y, fam);
    Ok(FitResult {
        beta,
        log_lik,
        dispersion,
        converged,
        iterations,
    })
}

/// Negative Hessian of the log-posterior (log-likelihood plus N(0, v I) prior)
/// at `beta`, accumulated over `rows` (all rows when `None`) and scaled by
/// `scale`. Gaussian dispersion is held fixed at `phi`.
fn neg_hessian_rows(
    beta: &DVector<f64>,
    x: &DesignMatrix,
    fam: &FamilySpec,
    phi: f64,
    prior_var: f64,
    rows: Option<&[usize]>,
    scale: f64,
) -> DMatrix<f64> {
    // Same contiguous-gather strategy as wls_update: row views into the
    // column-major design are strided and wreck the accumulation loop.
    let xm = x.matrix();
    let d = xm.ncols();
    let gathered: DMatrix<f64>;
    let xb: &DMatrix<f64> = match rows {
        Some(r) => {
            gathered = gather_rows(xm, r);
            &gathered
        }
        None => xm,
    };
    let s = xb.nrows();
    let mut xw = xb.clone();
    match fam.family {
        Family::Gaussian => {
            xw *= 1.0 / phi;
        }
        Family::Bernoulli => {
            let eta = xb * beta;
            let mut w = DVector::<f64>::zeros(s);
            for i in 0..s {
                let mu = sigmoid(eta[i].clamp(-ETA_CAP, ETA_CAP));
                w[i] = mu * (1.0 - mu);
            }
            for j in 0..d {
                let mut col = xw.column_mut(j);
                for i in 0..s {
                    col[i] *= w[i];
                }
            }
        }
    }
    let mut h = scale * xb.tr_mul(&xw);
    for a in 0..d {
        h[(a, a)] += 1.0 / prior_var;
    }
    h
}

fn neg_hessian(beta: &DVector<f64>, x: &DesignMatrix, fam: &FamilySpec, phi: f64, prior_var: f64) -> DMatrix<f64> {
    neg_hessian_rows(beta, x, fam, phi, prior_var, None, 1.0)
}

/// Laplace approximation of the log marginal likelihood under an independent
/// zero-mean gaussian coefficient prior. The mode of the log-posterior is
/// refined by Newton steps from the supplied fit before the quadratic
/// expansion is applied; gaussian dispersion stays plugged in from the fit.
pub fn laplace_log_marginal(
    fit: &FitResult,
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    beta_prior_var: f64,
) -> Result<MarginalLikEstimate> {
    assert!(fit.converged, "laplace_log_marginal requires a converged fit");
    let phi = fit.dispersion;
    let d = x.p() + 1;
    let mut beta = fit.beta.clone();
    // Newton refinement to the posterior mode (exact in one step for gaussian).
    for _ in 0..25 {
        let mut g = match fam.family {
            Family::Gaussian => {
                let r = y - x.matrix() * &beta;
                x.matrix().tr_mul(&r) / phi
            }
            Family::Bernoulli => score(&beta, x, y, fam),
        };
        g -= &beta / beta_prior_var;
        let h = neg_hessian(&beta, x, fam, phi, beta_prior_var);
        let step = h
            .clone()
            .cholesky()
            .ok_or(Error::HessianNotPd)?
            .solve(&g);
        beta += &step;
        if step.amax() <= 1e-12 {
            break;
        }
    }
    let h = neg_hessian(&beta, x, fam, phi, beta_prior_var);
    let chol = h.cholesky().ok_or(Error::HessianNotPd)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let ll = match fam.family {
        Family::Gaussian => {
            // Fixed plug-in dispersion from the fit.
            let ss = rss(&beta, x, y);
            let n = x.n() as f64;
            -0.5 * n * (2.0 * std::f64::consts::PI * phi).ln() - 0.5 * ss / phi
        }
        Family::Bernoulli => log_likelihood(&beta, x, y, fam)?,
    };
    let log_prior = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * beta_prior_var).ln()
        - 0.5 * beta.dot(&beta) / beta_prior_var;
    let log_value =
        ll + log_prior + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
    if !log_value.is_finite() {
        return Err(Error::HessianNotPd);
    }
    Ok(MarginalLikEstimate {
        log_value,
        method: MlMethod::LaplaceFull,
        subsample_fraction: 1.0,
    })
}

/// Laplace value with the Hessian evaluated on the final subsample only,
/// scaled by n/|subsample|. No mode refinement: the supplied beta is the
/// stochastic fit's iterate and the log-likelihood is the fit's full-data
/// value, so no extra O(n p^2) pass is needed.
pub fn laplace_log_marginal_subsampled(
    fit: &FitResult,
    x: &DesignMatrix,
    y: &DVector<f64>,
    fam: &FamilySpec,
    beta_prior_var: f64,
    rows: &[usize],
) -> Result<MarginalLikEstimate> {
    assert!(fit.converged, "laplace_log_marginal_subsampled requires a converged fit");
    let _ = y;
    let d = x.p() + 1;
    let n = x.n();
    let scale = n as f64 / rows.len() as f64;
    let full = rows.len() == n;
    let h = neg_hessian_rows(
        &fit.beta,
        x,
        fam,
        fit.dispersion,
        beta_prior_var,
        if full { None } else { Some(rows) },
        scale,
    );
    let chol = h.cholesky().ok_or(Error::HessianNotPd)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let log_prior = -0.5 * d as f64 * (2.0 * std::f64::consts::PI * beta_prior_var).ln()
        - 0.5 * fit.beta.dot(&fit.beta) / beta_prior_var;
    let log_value = fit.log_lik + log_prior + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * log_det;
    if !log_value.is_finite() {
        return Err(Error::HessianNotPd);
    }
    Ok(MarginalLikEstimate {
        log_value,
        method: MlMethod::LaplaceSubsampled,
        subsample_fraction: rows.len() as f64 / n as f64,
    })
}

/// AIC-style proxy: penalizes the maximized log-likelihood by the parameter count.
pub fn aic_proxy_log_marginal(fit: &FitResult) -> MarginalLikEstimate {
    assert!(fit.converged, "aic_proxy_log_marginal requires a converged fit");
    MarginalLikEstimate {
        log_value: fit.log_lik - fit.beta.len() as f64,
        method: MlMethod::AicProxy,
        subsample_fraction: 1.0,
    }
}
