//! Memoized model scoring: maps an inclusion set of features to a marginal
//! likelihood estimate and a fitted coefficient vector, caching by the
//! model's feature-id key so the estimator runs at most once per distinct
//! model per chain.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::feature::{evaluate, Feature, TransformLibrary};
use crate::glm::{
    aic_proxy_log_marginal, irls_fit, laplace_log_marginal, laplace_log_marginal_subsampled,
    DesignMatrix, FamilySpec, MlMethod, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::sirls::{sirls_sgd_fit_detailed, SubsampleSchedule};

/// Convergence tolerance handed to the SGD refinement stage; the flag is a
/// diagnostic on the stochastic mean-gradient, not an optimality proof.
pub const SGD_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    LaplaceFull,
    SirlsSgd { schedule: SubsampleSchedule },
    AicProxy,
}

/// A feature interned into a chain's universe, with its standardized
/// training column cached.
pub struct FeatureInfo {
    pub feature: Arc<Feature>,
    /// Standardized column (mean 0, sd 1 over the training rows); all zeros
    /// when the raw column is constant, which downstream fits reject as
    /// rank deficient.
    pub column: DVector<f64>,
    pub mean: f64,
    pub sd: f64,
    pub constant: bool,
}

pub struct Universe {
    pub infos: Vec<FeatureInfo>,
    index: HashMap<String, u32>,
    /// Projection of each info's column onto a fixed pseudo-random direction,
    /// used to shortlist duplicate-column candidates.
    proj: DVector<f64>,
    z: Vec<f64>,
}

impl Universe {
    pub fn new() -> Self {
        Self {
            infos: Vec::new(),
            index: HashMap::new(),
            proj: DVector::zeros(0),
            z: Vec::new(),
        }
    }

    pub fn get(&self, signature: &str) -> Option<u32> {
        self.index.get(signature).copied()
    }

    pub fn info(&self, id: u32) -> &FeatureInfo {
        &self.infos[id as usize]
    }

    pub fn len(&self) -> usize {
        self.infos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infos.is_empty()
    }

    /// Lazily sized fixed pseudo-random direction for duplicate shortlisting.
    fn projection(&mut self, n: usize) -> &DVector<f64> {
        if self.proj.len() != n {
            let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15);
            self.proj = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        }
        &self.proj
    }

    /// Interns a feature, evaluating and standardizing its training column.
    /// Returns the existing id when the signature is already present or when
    /// the column duplicates an existing feature's column up to sign.
    pub fn intern(
        &mut self,
        feature: Arc<Feature>,
        x_raw: &DMatrix<f64>,
        lib: &TransformLibrary,
    ) -> crate::Result<u32> {
        if let Some(&id) = self.index.get(&feature.signature) {
            return Ok(id);
        }
        let raw = evaluate(&feature, x_raw, lib)?;
        let n = raw.len() as f64;
        let mean = raw.sum() / n;
        let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let constant = !(sd > 1e-12);
        let column = if constant {
            DVector::zeros(raw.len())
        } else {
            raw.map(|v| (v - mean) / sd)
        };
        // Canonicalize duplicate predictors: a column identical (up to sign)
        // to an already-interned one is the same predictor — e.g. any
        // monotone transform of a binary covariate standardizes back to the
        // covariate itself. The signature maps to the existing id, so
        // populations, models, and inclusion probabilities all attribute to
        // the first (simplest) representative.
        let zn = if constant { 0.0 } else { column.dot(self.projection(column.len())) };
        if !constant {
            let nf = column.len() as f64;
            let tol = 1e-5 * nf.sqrt();
            for i in 0..self.infos.len() {
                let info = &self.infos[i];
                if info.constant || (zn.abs() - self.z[i].abs()).abs() > tol {
                    continue;
                }
                if (column.dot(&info.column) / nf).abs() >= 1.0 - 1e-8 {
                    let id = i as u32;
                    self.index.insert(feature.signature.clone(), id);
                    return Ok(id);
                }
            }
        }
        let id = self.infos.len() as u32;
        self.index.insert(feature.signature.clone(), id);
        self.z.push(zn);
        self.infos.push(FeatureInfo {
            feature,
            column,
            mean,
            sd,
            constant,
        });
        Ok(id)
    }
}

/// Result of scoring one model. Invalid models (rank deficient, diverged,
/// unconverged) carry `log_ml = -inf` and no coefficients.
#[derive(Debug, Clone)]
pub struct ModelEval {
    pub log_ml: f64,
    pub method: MlMethod,
    pub subsample_fraction: f64,
    pub beta: Option<DVector<f64>>,
}

pub struct Evaluator {
    pub fam: FamilySpec,
    pub kind: EstimatorKind,
    pub prior_var: f64,
    y: DVector<f64>,
    cache: HashMap<Vec<u32>, Arc<ModelEval>>,
    rng: ChaCha8Rng,
    /// Distinct estimator invocations (instrumentation for the memoization
    /// contract).
    pub eval_count: usize,
}

impl Evaluator {
    pub fn new(y: DVector<f64>, fam: FamilySpec, kind: EstimatorKind, prior_var: f64, seed: u64) -> Self {
        Self {
            fam,
            kind,
            prior_var,
            y,
            cache: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5f3759df),
            eval_count: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Scores the model given by a sorted feature-id key, memoized per chain.
    pub fn eval(&mut self, key: &[u32], universe: &Universe) -> Arc<ModelEval> {
        debug_assert!(key.windows(2).all(|w| w[0] < w[1]));
        if let Some(hit) = self.cache.get(key) {
            return Arc::clone(hit);
        }
        self.eval_count += 1;
        let result = Arc::new(self.compute(key, universe));
        self.cache.insert(key.to_vec(), Arc::clone(&result));
        result
    }

    fn compute(&mut self, key: &[u32], universe: &Universe) -> ModelEval {
        let invalid = |method: MlMethod| ModelEval {
            log_ml: f64::NEG_INFINITY,
            method,
            subsample_fraction: 1.0,
            beta: None,
        };
        let cols: Vec<&DVector<f64>> = key.iter().map(|&id| &universe.info(id).column).collect();
        let n = self.y.len();
        if n < key.len() + 1 || key.iter().any(|&id| universe.info(id).constant) {
            return invalid(self.method_tag());
        }
        let x = match DesignMatrix::from_columns(n, &cols) {
            Ok(x) => x,
            Err(_) => return invalid(self.method_tag()),
        };
        match self.kind {
            EstimatorKind::LaplaceFull => {
                match irls_fit(&x, &self.y, &self.fam, DEFAULT_MAX_ITER, DEFAULT_TOL) {
                    Ok(fit) if fit.converged => {
                        match laplace_log_marginal(&fit, &x, &self.y, &self.fam, self.prior_var) {
                            Ok(est) => ModelEval {
                                log_ml: est.log_value,
                                method: est.method,
                                subsample_fraction: est.subsample_fraction,
                                beta: Some(fit.beta),
                            },
                            Err(_) => invalid(MlMethod::LaplaceFull),
                        }
                    }
                    _ => invalid(MlMethod::LaplaceFull),
                }
            }
            EstimatorKind::AicProxy => {
                match irls_fit(&x, &self.y, &self.fam, DEFAULT_MAX_ITER, DEFAULT_TOL) {
                    Ok(fit) if fit.converged => {
                        let est = aic_proxy_log_marginal(&fit);
                        ModelEval {
                            log_ml: est.log_value,
                            method: est.method,
                            subsample_fraction: est.subsample_fraction,
                            beta: Some(fit.beta),
                        }
                    }
                    _ => invalid(MlMethod::AicProxy),
                }
            }
            EstimatorKind::SirlsSgd { schedule } => {
                match sirls_sgd_fit_detailed(&x, &self.y, &self.fam, &schedule, SGD_TOL, &mut self.rng)
                {
                    Ok((fit, rows)) if fit.converged => {
                        match laplace_log_marginal_subsampled(
                            &fit,
                            &x,
                            &self.y,
                            &self.fam,
                            self.prior_var,
                            &rows,
                        ) {
                            Ok(est) => ModelEval {
                                log_ml: est.log_value,
                                method: est.method,
                                subsample_fraction: est.subsample_fraction,
                                beta: Some(fit.beta),
                            },
                            Err(_) => invalid(MlMethod::LaplaceSubsampled),
                        }
                    }
                    _ => invalid(MlMethod::LaplaceSubsampled),
                }
            }
        }
    }

    fn method_tag(&self) -> MlMethod {
        match self.kind {
            EstimatorKind::LaplaceFull => MlMethod::LaplaceFull,
            EstimatorKind::SirlsSgd { .. } => MlMethod::LaplaceSubsampled,
            EstimatorKind::AicProxy => MlMethod::AicProxy,
        }
    }

    pub fn into_y(self) -> DVector<f64> {
        self.y
    }
}
