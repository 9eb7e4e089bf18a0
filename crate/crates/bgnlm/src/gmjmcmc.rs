//! The generation loop: run MJMCMC per feature population, filter by
//! marginal inclusion probability, regenerate features, repeat T times.
//! Independent chains are merged by unioning ledgers and feature universes.

use std::collections::HashSet;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, EstimatorKind, Universe};
use crate::feature::{
    filter_population, generate_feature, Constraints, Feature, GenProbs, TransformLibrary,
};
use crate::glm::{FamilySpec, MlMethod};
use crate::sampler::{run_mjmcmc, ModelLedger, PopulationCtx, SamplerKnobs};

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ConstraintOverrides {
    pub max_depth: Option<u32>,
    pub max_width: Option<u32>,
    pub max_model_size: Option<usize>,
    pub pop_size: Option<usize>,
}

impl ConstraintOverrides {
    pub fn over(&self, base: Constraints) -> Constraints {
        Constraints {
            max_depth: self.max_depth.unwrap_or(base.max_depth),
            max_width: self.max_width.unwrap_or(base.max_width),
            max_model_size: self.max_model_size.unwrap_or(base.max_model_size),
            pop_size: self.pop_size.unwrap_or(base.pop_size),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RunConfig {
    /// Number of populations T.
    pub populations: usize,
    /// MJMCMC iterations per population.
    pub iterations: usize,
    /// Feature constraint overrides; unset fields take the defaults derived
    /// from the covariate count.
    pub constraints: ConstraintOverrides,
    /// Prior penalty base u in (0, 1).
    pub u: f64,
    pub estimator: EstimatorKind,
    pub beta_prior_var: f64,
    pub p_jump: f64,
    /// Large-jump bit count; defaults to ceil(pop_size / 4).
    pub jump_size: Option<usize>,
    pub opt_steps: usize,
    pub eps: f64,
    /// Number of independent chains (and the parallelism bound).
    pub threads: usize,
    pub seed: u64,
    pub gen_probs: GenProbs,
    pub filter_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            populations: 10,
            iterations: 1000,
            constraints: ConstraintOverrides::default(),
            u: (-2.0f64).exp(),
            estimator: EstimatorKind::LaplaceFull,
            beta_prior_var: crate::glm::DEFAULT_BETA_PRIOR_VAR,
            p_jump: 0.1,
            jump_size: None,
            opt_steps: 3,
            eps: 0.05,
            threads: 1,
            seed: 1,
            gen_probs: GenProbs::default(),
            filter_threshold: 0.5,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.populations < 1 || self.iterations < 1 {
            return Err(Error::Config("T and n_iter must be >= 1".into()));
        }
        if !(self.u > 0.0 && self.u < 1.0) {
            return Err(Error::Config("u must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.p_jump) || !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::Config("p_jump and eps must be in [0, 1]".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn constraints_for(&self, m: usize) -> Constraints {
        self.constraints.over(Constraints::default_for(m))
    }
}

/// Everything one chain produced: its union ledger across populations, the
/// per-population ledgers, and the feature universe.
pub struct ChainResult {
    pub ledger: ModelLedger,
    pub per_population: Vec<ModelLedger>,
    pub universe: Universe,
    pub seed: u64,
    pub fingerprint: u64,
}

/// Runs the full generation loop for a single chain.
pub fn run_chain(
    data: &Dataset,
    fam: &FamilySpec,
    lib: &TransformLibrary,
    config: &RunConfig,
    chain_seed: u64,
) -> Result<ChainResult> {
    config.validate()?;
    let m = data.m();
    let cons = config.constraints_for(m);
    cons.validate()?;
    let knobs = SamplerKnobs {
        p_jump: config.p_jump,
        jump_size: config
            .jump_size
            .unwrap_or_else(|| cons.pop_size.div_ceil(4)),
        opt_steps: config.opt_steps,
        eps: config.eps,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(chain_seed);
    let mut evaluator = Evaluator::new(
        data.y.clone(),
        *fam,
        config.estimator,
        config.beta_prior_var,
        chain_seed,
    );
    let mut universe = Universe::new();
    let bare: Vec<Arc<Feature>> = data
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| Feature::leaf(j, name))
        .collect();
    for f in &bare {
        universe.intern(Arc::clone(f), &data.x, lib)?;
    }
    // S0: bare covariates, topped up to pop_size with generated features.
    // Covariates whose columns duplicate an earlier one share an interned id
    // and get one population slot.
    let mut seen_ids: HashSet<u32> = HashSet::new();
    let mut pop: Vec<Arc<Feature>> = bare
        .iter()
        .filter(|f| seen_ids.insert(universe.get(&f.signature).expect("interned")))
        .cloned()
        .collect();
    let uniform = vec![1.0; pop.len()];
    let mut none_removed: Vec<Arc<Feature>> = Vec::new();
    top_up(
        &mut pop, &uniform, &bare, lib, &cons, config, &mut universe, data, &mut none_removed, &mut rng,
    )?;

    let mut union = ModelLedger::new();
    let mut per_population = Vec::with_capacity(config.populations);
    for t in 0..config.populations {
        let ids: Vec<u32> = pop
            .iter()
            .map(|f| universe.get(&f.signature).expect("population is interned"))
            .collect();
        let ocs: Vec<u32> = pop.iter().map(|f| f.oc).collect();
        let ctx = PopulationCtx {
            ids: &ids,
            ocs: &ocs,
            u: config.u,
            q_max: cons.max_model_size,
        };
        let (ledger, mip, _) = run_mjmcmc(
            &ctx,
            config.iterations,
            &knobs,
            &mut evaluator,
            &universe,
            &mut rng,
        );
        union.absorb(&ledger);
        per_population.push(ledger);
        if t + 1 == config.populations {
            break;
        }
        let keep = filter_population(&pop, &mip, config.filter_threshold, &mut rng);
        let mut removed: Vec<Arc<Feature>> = Vec::new();
        let mut survivors = Vec::new();
        let mut weights = Vec::new();
        for ((f, &k), &p) in pop.iter().zip(&keep).zip(&mip) {
            // Bare covariates always stay in the population: a weak marginal
            // effect filtered after one short stage could otherwise never
            // re-enter, and generated features can only compete for the
            // remaining slots anyway.
            if k || f.is_bare() {
                survivors.push(Arc::clone(f));
                weights.push(p.max(0.01));
            } else {
                removed.push(Arc::clone(f));
            }
        }
        pop = survivors;
        top_up(
            &mut pop, &weights, &bare, lib, &cons, config, &mut universe, data, &mut removed, &mut rng,
        )?;
    }
    Ok(ChainResult {
        ledger: union,
        per_population,
        universe,
        seed: chain_seed,
        fingerprint: data.fingerprint(),
    })
}

/// Grows `pop` back to pop_size by genetic generation; exhausted generation
/// retains previously filtered-out features instead.
#[allow(clippy::too_many_arguments)]
fn top_up(
    pop: &mut Vec<Arc<Feature>>,
    parent_weights: &[f64],
    bare: &[Arc<Feature>],
    lib: &TransformLibrary,
    cons: &Constraints,
    config: &RunConfig,
    universe: &mut Universe,
    data: &Dataset,
    removed: &mut Vec<Arc<Feature>>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let parents: Vec<Arc<Feature>> = pop.clone();
    let mut existing: HashSet<String> = pop.iter().map(|f| f.signature.clone()).collect();
    // Track interned ids as well: distinct signatures can canonicalize to the
    // same column, and one predictor must not occupy two population slots.
    let mut ids: HashSet<u32> = pop
        .iter()
        .filter_map(|f| universe.get(&f.signature))
        .collect();
    let mut guard = 0;
    while pop.len() < cons.pop_size && guard < 10 * cons.pop_size {
        guard += 1;
        match generate_feature(
            &parents,
            parent_weights,
            bare,
            lib,
            cons,
            &existing,
            &config.gen_probs,
            rng,
        ) {
            Ok(f) => {
                let id = universe.intern(Arc::clone(&f), &data.x, lib)?;
                existing.insert(f.signature.clone());
                if universe.info(id).constant || !ids.insert(id) {
                    continue;
                }
                pop.push(f);
            }
            Err(Error::GenerationExhausted(_)) => {
                match removed.pop() {
                    Some(f) => {
                        let id = universe.get(&f.signature);
                        if existing.insert(f.signature.clone())
                            && id.is_none_or(|i| ids.insert(i))
                        {
                            pop.push(f);
                        }
                    }
                    None => break,
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Runs `config.threads` independent chains with seeds `seed + i`.
pub fn run_parallel(
    data: &Dataset,
    fam: &FamilySpec,
    lib: &TransformLibrary,
    config: &RunConfig,
) -> Result<Vec<ChainResult>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..config.threads as u64)
            .into_par_iter()
            .map(|i| run_chain(data, fam, lib, config, config.seed + i))
            .collect()
    })
}

/// A feature in the merged universe, with its training standardization.
pub struct MergedFeature {
    pub feature: Arc<Feature>,
    pub mean: f64,
    pub sd: f64,
    pub constant: bool,
}

#[derive(Debug, Clone)]
pub struct MergedEntry {
    pub log_ml: f64,
    pub log_prior: f64,
    pub visits: u64,
    pub method: MlMethod,
    /// Coefficients of the stored fit: intercept first, then one per entry
    /// of `column_sigs` (which lists signatures in fit column order).
    pub beta: Option<Vec<f64>>,
    pub column_sigs: Vec<String>,
}

/// Union of chain results: feature universe keyed by signature, model ledger
/// keyed by the sorted signature set, max-combining colliding estimates.
pub struct MergedRun {
    pub universe: IndexMap<String, MergedFeature>,
    pub entries: IndexMap<Vec<String>, MergedEntry>,
    pub seeds: Vec<u64>,
}

pub fn merge_runs(results: &[ChainResult]) -> Result<MergedRun> {
    let first = results.first().ok_or(Error::Config("no runs to merge".into()))?;
    if results.iter().any(|r| r.fingerprint != first.fingerprint) {
        return Err(Error::IncompatibleRuns);
    }
    let mut universe: IndexMap<String, MergedFeature> = IndexMap::new();
    let mut entries: IndexMap<Vec<String>, MergedEntry> = IndexMap::new();
    let mut seeds = Vec::with_capacity(results.len());
    for run in results {
        seeds.push(run.seed);
        for info in &run.universe.infos {
            universe
                .entry(info.feature.signature.clone())
                .or_insert_with(|| MergedFeature {
                    feature: Arc::clone(&info.feature),
                    mean: info.mean,
                    sd: info.sd,
                    constant: info.constant,
                });
        }
        for (key, e) in &run.ledger.entries {
            let column_sigs: Vec<String> = key
                .iter()
                .map(|&id| run.universe.info(id).feature.signature.clone())
                .collect();
            let mut sig_key = column_sigs.clone();
            sig_key.sort();
            let beta = e.beta.as_ref().map(|b| b.iter().copied().collect());
            match entries.get_mut(&sig_key) {
                Some(mine) => {
                    mine.visits += e.visits;
                    if e.log_ml > mine.log_ml {
                        mine.log_ml = e.log_ml;
                        mine.log_prior = e.log_prior;
                        mine.method = e.method;
                        mine.beta = beta;
                        mine.column_sigs = column_sigs;
                    }
                }
                None => {
                    entries.insert(
                        sig_key,
                        MergedEntry {
                            log_ml: e.log_ml,
                            log_prior: e.log_prior,
                            visits: e.visits,
                            method: e.method,
                            beta,
                            column_sigs,
                        },
                    );
                }
            }
        }
    }
    Ok(MergedRun {
        universe,
        entries,
        seeds,
    })
}
