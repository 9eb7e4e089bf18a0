//! MJMCMC: Metropolis-Hastings on inclusion vectors over a fixed feature
//! population, mixing single-bit local moves with optimizer-assisted
//! mode-jumping proposals. Every evaluated model is recorded in a ledger.

use indexmap::IndexMap;
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::evaluator::{Evaluator, Universe};
use crate::glm::MlMethod;
use crate::inference::renormalize_logs;

/// Chain state: inclusion vector plus the cached scores of the current model.
#[derive(Debug, Clone)]
pub struct Model {
    pub gamma: Vec<bool>,
    pub log_ml: f64,
    pub log_prior: f64,
}

impl Model {
    pub fn log_post(&self) -> f64 {
        self.log_ml + self.log_prior
    }
}

#[derive(Debug, Clone)]
pub struct LedgerEntry {
    pub log_ml: f64,
    pub log_prior: f64,
    pub visits: u64,
    pub method: MlMethod,
    pub beta: Option<DVector<f64>>,
}

/// Deduplicated record of every evaluated model, keyed by the sorted
/// feature-id set; insertion order is preserved.
#[derive(Debug, Clone, Default)]
pub struct ModelLedger {
    pub entries: IndexMap<Vec<u32>, LedgerEntry>,
}

impl ModelLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Folds `other` in, keeping the maximum log marginal likelihood on key
    /// collisions and accumulating visit counts.
    pub fn absorb(&mut self, other: &ModelLedger) {
        for (key, e) in &other.entries {
            match self.entries.get_mut(key) {
                Some(mine) => {
                    mine.visits += e.visits;
                    if e.log_ml > mine.log_ml {
                        mine.log_ml = e.log_ml;
                        mine.log_prior = e.log_prior;
                        mine.method = e.method;
                        mine.beta = e.beta.clone();
                    }
                }
                None => {
                    self.entries.insert(key.clone(), e.clone());
                }
            }
        }
    }
}

/// Unnormalized log model prior: log(u) * sum of included operation counts.
pub fn log_model_prior(gamma: &[bool], ocs: &[u32], u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0);
    let total: u32 = gamma
        .iter()
        .zip(ocs)
        .filter_map(|(&g, &oc)| g.then_some(oc))
        .sum();
    u.ln() * total as f64
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplerKnobs {
    pub p_jump: f64,
    pub jump_size: usize,
    pub opt_steps: usize,
    pub eps: f64,
}

fn popcount(gamma: &[bool]) -> usize {
    gamma.iter().filter(|&&g| g).count()
}

/// Density of the single-bit kernel for a move that changes the popcount
/// from `k_from` in the given direction, under the Q-boundary rule: at
/// popcount Q a drawn unset bit redirects to dropping a uniform set bit.
fn local_q(p: usize, q_max: usize, k_from: usize, adding: bool) -> f64 {
    let pf = p as f64;
    if adding {
        1.0 / pf
    } else if k_from == q_max {
        1.0 / pf + (p - q_max) as f64 / (pf * q_max as f64)
    } else {
        1.0 / pf
    }
}

/// Flips one uniformly chosen bit; at the Q boundary an unset draw falls back
/// to dropping a uniformly chosen set bit. Returns the proposal and the
/// Hastings correction log q(back) - log q(fwd).
pub fn local_proposal(gamma: &[bool], q_max: usize, rng: &mut impl Rng) -> (Vec<bool>, f64) {
    let p = gamma.len();
    let k = popcount(gamma);
    let mut out = gamma.to_vec();
    let i = rng.gen_range(0..p);
    let (flip, adding) = if out[i] {
        (i, false)
    } else if k + 1 <= q_max {
        (i, true)
    } else {
        // Redirect: drop a uniformly chosen set bit.
        let set: Vec<usize> = (0..p).filter(|&j| out[j]).collect();
        (set[rng.gen_range(0..set.len())], false)
    };
    out[flip] = !out[flip];
    let k_to = if adding { k + 1 } else { k - 1 };
    let q_fwd = local_q(p, q_max, k, adding);
    let q_back = local_q(p, q_max, k_to, !adding);
    (out, q_back.ln() - q_fwd.ln())
}

/// Context needed to score an inclusion vector over the current population.
pub struct PopulationCtx<'a> {
    /// Universe ids of the population members, aligned with gamma.
    pub ids: &'a [u32],
    /// Operation counts per population member.
    pub ocs: &'a [u32],
    pub u: f64,
    pub q_max: usize,
}

impl PopulationCtx<'_> {
    pub fn key_of(&self, gamma: &[bool]) -> Vec<u32> {
        let mut key: Vec<u32> = gamma
            .iter()
            .zip(self.ids)
            .filter_map(|(&g, &id)| g.then_some(id))
            .collect();
        key.sort_unstable();
        key
    }
}

/// Evaluates gamma through the memoized estimator and records it in the ledger.
pub fn eval_gamma(
    gamma: &[bool],
    ctx: &PopulationCtx,
    evaluator: &mut Evaluator,
    universe: &Universe,
    ledger: &mut ModelLedger,
) -> (f64, f64) {
    let key = ctx.key_of(gamma);
    let eval = evaluator.eval(&key, universe);
    let log_prior = log_model_prior(gamma, ctx.ocs, ctx.u);
    ledger.entries.entry(key).or_insert_with(|| LedgerEntry {
        log_ml: eval.log_ml,
        log_prior,
        visits: 0,
        method: eval.method,
        beta: eval.beta.clone(),
    });
    (eval.log_ml, log_prior)
}

/// Greedy best-single-flip ascent on log_ml + log_prior, at most `steps`
/// passes, restricted to flips that keep the popcount within Q.
fn greedy_opt(
    gamma: &mut Vec<bool>,
    steps: usize,
    ctx: &PopulationCtx,
    evaluator: &mut Evaluator,
    universe: &Universe,
    ledger: &mut ModelLedger,
) {
    let p = gamma.len();
    let (ml, pr) = eval_gamma(gamma, ctx, evaluator, universe, ledger);
    let mut current = ml + pr;
    for _ in 0..steps {
        let k = popcount(gamma);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..p {
            if !gamma[i] && k + 1 > ctx.q_max {
                continue;
            }
            gamma[i] = !gamma[i];
            let (ml, pr) = eval_gamma(gamma, ctx, evaluator, universe, ledger);
            gamma[i] = !gamma[i];
            let cand = ml + pr;
            if cand > current && best.map_or(true, |(_, b)| cand > b) {
                best = Some((i, cand));
            }
        }
        match best {
            Some((i, val)) => {
                gamma[i] = !gamma[i];
                current = val;
            }
            None => break,
        }
    }
}

/// Log density of the independent epsilon-flip randomization kernel moving
/// `from` to `to`.
fn randomize_log_density(from: &[bool], to: &[bool], eps: f64) -> f64 {
    let mut ld = 0.0;
    for (a, b) in from.iter().zip(to) {
        ld += if a != b {
            if eps == 0.0 {
                return f64::NEG_INFINITY;
            }
            eps.ln()
        } else {
            (1.0 - eps).ln()
        };
    }
    ld
}

/// Mode-jumping proposal: a large random flip, greedy local optimization and
/// an epsilon randomization. The returned forward/backward log densities are
/// those of the randomization kernel only (the jump and optimizer are the
/// deterministic legs of the mode-jumping construction, with the backward
/// optimization started from the proposal shifted by the same flip set).
pub fn mode_jump_proposal(
    gamma: &[bool],
    knobs: &SamplerKnobs,
    ctx: &PopulationCtx,
    evaluator: &mut Evaluator,
    universe: &Universe,
    ledger: &mut ModelLedger,
    rng: &mut impl Rng,
) -> (Vec<bool>, f64, f64) {
    let p = gamma.len();
    let jump = knobs.jump_size.min(p);
    let flips = rand::seq::index::sample(rng, p, jump).into_vec();
    let mut forward = gamma.to_vec();
    for &i in &flips {
        forward[i] = !forward[i];
    }
    // Feasibility clamp after the big jump.
    let mut k = popcount(&forward);
    while k > ctx.q_max {
        let set: Vec<usize> = (0..p).filter(|&j| forward[j]).collect();
        forward[set[rng.gen_range(0..set.len())]] = false;
        k -= 1;
    }
    greedy_opt(&mut forward, knobs.opt_steps, ctx, evaluator, universe, ledger);
    let mode_f = forward.clone();
    let mut proposal = mode_f.clone();
    for bit in proposal.iter_mut() {
        if rng.gen::<f64>() < knobs.eps {
            *bit = !*bit;
        }
    }
    let log_q_fwd = randomize_log_density(&mode_f, &proposal, knobs.eps);
    // Backward leg: same flip set applied to the proposal, then the same
    // deterministic optimizer.
    let mut backward = proposal.clone();
    for &i in &flips {
        backward[i] = !backward[i];
    }
    let mut k = popcount(&backward);
    while k > ctx.q_max {
        let set: Vec<usize> = (0..p).filter(|&j| backward[j]).collect();
        backward[set[rng.gen_range(0..set.len())]] = false;
        k -= 1;
    }
    greedy_opt(&mut backward, knobs.opt_steps, ctx, evaluator, universe, ledger);
    let log_q_back = randomize_log_density(&backward, gamma, knobs.eps);
    (proposal, log_q_fwd, log_q_back)
}

/// One Metropolis-Hastings step. The proposal's evaluation is recorded in the
/// ledger regardless of acceptance; proposals that would exceed Q are
/// rejected outright.
pub fn mh_step(
    current: Model,
    knobs: &SamplerKnobs,
    ctx: &PopulationCtx,
    evaluator: &mut Evaluator,
    universe: &Universe,
    ledger: &mut ModelLedger,
    rng: &mut impl Rng,
) -> Model {
    let (gamma_new, log_corr) = if rng.gen::<f64>() < knobs.p_jump {
        let (g, lqf, lqb) =
            mode_jump_proposal(&current.gamma, knobs, ctx, evaluator, universe, ledger, rng);
        (g, lqb - lqf)
    } else {
        local_proposal(&current.gamma, ctx.q_max, rng)
    };
    if popcount(&gamma_new) > ctx.q_max {
        return visit(current, ctx, ledger);
    }
    let (log_ml, log_prior) = eval_gamma(&gamma_new, ctx, evaluator, universe, ledger);
    let proposed = Model {
        gamma: gamma_new,
        log_ml,
        log_prior,
    };
    let accept = if proposed.log_post() == f64::NEG_INFINITY {
        false
    } else if current.log_post() == f64::NEG_INFINITY {
        true
    } else {
        let log_alpha = proposed.log_post() - current.log_post() + log_corr;
        log_alpha >= 0.0 || rng.gen::<f64>().ln() < log_alpha
    };
    visit(if accept { proposed } else { current }, ctx, ledger)
}

fn visit(state: Model, ctx: &PopulationCtx, ledger: &mut ModelLedger) -> Model {
    let key = ctx.key_of(&state.gamma);
    if let Some(e) = ledger.entries.get_mut(&key) {
        e.visits += 1;
    }
    state
}

/// Random initial state: each bit set with probability min(0.5, Q / (2 P)),
/// trimmed to Q if needed.
pub fn initial_state(p: usize, q_max: usize, rng: &mut impl Rng) -> Vec<bool> {
    let prob = (q_max as f64 / (2.0 * p as f64)).min(0.5);
    let mut gamma: Vec<bool> = (0..p).map(|_| rng.gen::<f64>() < prob).collect();
    let mut k = popcount(&gamma);
    while k > q_max {
        let set: Vec<usize> = (0..p).filter(|&j| gamma[j]).collect();
        gamma[set[rng.gen_range(0..set.len())]] = false;
        k -= 1;
    }
    gamma
}

/// Runs MJMCMC for `n_iter` steps over the given population. Returns the
/// ledger of evaluated models, the per-member marginal inclusion
/// probabilities from the renormalized ledger, and the final state.
pub fn run_mjmcmc(
    ctx: &PopulationCtx,
    n_iter: usize,
    knobs: &SamplerKnobs,
    evaluator: &mut Evaluator,
    universe: &Universe,
    rng: &mut impl Rng,
) -> (ModelLedger, Vec<f64>, Model) {
    assert!(n_iter >= 1);
    let mut ledger = ModelLedger::new();
    let gamma = initial_state(ctx.ids.len(), ctx.q_max, rng);
    let (log_ml, log_prior) = eval_gamma(&gamma, ctx, evaluator, universe, &mut ledger);
    let mut state = visit(
        Model {
            gamma,
            log_ml,
            log_prior,
        },
        ctx,
        &mut ledger,
    );
    for _ in 0..n_iter {
        state = mh_step(state, knobs, ctx, evaluator, universe, &mut ledger, rng);
    }
    let mip = ledger_mip(&ledger, ctx.ids);
    (ledger, mip, state)
}

/// Marginal inclusion probability of each population member under the
/// renormalized ledger posterior.
pub fn ledger_mip(ledger: &ModelLedger, ids: &[u32]) -> Vec<f64> {
    let logs: Vec<f64> = ledger
        .entries
        .values()
        .map(|e| e.log_ml + e.log_prior)
        .collect();
    let probs = match renormalize_logs(&logs) {
        Ok(p) => p,
        Err(_) => return vec![0.0; ids.len()],
    };
    let mut mip = vec![0.0; ids.len()];
    for ((key, _), p) in ledger.entries.iter().zip(&probs) {
        for (j, id) in ids.iter().enumerate() {
            if key.binary_search(id).is_ok() {
                mip[j] += p;
            }
        }
    }
    mip
}
