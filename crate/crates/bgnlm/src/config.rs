//! Flat key=value experiment configuration with CLI-flag overrides. Every
//! run knob has a key of the same name; a file sets the base values and
//! flags patch over it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluator::EstimatorKind;
use crate::gmjmcmc::RunConfig;
use crate::sirls::SubsampleSchedule;

/// Applies `key=value` to a config in place.
pub fn apply_kv(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
    }
    match key {
        "populations" => cfg.populations = num(key, value)?,
        "iterations" => cfg.iterations = num(key, value)?,
        "u" => cfg.u = num(key, value)?,
        "beta_prior_var" | "prior_var" => cfg.beta_prior_var = num(key, value)?,
        "p_jump" => cfg.p_jump = num(key, value)?,
        "jump_size" => cfg.jump_size = Some(num(key, value)?),
        "opt_steps" => cfg.opt_steps = num(key, value)?,
        "eps" => cfg.eps = num(key, value)?,
        "threads" => cfg.threads = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "filter_threshold" => cfg.filter_threshold = num(key, value)?,
        "max_depth" => cfg.constraints.max_depth = Some(num(key, value)?),
        "max_width" => cfg.constraints.max_width = Some(num(key, value)?),
        "max_model_size" | "q" => cfg.constraints.max_model_size = Some(num(key, value)?),
        "pop_size" => cfg.constraints.pop_size = Some(num(key, value)?),
        "p_multiply" => cfg.gen_probs.multiply = num(key, value)?,
        "p_modify" => cfg.gen_probs.modify = num(key, value)?,
        "p_new_leaf" => cfg.gen_probs.new_leaf = num(key, value)?,
        "estimator" => {
            cfg.estimator = match value {
                "laplace_full" => EstimatorKind::LaplaceFull,
                "sirls-sgd" | "sirls_sgd" => EstimatorKind::SirlsSgd {
                    schedule: match cfg.estimator {
                        EstimatorKind::SirlsSgd { schedule } => schedule,
                        _ => SubsampleSchedule::default(),
                    },
                },
                "aic" | "aic_proxy" => EstimatorKind::AicProxy,
                other => return Err(Error::Config(format!("unknown estimator {other:?}"))),
            }
        }
        "fraction" | "irls_iters" | "sgd_iters" | "sgd_step0" | "sgd_decay" => {
            let mut schedule = match cfg.estimator {
                EstimatorKind::SirlsSgd { schedule } => schedule,
                _ => SubsampleSchedule::default(),
            };
            match key {
                "fraction" => schedule.fraction = num(key, value)?,
                "irls_iters" => schedule.irls_iters = num(key, value)?,
                "sgd_iters" => schedule.sgd_iters = num(key, value)?,
                "sgd_step0" => schedule.sgd_step0 = num(key, value)?,
                _ => schedule.sgd_decay = num(key, value)?,
            }
            cfg.estimator = EstimatorKind::SirlsSgd { schedule };
        }
        other => return Err(Error::Config(format!("unknown config key {other:?}"))),
    }
    Ok(())
}

/// Reads a flat key=value file; `#` starts a comment, blank lines ignored.
pub fn load_config_file(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let content = std::fs::read_to_string(path)?;
    for (lineno, line) in content.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
            "line {}: expected key=value, found {line:?}",
            lineno + 1
        )))?;
        apply_kv(&mut cfg, key.trim(), value.trim())?;
    }
    Ok(cfg)
}
