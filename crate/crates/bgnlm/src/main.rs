use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use bgnlm::config::{apply_kv, load_config_file};
use bgnlm::data::{load_csv, simulate_tall, simulate_tall_data, Dataset, SimulatedTallSpec, SIM_TERMS};
use bgnlm::error::{Error, Result};
use bgnlm::feature::{Feature, TransformLibrary};
use bgnlm::glm::FamilySpec;
use bgnlm::gmjmcmc::{merge_runs, run_parallel, MergedRun, RunConfig};
use bgnlm::inference::{metrics, power_fdr, predict_bma, summarize, PosteriorSummary};
use bgnlm::report::{
    now_unix, write_discoveries, write_metrics, write_models, write_recovery, write_stamp, RunStamp,
};

#[derive(Parser)]
#[command(name = "bgnlm", about = "Bayesian generalized nonlinear model discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Training data CSV (header row, numeric cells).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Response column name.
    #[arg(long)]
    response: Option<String>,
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, default_value = "bgnlm-out")]
    out: PathBuf,
    /// Response family.
    #[arg(long, default_value = "gaussian")]
    family: String,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// laplace_full | sirls-sgd | aic
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    populations: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    u: Option<f64>,
    #[arg(long)]
    beta_prior_var: Option<f64>,
    #[arg(long)]
    p_jump: Option<f64>,
    #[arg(long)]
    jump_size: Option<usize>,
    #[arg(long)]
    opt_steps: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    filter_threshold: Option<f64>,
    #[arg(long)]
    max_depth: Option<u32>,
    #[arg(long)]
    max_width: Option<u32>,
    #[arg(long)]
    max_model_size: Option<usize>,
    #[arg(long)]
    pop_size: Option<usize>,
    #[arg(long)]
    irls_iters: Option<usize>,
    #[arg(long)]
    sgd_iters: Option<usize>,
    #[arg(long)]
    sgd_step0: Option<f64>,
    #[arg(long)]
    sgd_decay: Option<f64>,
}

impl RunArgs {
    fn build_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config_file(path)?,
            None => RunConfig::default(),
        };
        // Estimator first so schedule patches land on the right variant.
        if let Some(v) = &self.estimator {
            apply_kv(&mut cfg, "estimator", v)?;
        }
        macro_rules! patch {
            ($field:ident, $key:literal) => {
                if let Some(v) = &self.$field {
                    apply_kv(&mut cfg, $key, &v.to_string())?;
                }
            };
        }
        patch!(threads, "threads");
        patch!(seed, "seed");
        patch!(fraction, "fraction");
        patch!(populations, "populations");
        patch!(iterations, "iterations");
        patch!(u, "u");
        patch!(beta_prior_var, "beta_prior_var");
        patch!(p_jump, "p_jump");
        patch!(jump_size, "jump_size");
        patch!(opt_steps, "opt_steps");
        patch!(eps, "eps");
        patch!(filter_threshold, "filter_threshold");
        patch!(max_depth, "max_depth");
        patch!(max_width, "max_width");
        patch!(max_model_size, "max_model_size");
        patch!(pop_size, "pop_size");
        patch!(irls_iters, "irls_iters");
        patch!(sgd_iters, "sgd_iters");
        patch!(sgd_step0, "sgd_step0");
        patch!(sgd_decay, "sgd_decay");
        cfg.validate()?;
        Ok(cfg)
    }

    fn family(&self) -> Result<FamilySpec> {
        match self.family.as_str() {
            "gaussian" => Ok(FamilySpec::gaussian()),
            "bernoulli" => Ok(FamilySpec::bernoulli()),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        }
    }

    fn load_data(&self) -> Result<Dataset> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("--data is required".into()))?;
        let response = self
            .response
            .as_deref()
            .ok_or_else(|| Error::Config("--response is required".into()))?;
        load_csv(path, response)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run GMJMCMC and report discoveries and top models.
    Fit {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit on --data and model-average predictions on --test.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        test: PathBuf,
    },
    /// Write the simulated tall dataset to --out (a CSV file path).
    Simulate {
        #[arg(long)]
        n: usize,
        /// Noise sd; defaults to sqrt(n/1000).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature-recovery protocol on the exoplanet data (Kepler's third law).
    EvaluateKepler {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 25)]
        repetitions: usize,
        #[arg(long, default_value = "P")]
        period_col: String,
        /// Comma-separated stellar columns whose cbrt(P^2 * col) variants
        /// count as true positives.
        #[arg(long, default_value = "M_h,R_h,T_h")]
        star_cols: String,
        #[arg(long, default_value_t = 0.25)]
        threshold: f64,
    },
    /// Feature-recovery protocol on the simulated tall data.
    EvaluateSim {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        /// Rows to simulate when --data is not given.
        #[arg(long, default_value_t = 20000)]
        n: usize,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0.25)]
        threshold: f64,
    },
    /// Train/test prediction study on the abalone data.
    EvaluateAbalone {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 42)]
        split_seed: u64,
    },
}

/// Runs `repetitions` merged multi-chain repetitions, with disjoint seed
/// blocks per repetition.
fn run_repetitions(
    data: &Dataset,
    fam: &FamilySpec,
    lib: &TransformLibrary,
    cfg: &RunConfig,
    repetitions: usize,
) -> Result<(Vec<MergedRun>, Vec<Vec<u64>>)> {
    let mut merged = Vec::with_capacity(repetitions);
    let mut seeds = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let mut rep_cfg = *cfg;
        rep_cfg.seed = cfg.seed + (rep * cfg.threads) as u64;
        let chains = run_parallel(data, fam, lib, &rep_cfg)?;
        seeds.push(chains.iter().map(|c| c.seed).collect());
        merged.push(merge_runs(&chains)?);
    }
    Ok((merged, seeds))
}

fn write_summary_reports(out: &Path, summary: &PosteriorSummary, merged: &MergedRun) -> Result<()> {
    write_discoveries(&out.join("discoveries.tsv"), summary, merged)?;
    write_models(&out.join("models.tsv"), summary, 50)?;
    Ok(())
}

fn stamp(
    out: &Path,
    command: &str,
    data_path: &str,
    response: &str,
    cfg: &RunConfig,
    seeds: Vec<Vec<u64>>,
) -> Result<()> {
    write_stamp(
        &out.join("run_config.json"),
        &RunStamp {
            command: command.to_string(),
            data_path: data_path.to_string(),
            response: response.to_string(),
            config: cfg,
            chain_seeds: seeds,
            generated_at: now_unix(),
        },
    )
}

/// Signatures of the three Kepler's-law variants cbrt(P^2 * col).
pub fn kepler_true_signatures(
    names: &[String],
    period_col: &str,
    star_cols: &[String],
    lib: &TransformLibrary,
) -> Result<HashSet<String>> {
    let idx_of = |col: &str| {
        names
            .iter()
            .position(|n| n == col)
            .ok_or_else(|| Error::MissingColumn(col.to_string()))
    };
    let cbrt = lib
        .id_of("cbrt")
        .ok_or_else(|| Error::Config("library lacks cbrt".into()))?;
    let p_idx = idx_of(period_col)?;
    let mut sigs = HashSet::new();
    for col in star_cols {
        let p = Feature::leaf(p_idx, period_col);
        let star = Feature::leaf(idx_of(col)?, col);
        let inner = Feature::product(Feature::product(Arc::clone(&p), p), star);
        sigs.insert(Feature::transform(cbrt, inner, lib)?.signature.clone());
    }
    Ok(sigs)
}

/// Signatures of the eight generative terms of the tall simulation.
pub fn sim_true_signatures(names: &[String]) -> HashSet<String> {
    let mut sigs = HashSet::new();
    for (vars, _) in SIM_TERMS.iter() {
        let leaves: Vec<Arc<Feature>> = vars
            .iter()
            .map(|&v| Feature::leaf(v - 1, &names[v - 1]))
            .collect();
        let mut acc = Arc::clone(&leaves[0]);
        for leaf in &leaves[1..] {
            acc = Feature::product(acc, Arc::clone(leaf));
        }
        sigs.insert(acc.signature.clone());
    }
    sigs
}

fn cmd_fit(run: &RunArgs) -> Result<()> {
    let cfg = run.build_config()?;
    let fam = run.family()?;
    let data = run.load_data()?;
    let lib = TransformLibrary::default_library();
    std::fs::create_dir_all(&run.out)?;
    let chains = run_parallel(&data, &fam, &lib, &cfg)?;
    let seeds = vec![chains.iter().map(|c| c.seed).collect()];
    let merged = merge_runs(&chains)?;
    let summary = summarize(&merged)?;
    write_summary_reports(&run.out, &summary, &merged)?;
    stamp(
        &run.out,
        "fit",
        &run.data.as_ref().unwrap().display().to_string(),
        run.response.as_deref().unwrap_or(""),
        &cfg,
        seeds,
    )
}

fn cmd_predict(run: &RunArgs, test: &Path) -> Result<()> {
    let cfg = run.build_config()?;
    let fam = run.family()?;
    let data = run.load_data()?;
    let test_data = load_csv(test, run.response.as_deref().unwrap_or("y"))?;
    let lib = TransformLibrary::default_library();
    std::fs::create_dir_all(&run.out)?;
    let chains = run_parallel(&data, &fam, &lib, &cfg)?;
    let seeds = vec![chains.iter().map(|c| c.seed).collect()];
    let merged = merge_runs(&chains)?;
    let summary = summarize(&merged)?;
    let pred = predict_bma(&summary, &merged, &test_data.x, &lib, &fam)?;
    let m = metrics(&pred, &test_data.y)?;
    write_summary_reports(&run.out, &summary, &merged)?;
    write_metrics(&run.out.join("metrics.json"), &m)?;
    stamp(
        &run.out,
        "predict",
        &run.data.as_ref().unwrap().display().to_string(),
        run.response.as_deref().unwrap_or(""),
        &cfg,
        seeds,
    )
}

fn cmd_evaluate_recovery(
    command: &str,
    run: &RunArgs,
    data: &Dataset,
    data_label: &str,
    repetitions: usize,
    true_sigs: &HashSet<String>,
    threshold: f64,
) -> Result<()> {
    let cfg = run.build_config()?;
    let fam = run.family()?;
    let lib = TransformLibrary::default_library();
    std::fs::create_dir_all(&run.out)?;
    let (merged_runs, seeds) = run_repetitions(data, &fam, &lib, &cfg, repetitions)?;
    let mut mips = Vec::with_capacity(merged_runs.len());
    for m in &merged_runs {
        mips.push(summarize(m)?.mip);
    }
    let report = power_fdr(&mips, true_sigs, threshold);
    write_recovery(&run.out.join("recovery.json"), &report)?;
    // Overall discovery tables from the first repetition's merge.
    let first = &merged_runs[0];
    let summary = summarize(first)?;
    write_summary_reports(&run.out, &summary, first)?;
    stamp(
        &run.out,
        command,
        data_label,
        &data.response_name,
        &cfg,
        seeds,
    )
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit { run } => cmd_fit(run),
        Command::Predict { run, test } => cmd_predict(run, test),
        Command::Simulate { n, sigma, seed, out } => {
            let spec = SimulatedTallSpec {
                n: *n,
                sigma: *sigma,
                seed: *seed,
            };
            simulate_tall_data(&spec, out).map(|_| ())
        }
        Command::EvaluateKepler {
            run,
            repetitions,
            period_col,
            star_cols,
            threshold,
        } => (|| {
            let mut run = run.clone();
            if run.response.is_none() {
                run.response = Some("a".to_string());
            }
            let data = run.load_data()?;
            let lib = TransformLibrary::default_library();
            let cols: Vec<String> = star_cols.split(',').map(|s| s.trim().to_string()).collect();
            let true_sigs = kepler_true_signatures(&data.names, period_col, &cols, &lib)?;
            cmd_evaluate_recovery(
                "evaluate-kepler",
                &run,
                &data,
                &run.data.as_ref().unwrap().display().to_string(),
                *repetitions,
                &true_sigs,
                *threshold,
            )
        })(),
        Command::EvaluateSim {
            run,
            repetitions,
            n,
            sigma,
            threshold,
        } => (|| {
            let mut run = run.clone();
            if run.response.is_none() {
                run.response = Some("y".to_string());
            }
            let cfg_seed = run.build_config()?.seed;
            let (data, label) = match &run.data {
                Some(path) => (load_csv(path, run.response.as_deref().unwrap())?, path.display().to_string()),
                None => {
                    let spec = SimulatedTallSpec {
                        n: *n,
                        sigma: *sigma,
                        seed: cfg_seed.wrapping_mul(7919).wrapping_add(17),
                    };
                    (simulate_tall(&spec), format!("<simulated n={n}>"))
                }
            };
            let true_sigs = sim_true_signatures(&data.names);
            cmd_evaluate_recovery(
                "evaluate-sim",
                &run,
                &data,
                &label,
                *repetitions,
                &true_sigs,
                *threshold,
            )
        })(),
        Command::EvaluateAbalone {
            run,
            n_test,
            split_seed,
        } => (|| {
            let mut run = run.clone();
            if run.response.is_none() {
                run.response = Some("rings".to_string());
            }
            let cfg = run.build_config()?;
            let fam = run.family()?;
            let data = run.load_data()?;
            // Fall back to a proportional split on small inputs.
            let n_test = if *n_test >= data.n() {
                (data.n() / 4).max(1)
            } else {
                *n_test
            };
            let (train, test) = data.split(n_test, *split_seed);
            let lib = TransformLibrary::default_library();
            std::fs::create_dir_all(&run.out)?;
            let chains = run_parallel(&train, &fam, &lib, &cfg)?;
            let seeds = vec![chains.iter().map(|c| c.seed).collect()];
            let merged = merge_runs(&chains)?;
            let summary = summarize(&merged)?;
            let pred = predict_bma(&summary, &merged, &test.x, &lib, &fam)?;
            let m = metrics(&pred, &test.y)?;
            write_summary_reports(&run.out, &summary, &merged)?;
            write_metrics(&run.out.join("metrics.json"), &m)?;
            stamp(
                &run.out,
                "evaluate-abalone",
                &run.data.as_ref().unwrap().display().to_string(),
                run.response.as_deref().unwrap(),
                &cfg,
                seeds,
            )
        })(),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
