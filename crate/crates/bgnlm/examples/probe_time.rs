use bgnlm::config::apply_kv;
use bgnlm::data::{simulate_tall, SimulatedTallSpec};
use bgnlm::feature::TransformLibrary;
use bgnlm::glm::FamilySpec;
use bgnlm::gmjmcmc::{run_chain, RunConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let sgd: &str = args.get(2).map(|s| s.as_str()).unwrap_or("100");
    let lib = TransformLibrary::default_library();
    let data = simulate_tall(&SimulatedTallSpec { n: 20_000, sigma: None, seed: 500 });
    let mut cfg = RunConfig::default();
    cfg.populations = 1;
    cfg.iterations = iters;
    apply_kv(&mut cfg, "estimator", "sirls_sgd").unwrap();
    apply_kv(&mut cfg, "fraction", "0.025").unwrap();
    apply_kv(&mut cfg, "irls_iters", "8").unwrap();
    apply_kv(&mut cfg, "sgd_iters", sgd).unwrap();
    cfg.constraints.pop_size = Some(60);
    cfg.constraints.max_model_size = Some(28);
    cfg.opt_steps = 2;
    cfg.p_jump = 0.02;
    cfg.seed = 31;
    let t0 = std::time::Instant::now();
    let run = run_chain(&data, &FamilySpec::gaussian(), &lib, &cfg, cfg.seed).unwrap();
    println!("iters={iters} sgd={sgd} elapsed={:?} ledger={}", t0.elapsed(), run.ledger.len());
}
