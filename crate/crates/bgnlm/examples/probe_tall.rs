use bgnlm::config::apply_kv;
use bgnlm::data::{simulate_tall, SimulatedTallSpec};
use bgnlm::feature::TransformLibrary;
use bgnlm::glm::FamilySpec;
use bgnlm::gmjmcmc::{merge_runs, run_chain, RunConfig};
use bgnlm::inference::summarize;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2);
    let iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
    let pops: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let lib = TransformLibrary::default_library();

    // Generative marginals and one representative set of interactions.
    let marginals = ["x7", "x8"];
    let interactions = [
        "(x18*x21)", "(x2*x9)", "(x12*x20*x37)", "(x1*x27*x3)",
        "(x10*x17*x30*x4)", "(x11*x13*x19*x50)",
    ];

    for rep in 0..reps {
        let t0 = std::time::Instant::now();
        let data = simulate_tall(&SimulatedTallSpec { n: 20_000, sigma: None, seed: 500 + rep });
        let mut cfg = RunConfig::default();
        cfg.populations = pops;
        cfg.iterations = iters;
        apply_kv(&mut cfg, "estimator", "sirls_sgd").unwrap();
        apply_kv(&mut cfg, "fraction", "0.025").unwrap();
        apply_kv(&mut cfg, "irls_iters", "5").unwrap();
        apply_kv(&mut cfg, "sgd_iters", "45").unwrap();
        cfg.constraints.pop_size = Some(75);
        cfg.constraints.max_model_size = Some(28);
        cfg.opt_steps = 1;
        cfg.p_jump = 0.02;
        apply_kv(&mut cfg, "p_multiply", "0.9").unwrap();
        apply_kv(&mut cfg, "p_modify", "0.05").unwrap();
        apply_kv(&mut cfg, "p_new_leaf", "0.05").unwrap();
        cfg.seed = 31 + 800 * rep;
        let runs: Vec<_> = (0..8)
            .map(|i| run_chain(&data, &FamilySpec::gaussian(), &lib, &cfg, cfg.seed + i).unwrap())
            .collect();
        let merged = merge_runs(&runs).unwrap();
        let s = summarize(&merged).unwrap();
        let get = |sig: &str| s.mip.get(sig).copied().unwrap_or(0.0);
        let inter_hit = interactions.iter().filter(|s| get(s) > 0.25).count();
        println!(
            "rep {rep}: x7={:.2} x8={:.2} interactions>{{0.25}}={inter_hit} elapsed={:?}",
            get("x7"), get("x8"), t0.elapsed()
        );
        let mut v: Vec<(&String, f64)> = s.mip.iter().map(|(a, &b)| (a, b)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v.truncate(10);
        let mut prods: Vec<(&String, f64)> = s.mip.iter().filter(|(a, _)| a.contains("*")).map(|(a, &b)| (a, b)).collect();
        prods.sort_by(|a, b| b.1.total_cmp(&a.1));
        let nprod = prods.len();
        prods.truncate(8);
        let x7ish: Vec<(&String, f64)> = s.mip.iter().filter(|(a, &b)| (a.contains("x7") || a.contains("x8")) && b > 0.2).map(|(a, &b)| (a, b)).collect();
        println!("  products: n={nprod} top={prods:?}");
        println!("  x7-ish: {x7ish:?}");
        println!("  top: {v:?}");
    }
}
