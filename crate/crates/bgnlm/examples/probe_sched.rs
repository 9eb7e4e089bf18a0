use bgnlm::data::{simulate_tall, SimulatedTallSpec, SIM_TERMS};
use bgnlm::glm::{irls_fit, DesignMatrix, FamilySpec, DEFAULT_MAX_ITER, DEFAULT_TOL};
use bgnlm::sirls::{sirls_sgd_fit, SubsampleSchedule};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 20_000;
    let data = simulate_tall(&SimulatedTallSpec { n, sigma: None, seed: 90 });
    // True interaction design (standardized like the evaluator does).
    let mut cols = Vec::new();
    for (vars, _) in SIM_TERMS.iter() {
        let mut c = vec![1.0f64; n];
        for i in 0..n {
            c[i] = vars.iter().map(|&v| data.x[(i, v - 1)]).product();
        }
        let mean = c.iter().sum::<f64>() / n as f64;
        let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        cols.push(c.iter().map(|v| (v - mean) / sd).collect::<Vec<f64>>());
    }
    let mut m = DMatrix::zeros(n, cols.len() + 1);
    m.column_mut(0).fill(1.0);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            m[(i, j + 1)] = c[i];
        }
    }
    let x = DesignMatrix::new(m).unwrap();
    let fam = FamilySpec::gaussian();
    let exact = irls_fit(&x, &y_of(&data), &fam, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    println!("exact ll {}", exact.log_lik);
    for (step0, decay, iters) in [
        (0.05, 0.01, 200usize),
        (0.2, 0.01, 200),
        (0.3, 0.02, 200),
        (0.2, 0.01, 100),
        (0.3, 0.02, 60),
        (0.2, 0.05, 60),
        (0.3, 0.05, 30),
    ] {
        let schedule = SubsampleSchedule {
            fraction: 0.025,
            irls_iters: 8,
            sgd_iters: iters,
            sgd_step0: step0,
            sgd_decay: decay,
        };
        let mut gaps = Vec::new();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            match sirls_sgd_fit(&x, &y_of(&data), &fam, &schedule, DEFAULT_TOL, &mut rng) {
                Ok(fit) => gaps.push(exact.log_lik - fit.log_lik),
                Err(e) => {
                    gaps.push(f64::NAN);
                    eprintln!("step0 {step0}: {e}");
                }
            }
        }
        println!("step0 {step0} decay {decay} iters {iters}: gaps {gaps:?}");
    }
}

fn y_of(d: &bgnlm::data::Dataset) -> nalgebra::DVector<f64> {
    d.y.clone()
}
