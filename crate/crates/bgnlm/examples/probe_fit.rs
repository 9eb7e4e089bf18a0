use bgnlm::data::{simulate_tall, SimulatedTallSpec};
use bgnlm::glm::{DesignMatrix, FamilySpec, DEFAULT_TOL};
use bgnlm::sirls::{sirls_sgd_fit, SubsampleSchedule};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let sgd: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let d: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(25);
    let n = 20_000;
    let data = simulate_tall(&SimulatedTallSpec { n, sigma: None, seed: 500 });
    let mut m = DMatrix::zeros(n, d + 1);
    m.column_mut(0).fill(1.0);
    for j in 0..d {
        for i in 0..n {
            m[(i, j + 1)] = data.x[(i, j)];
        }
    }
    let x = DesignMatrix::new(m).unwrap();
    let y = DVector::from_fn(n, |i, _| data.y[i]);
    let schedule = SubsampleSchedule {
        fraction: 0.025,
        irls_iters: 8,
        sgd_iters: sgd,
        ..SubsampleSchedule::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let fam = FamilySpec::gaussian();
    let t0 = std::time::Instant::now();
    let reps = 200;
    let mut acc = 0.0;
    for _ in 0..reps {
        acc += sirls_sgd_fit(&x, &y, &fam, &schedule, DEFAULT_TOL, &mut rng).unwrap().log_lik;
    }
    println!("sgd={sgd} d={d}: {:?}/fit (acc {acc:.1})", t0.elapsed() / reps);
}
