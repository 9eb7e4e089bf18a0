use bgnlm::data::{simulate_tall, SimulatedTallSpec};
use bgnlm::glm::{DesignMatrix, FamilySpec};
use bgnlm::sirls::{minibatch_gradient, subsample_indices};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 20_000;
    let d = 25;
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
    let beta = DVector::from_element(d + 1, 0.1);
    let fam = FamilySpec::gaussian();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let reps = 5000u32;

    let t0 = std::time::Instant::now();
    let mut keep = 0usize;
    for _ in 0..reps {
        keep += subsample_indices(n, 0.025, d + 1, &mut rng).len();
    }
    println!("subsample: {:?}/call ({keep})", t0.elapsed() / reps);

    let idx = subsample_indices(n, 0.025, d + 1, &mut rng);
    let t0 = std::time::Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        acc += minibatch_gradient(&beta, &x, &y, &fam, &idx, 1.0 / idx.len() as f64)[0];
    }
    println!("gradient: {:?}/call (acc {acc:.2})", t0.elapsed() / reps);
}
