//! Dataset loading, the tall-data simulator and train/test splitting.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A numeric dataset: response vector, raw covariate matrix and column names.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub response_name: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// Cheap content fingerprint used to refuse merging runs from different data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n().hash(&mut h);
        self.m().hash(&mut h);
        self.names.hash(&mut h);
        for v in self.y.iter() {
            v.to_bits().hash(&mut h);
        }
        for v in self.x.iter().step_by(7) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Row subset in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let mut x = DMatrix::zeros(rows.len(), self.m());
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..self.m() {
                x[(r, j)] = self.x[(i, j)];
            }
        }
        Dataset {
            y,
            x,
            names: self.names.clone(),
            response_name: self.response_name.clone(),
        }
    }

    /// Deterministic seeded train/test split with `n_test` held-out rows.
    pub fn split(&self, n_test: usize, seed: u64) -> (Dataset, Dataset) {
        assert!(n_test < self.n());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..self.n()).collect();
        // Fisher-Yates.
        for i in (1..perm.len()).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let (test_rows, train_rows) = perm.split_at(n_test);
        let mut train_rows = train_rows.to_vec();
        let mut test_rows = test_rows.to_vec();
        train_rows.sort_unstable();
        test_rows.sort_unstable();
        (self.subset(&train_rows), self.subset(&test_rows))
    }
}

/// Loads a numeric CSV with a header row, extracting `response` as y.
/// Parse failures name the 1-based file row and the column header.
pub fn load_csv(path: &Path, response: &str) -> Result<Dataset> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        row: 1,
        col: String::new(),
        msg: "empty file".into(),
    })?;
    let headers: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let resp_idx = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::MissingColumn(response.to_string()))?;
    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != headers.len() {
            return Err(Error::Parse {
                row: lineno + 1,
                col: String::new(),
                msg: format!("expected {} cells, found {}", headers.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: lineno + 1,
                col: headers[j].clone(),
                msg: format!("not a number: {cell:?}"),
            })?;
            if j == resp_idx {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::DegenerateInput("no data rows"));
    }
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != resp_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let m = names.len();
    let x = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
    Ok(Dataset {
        y: DVector::from_vec(y),
        x,
        names,
        response_name: response.to_string(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct SimulatedTallSpec {
    pub n: usize,
    /// Noise standard deviation; `None` scales the n=1000 reference unit
    /// noise as sqrt(n/1000) to keep the total signal-to-noise constant.
    pub sigma: Option<f64>,
    pub seed: u64,
}

/// The eight generative terms (1-based covariate indices) and the intercept
/// coefficient mapping.
pub const SIM_TERMS: [(&[usize], f64); 8] = [
    (&[7], 1.5),
    (&[8], 1.5),
    (&[18, 21], 6.6),
    (&[2, 9], 3.5),
    (&[12, 20, 37], 9.0),
    (&[1, 3, 27], 7.0),
    (&[4, 10, 17, 30], 7.0),
    (&[11, 13, 19, 50], 7.0),
];
pub const SIM_INTERCEPT: f64 = 1.0;
pub const SIM_COVARIATES: usize = 50;

pub fn sim_sigma(spec: &SimulatedTallSpec) -> f64 {
    spec.sigma
        .unwrap_or_else(|| (spec.n as f64 / 1000.0).sqrt())
}

/// Simulates the tall binary-covariate dataset in memory.
pub fn simulate_tall(spec: &SimulatedTallSpec) -> Dataset {
    assert!(spec.n >= 100, "need n >= 100");
    let sigma = sim_sigma(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::zeros(spec.n, SIM_COVARIATES);
    for i in 0..spec.n {
        for j in 0..SIM_COVARIATES {
            x[(i, j)] = if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 };
        }
    }
    let mut y = DVector::zeros(spec.n);
    for i in 0..spec.n {
        let mut mu = SIM_INTERCEPT;
        for (vars, beta) in SIM_TERMS.iter() {
            let prod: f64 = vars.iter().map(|&v| x[(i, v - 1)]).product();
            mu += beta * prod;
        }
        // Box-Muller on two fresh uniforms.
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        y[i] = mu + sigma * z;
    }
    let names: Vec<String> = (1..=SIM_COVARIATES).map(|j| format!("x{j}")).collect();
    Dataset {
        y,
        x,
        names,
        response_name: "y".to_string(),
    }
}

/// Writes the simulated dataset as CSV; bit-identical given the same spec.
pub fn simulate_tall_data(spec: &SimulatedTallSpec, path: &Path) -> Result<Dataset> {
    let data = simulate_tall(spec);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "y")?;
    for name in &data.names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for i in 0..data.n() {
        write!(out, "{}", fmt_float(data.y[i]))?;
        for j in 0..data.m() {
            write!(out, ",{}", fmt_float(data.x[(i, j)]))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(data)
}

/// Shortest round-trip float formatting (stable across runs).
pub fn fmt_float(v: f64) -> String {
    let mut buf = ryu_like(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{}` on f64 is the shortest representation that round-trips.
    format!("{v}")
}
