//! Expression-tree features over covariates: construction, evaluation,
//! complexity accounting, canonical signatures and the genetic generation
//! operators.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Evaluation values are clamped to this magnitude at every node so that
/// arbitrarily nested products and power transforms stay finite.
pub const VALUE_CAP: f64 = 1e100;

const GEN_ATTEMPTS: usize = 50;

pub type TransformId = usize;

pub struct TransformEntry {
    pub name: &'static str,
    pub func: fn(f64) -> f64,
}

/// Unary transforms, each total on the reals after guarding.
pub struct TransformLibrary {
    entries: Vec<TransformEntry>,
}

fn guarded_log(x: f64) -> f64 {
    (1.0 + x.abs()).ln()
}

fn guarded_sqrt(x: f64) -> f64 {
    x.abs().sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn square(x: f64) -> f64 {
    x * x
}

fn cube(x: f64) -> f64 {
    x * x * x
}

impl TransformLibrary {
    pub fn new(entries: Vec<TransformEntry>) -> Self {
        Self { entries }
    }

    pub fn default_library() -> Self {
        Self::new(vec![
            TransformEntry { name: "sigmoid", func: sigmoid },
            TransformEntry { name: "sin", func: f64::sin },
            TransformEntry { name: "cos", func: f64::cos },
            TransformEntry { name: "tanh", func: f64::tanh },
            TransformEntry { name: "atan", func: f64::atan },
            TransformEntry { name: "log", func: guarded_log },
            TransformEntry { name: "sqrt", func: guarded_sqrt },
            TransformEntry { name: "cbrt", func: f64::cbrt },
            TransformEntry { name: "square", func: square },
            TransformEntry { name: "cube", func: cube },
        ])
    }

    pub fn get(&self, id: TransformId) -> Result<&TransformEntry> {
        self.entries.get(id).ok_or(Error::UnknownTransform(id))
    }

    pub fn id_of(&self, name: &str) -> Option<TransformId> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Leaf(usize),
    Transform(TransformId, Arc<Feature>),
    Product(Arc<Feature>, Arc<Feature>),
}

/// Immutable feature tree with cached complexity measures and a canonical
/// signature that is invariant under product operand order.
#[derive(Debug)]
pub struct Feature {
    pub node: Node,
    pub oc: u32,
    pub depth: u32,
    pub width: u32,
    pub signature: String,
}

impl Feature {
    pub fn leaf(index: usize, name: &str) -> Arc<Feature> {
        Arc::new(Feature {
            node: Node::Leaf(index),
            oc: 0,
            depth: 0,
            width: 1,
            signature: name.to_string(),
        })
    }

    pub fn transform(id: TransformId, child: Arc<Feature>, lib: &TransformLibrary) -> Result<Arc<Feature>> {
        let name = lib.get(id)?.name;
        Ok(Arc::new(Feature {
            oc: 1 + child.oc,
            depth: 1 + child.depth,
            width: child.width,
            signature: format!("{}({})", name, child.signature),
            node: Node::Transform(id, child),
        }))
    }

    pub fn product(left: Arc<Feature>, right: Arc<Feature>) -> Arc<Feature> {
        let mut factors = Vec::new();
        collect_factors(&left, &mut factors);
        collect_factors(&right, &mut factors);
        factors.sort();
        Arc::new(Feature {
            oc: 1 + left.oc + right.oc,
            depth: 1 + left.depth.max(right.depth),
            width: left.width + right.width,
            signature: format!("({})", factors.join("*")),
            node: Node::Product(left, right),
        })
    }

    pub fn is_bare(&self) -> bool {
        matches!(self.node, Node::Leaf(_))
    }
}

/// Product chains are flattened to a sorted factor multiset, so any
/// parenthesization of the same factors shares one signature.
fn collect_factors(f: &Feature, out: &mut Vec<String>) {
    match &f.node {
        Node::Product(l, r) => {
            collect_factors(l, out);
            collect_factors(r, out);
        }
        _ => out.push(f.signature.clone()),
    }
}

pub fn oc(f: &Feature) -> u32 {
    f.oc
}

/// Pointwise tree evaluation over the raw covariate matrix (n x m).
pub fn evaluate(f: &Feature, x: &DMatrix<f64>, lib: &TransformLibrary) -> Result<DVector<f64>> {
    let n = x.nrows();
    let mut out = DVector::zeros(n);
    match &f.node {
        Node::Leaf(j) => {
            if *j >= x.ncols() {
                return Err(Error::Config(format!("leaf index {} out of range", j)));
            }
            for i in 0..n {
                out[i] = x[(i, *j)].clamp(-VALUE_CAP, VALUE_CAP);
            }
        }
        Node::Transform(id, child) => {
            let func = lib.get(*id)?.func;
            let c = evaluate(child, x, lib)?;
            for i in 0..n {
                out[i] = func(c[i]).clamp(-VALUE_CAP, VALUE_CAP);
            }
        }
        Node::Product(l, r) => {
            let a = evaluate(l, x, lib)?;
            let b = evaluate(r, x, lib)?;
            for i in 0..n {
                out[i] = (a[i] * b[i]).clamp(-VALUE_CAP, VALUE_CAP);
            }
        }
    }
    Ok(out)
}

/// Hard complexity constraints and population sizing.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Constraints {
    /// Maximum feature depth D.
    pub max_depth: u32,
    /// Maximum feature width L (leaf occurrences).
    pub max_width: u32,
    /// Maximum features per model Q.
    pub max_model_size: usize,
    /// Population size q.
    pub pop_size: usize,
}

impl Constraints {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.max_width == 0 || self.max_model_size == 0 || self.pop_size == 0 {
            return Err(Error::Config("constraints must be positive".into()));
        }
        if self.max_model_size > self.pop_size {
            return Err(Error::Config("Q must not exceed the population size".into()));
        }
        Ok(())
    }

    /// Defaults for a dataset with `m` covariates.
    pub fn default_for(m: usize) -> Self {
        Self {
            max_depth: 5,
            max_width: 15,
            max_model_size: 20,
            pop_size: (2 * m).max(20),
        }
    }
}

/// Probabilities of the three generation operators.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GenProbs {
    pub multiply: f64,
    pub modify: f64,
    pub new_leaf: f64,
}

impl Default for GenProbs {
    fn default() -> Self {
        Self { multiply: 0.4, modify: 0.4, new_leaf: 0.2 }
    }
}

fn weighted_draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        r -= w;
        if r <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Draws a new feature by multiply / modify / new-leaf, rejecting candidates
/// that violate the depth or width constraints or duplicate an existing
/// signature.
pub fn generate_feature(
    pop: &[Arc<Feature>],
    weights: &[f64],
    bare: &[Arc<Feature>],
    lib: &TransformLibrary,
    cons: &Constraints,
    existing: &HashSet<String>,
    probs: &GenProbs,
    rng: &mut impl Rng,
) -> Result<Arc<Feature>> {
    assert!(!pop.is_empty() && pop.len() == weights.len());
    for _ in 0..GEN_ATTEMPTS {
        let op = weighted_draw(&[probs.multiply, probs.modify, probs.new_leaf], rng);
        let cand = match op {
            0 => {
                let a = Arc::clone(&pop[weighted_draw(weights, rng)]);
                let b = Arc::clone(&pop[weighted_draw(weights, rng)]);
                Feature::product(a, b)
            }
            1 => {
                let g = rng.gen_range(0..lib.len());
                let child = Arc::clone(&pop[weighted_draw(weights, rng)]);
                Feature::transform(g, child, lib)?
            }
            _ => Arc::clone(&bare[rng.gen_range(0..bare.len())]),
        };
        if cand.depth <= cons.max_depth
            && cand.width <= cons.max_width
            && !existing.contains(&cand.signature)
        {
            return Ok(cand);
        }
    }
    Err(Error::GenerationExhausted(GEN_ATTEMPTS))
}

/// Stochastic inclusion-probability filter. Features at or above the
/// threshold survive with certainty, the rest proportionally to mip;
/// bare covariates always survive.
pub fn filter_population(
    pop: &[Arc<Feature>],
    mip: &[f64],
    threshold: f64,
    rng: &mut impl Rng,
) -> Vec<bool> {
    assert_eq!(pop.len(), mip.len());
    pop.iter()
        .zip(mip)
        .map(|(f, &p)| f.is_bare() || p >= threshold || rng.gen::<f64>() < p / threshold)
        .collect()
}

/// Parses a canonical signature back into a feature tree. Products are
/// rebuilt as left-folds of the sorted factors, so `signature(parse(s)) == s`
/// for any emitted signature.
pub fn parse_signature(s: &str, names: &[String], lib: &TransformLibrary) -> Result<Arc<Feature>> {
    let s = s.trim();
    if let Some(idx) = names.iter().position(|n| n == s) {
        return Ok(Feature::leaf(idx, s));
    }
    if let Some(inner) = s.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
        // Split on top-level '*'.
        let mut parts = Vec::new();
        let mut depth = 0usize;
        let mut start = 0usize;
        for (i, c) in inner.char_indices() {
            match c {
                '(' => depth += 1,
                ')' => depth = depth.saturating_sub(1),
                '*' if depth == 0 => {
                    parts.push(&inner[start..i]);
                    start = i + 1;
                }
                _ => {}
            }
        }
        parts.push(&inner[start..]);
        if parts.len() >= 2 {
            let mut acc = parse_signature(parts[0], names, lib)?;
            for part in &parts[1..] {
                acc = Feature::product(acc, parse_signature(part, names, lib)?);
            }
            return Ok(acc);
        }
        return parse_signature(inner, names, lib);
    }
    if let Some(open) = s.find('(') {
        if s.ends_with(')') {
            let name = &s[..open];
            let id = lib
                .id_of(name)
                .ok_or_else(|| Error::Config(format!("unknown transform name {name}")))?;
            let child = parse_signature(&s[open + 1..s.len() - 1], names, lib)?;
            return Feature::transform(id, child, lib);
        }
    }
    Err(Error::Config(format!("cannot parse signature {s}")))
}
