//! Expression-tree feature tests: complexity accounting, canonical
//! signatures, guarded evaluation, generation operators, and the stochastic
//! population filter.

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bgnlm::feature::{
    evaluate, filter_population, generate_feature, parse_signature, Constraints, Feature,
    GenProbs, Node, TransformLibrary,
};
use bgnlm::Error;

fn lib() -> TransformLibrary {
    TransformLibrary::default_library()
}

fn leaf(i: usize) -> Arc<Feature> {
    Feature::leaf(i, &format!("x{}", i + 1))
}

#[test]
fn operation_counts_match_recursion() {
    let l = lib();
    // A plain covariate costs nothing.
    assert_eq!(leaf(0).oc, 0);
    // sin(x1 * x2): one product plus one transform.
    let sin = l.id_of("sin").unwrap();
    let f = Feature::transform(sin, Feature::product(leaf(0), leaf(1)), &l).unwrap();
    assert_eq!(f.oc, 2);
    assert_eq!(f.depth, 2);
    assert_eq!(f.width, 2);
    // cbrt((P*P)*M_h): two products plus one transform.
    let cbrt = l.id_of("cbrt").unwrap();
    let p = Feature::leaf(0, "P");
    let m_h = Feature::leaf(1, "M_h");
    let g = Feature::transform(
        cbrt,
        Feature::product(Feature::product(Arc::clone(&p), p), m_h),
        &l,
    )
    .unwrap();
    assert_eq!(g.oc, 3);
    assert_eq!(g.width, 3);
}

#[test]
fn signatures_are_product_order_invariant() {
    // Exhaustive: every parenthesization/ordering of three leaves collapses
    // to a single signature.
    let perms: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut sigs = HashSet::new();
    for perm in perms {
        let [a, b, c] = perm.map(leaf);
        sigs.insert(Feature::product(Feature::product(Arc::clone(&a), b.clone()), c.clone()).signature.clone());
        sigs.insert(Feature::product(a, Feature::product(b, c)).signature.clone());
    }
    assert_eq!(sigs.len(), 1, "all orderings share one signature: {sigs:?}");
    assert_eq!(sigs.into_iter().next().unwrap(), "(x1*x2*x3)");

    // Distinct structures get distinct signatures.
    let l = lib();
    let sin = l.id_of("sin").unwrap();
    let plain = leaf(0);
    let wrapped = Feature::transform(sin, leaf(0), &l).unwrap();
    assert_ne!(plain.signature, wrapped.signature);
    assert_eq!(wrapped.signature, "sin(x1)");
}

#[test]
fn evaluation_examples() {
    let l = lib();
    let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
    // Leaf passes the column through verbatim.
    let v = evaluate(&leaf(0), &x, &l).unwrap();
    assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0]);
    // Self-product squares.
    let sq = Feature::product(leaf(0), leaf(0));
    let v = evaluate(&sq, &x, &l).unwrap();
    assert_eq!(v.as_slice(), &[1.0, 4.0, 9.0]);
    // sigmoid(0) = 0.5.
    let x0 = DMatrix::from_column_slice(1, 1, &[0.0]);
    let sig = Feature::transform(l.id_of("sigmoid").unwrap(), leaf(0), &l).unwrap();
    let v = evaluate(&sig, &x0, &l).unwrap();
    assert!((v[0] - 0.5).abs() < 1e-15);
}

#[test]
fn guarded_transforms_are_total() {
    let l = lib();
    // Guards: log uses ln(1+|x|), sqrt uses sqrt(|x|), cbrt is signed.
    let x = DMatrix::from_column_slice(3, 1, &[-8.0, 0.0, 8.0]);
    let cbrt = Feature::transform(l.id_of("cbrt").unwrap(), leaf(0), &l).unwrap();
    let v = evaluate(&cbrt, &x, &l).unwrap();
    assert!((v[0] + 2.0).abs() < 1e-12 && (v[2] - 2.0).abs() < 1e-12);
    let logf = Feature::transform(l.id_of("log").unwrap(), leaf(0), &l).unwrap();
    let v = evaluate(&logf, &x, &l).unwrap();
    assert!(v.iter().all(|a| a.is_finite()));
    assert!((v[0] - 9.0f64.ln()).abs() < 1e-12);
    let sqrtf = Feature::transform(l.id_of("sqrt").unwrap(), leaf(0), &l).unwrap();
    let v = evaluate(&sqrtf, &x, &l).unwrap();
    assert!(v.iter().all(|a| a.is_finite()));
}

fn must_generate(
    pop: &[Arc<Feature>],
    cons: &Constraints,
    existing: &HashSet<String>,
    probs: &GenProbs,
    seed: u64,
) -> Arc<Feature> {
    let l = lib();
    let bare: Vec<Arc<Feature>> = (0..3).map(leaf).collect();
    let weights = vec![1.0; pop.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_feature(pop, &weights, &bare, &l, cons, existing, probs, &mut rng).unwrap()
}

#[test]
fn forced_multiply_of_singleton_population_squares() {
    let pop = vec![leaf(0)];
    let cons = Constraints { max_depth: 5, max_width: 15, max_model_size: 5, pop_size: 5 };
    let probs = GenProbs { multiply: 1.0, modify: 0.0, new_leaf: 0.0 };
    let existing: HashSet<String> = pop.iter().map(|f| f.signature.clone()).collect();
    let f = must_generate(&pop, &cons, &existing, &probs, 3);
    assert_eq!(f.signature, "(x1*x1)");
}

#[test]
fn depth_constraint_forces_fallback_to_new_leaf() {
    let l = lib();
    let sin = l.id_of("sin").unwrap();
    let pop = vec![Feature::transform(sin, leaf(0), &l).unwrap()];
    let cons = Constraints { max_depth: 1, max_width: 15, max_model_size: 5, pop_size: 5 };
    // modify would always exceed depth 1; the generator must eventually draw
    // new_leaf and return a bare covariate not already present.
    let probs = GenProbs { multiply: 0.0, modify: 0.9, new_leaf: 0.1 };
    let existing: HashSet<String> = pop.iter().map(|f| f.signature.clone()).collect();
    let f = must_generate(&pop, &cons, &existing, &probs, 4);
    assert!(f.is_bare());
    assert!(f.depth <= 1);
}

#[test]
fn kepler_feature_reachable_in_two_generations() {
    // Step 1: multiply P*P; step 2: multiply by M_h then modify with cbrt.
    let l = lib();
    let p = Feature::leaf(0, "P");
    let m_h = Feature::leaf(1, "M_h");
    let pp = Feature::product(Arc::clone(&p), Arc::clone(&p));
    let pop = vec![pp, m_h];
    let cons = Constraints { max_depth: 5, max_width: 15, max_model_size: 5, pop_size: 5 };
    // Force multiply to splice P*P with M_h.
    let probs = GenProbs { multiply: 1.0, modify: 0.0, new_leaf: 0.0 };
    let existing: HashSet<String> = pop.iter().map(|f| f.signature.clone()).collect();
    let weights = vec![1.0; 2];
    let bare = vec![Feature::leaf(0, "P"), Feature::leaf(1, "M_h")];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut inner = None;
    for _ in 0..64 {
        let f = generate_feature(&pop, &weights, &bare, &l, &cons, &existing, &probs, &mut rng).unwrap();
        if f.signature == "(M_h*P*P)" {
            inner = Some(f);
            break;
        }
    }
    let inner = inner.expect("multiply reaches P^2 * M_h");
    let target = Feature::transform(l.id_of("cbrt").unwrap(), inner, &l).unwrap();
    assert_eq!(target.signature, "cbrt((M_h*P*P))");
    assert_eq!(target.oc, 3);
}

#[test]
fn generation_exhaustion_is_signaled() {
    // Population and bare set fully cover everything the operators can emit.
    let pop = vec![leaf(0)];
    let cons = Constraints { max_depth: 5, max_width: 15, max_model_size: 2, pop_size: 2 };
    let probs = GenProbs { multiply: 0.0, modify: 0.0, new_leaf: 1.0 };
    let l = lib();
    let bare = vec![leaf(0)];
    let existing: HashSet<String> = ["x1".to_string()].into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = generate_feature(&pop, &[1.0], &bare, &l, &cons, &existing, &probs, &mut rng).unwrap_err();
    assert!(matches!(err, Error::GenerationExhausted(_)));
}

#[test]
fn filter_keeps_bare_and_certain_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let l = lib();
    let sin = l.id_of("sin").unwrap();
    let gen1 = Feature::transform(sin, leaf(1), &l).unwrap();
    let gen2 = Feature::transform(sin, leaf(2), &l).unwrap();
    let pop = vec![leaf(0), gen1, gen2];
    // Everything with mip 1 is kept; a generated feature at mip 0 is dropped;
    // the bare covariate survives even at mip 0.
    let keep = filter_population(&pop, &[0.0, 1.0, 0.0], 0.5, &mut rng);
    assert_eq!(keep, vec![true, true, false]);
}

#[test]
fn filter_survival_frequency_is_proportional() {
    let l = lib();
    let sin = l.id_of("sin").unwrap();
    let pop = vec![Feature::transform(sin, leaf(0), &l).unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let trials = 10_000;
    let mut kept = 0usize;
    for _ in 0..trials {
        if filter_population(&pop, &[0.25], 0.5, &mut rng)[0] {
            kept += 1;
        }
    }
    let freq = kept as f64 / trials as f64;
    assert!((freq - 0.5).abs() <= 0.02, "kept frequency {freq}");
}

#[test]
fn parse_signature_round_trips() {
    let l = lib();
    let names: Vec<String> = (1..=4).map(|i| format!("x{i}")).collect();
    let sin = l.id_of("sin").unwrap();
    let cbrt = l.id_of("cbrt").unwrap();
    let deep = Feature::transform(
        cbrt,
        Feature::product(
            Feature::transform(sin, leaf(1), &l).unwrap(),
            Feature::product(leaf(0), leaf(3)),
        ),
        &l,
    )
    .unwrap();
    for f in [leaf(2), Feature::product(leaf(0), leaf(1)), deep] {
        let parsed = parse_signature(&f.signature, &names, &l).unwrap();
        assert_eq!(parsed.signature, f.signature);
        assert_eq!(parsed.oc, f.oc);
        assert_eq!(parsed.width, f.width);
    }
}

// --- property tests ---

fn arb_feature() -> impl Strategy<Value = Arc<Feature>> {
    let leaf_strategy = (0usize..4).prop_map(leaf);
    leaf_strategy.prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (0usize..10, inner.clone()).prop_map(|(g, c)| {
                Feature::transform(g, c, &lib()).unwrap()
            }),
            (inner.clone(), inner).prop_map(|(a, b)| Feature::product(a, b)),
        ]
    })
}

fn recompute(f: &Feature) -> (u32, u32, u32) {
    match &f.node {
        Node::Leaf(_) => (0, 0, 1),
        Node::Transform(_, c) => {
            let (oc, d, w) = recompute(c);
            (oc + 1, d + 1, w)
        }
        Node::Product(a, b) => {
            let (oa, da, wa) = recompute(a);
            let (ob, db, wb) = recompute(b);
            (1 + oa + ob, 1 + da.max(db), wa + wb)
        }
    }
}

proptest! {
    #[test]
    fn cached_complexity_matches_recomputation(f in arb_feature()) {
        let (oc, depth, width) = recompute(&f);
        prop_assert_eq!(f.oc, oc);
        prop_assert_eq!(f.depth, depth);
        prop_assert_eq!(f.width, width);
    }

    #[test]
    fn evaluation_is_always_finite(
        f in arb_feature(),
        raw in proptest::collection::vec(-1e30f64..1e30, 12)
    ) {
        let x = DMatrix::from_fn(3, 4, |i, j| raw[i * 4 + j]);
        let v = evaluate(&f, &x, &lib()).unwrap();
        prop_assert!(v.iter().all(|a| a.is_finite()));
    }

    #[test]
    fn signature_round_trip_property(f in arb_feature()) {
        let names: Vec<String> = (1..=4).map(|i| format!("x{i}")).collect();
        let parsed = parse_signature(&f.signature, &names, &lib()).unwrap();
        prop_assert_eq!(&parsed.signature, &f.signature);
    }

    #[test]
    fn generated_features_respect_constraints(seed in 0u64..500) {
        let cons = Constraints { max_depth: 3, max_width: 4, max_model_size: 4, pop_size: 6 };
        let l = lib();
        let bare: Vec<Arc<Feature>> = (0..3).map(leaf).collect();
        let sin = l.id_of("sin").unwrap();
        let pop = vec![
            leaf(0),
            Feature::product(leaf(0), leaf(1)),
            Feature::transform(sin, leaf(2), &l).unwrap(),
        ];
        let existing: HashSet<String> = pop.iter().map(|f| f.signature.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = vec![1.0, 2.0, 1.0];
        if let Ok(f) = generate_feature(
            &pop, &weights, &bare, &l, &cons, &existing, &GenProbs::default(), &mut rng,
        ) {
            prop_assert!(f.depth <= cons.max_depth);
            prop_assert!(f.width <= cons.max_width);
            prop_assert!(!existing.contains(&f.signature));
        }
    }
}
