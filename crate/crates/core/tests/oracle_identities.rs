//! Exact population identities on enumerated distributions.

mod common;

use approx::assert_relative_eq;
use common::{oracle_suite, random_spec, Structure};
use pmsm::oracle::{enumerable_dgp, exact_limits, q_values, EnumerableSpec, Logit, ProbabilityTable};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn randomized_suite() {
    let s = oracle_suite(24, 11);
    assert!(s.passes(), "{s:?}");
    assert!(s.ordering_cases >= 20, "{s:?}");
}

/// Positively autocorrelated treatment, ψ_3 > 0 and m = 2.
fn ordering_instance() -> EnumerableSpec {
    EnumerableSpec::from_logits(
        3,
        Logit::new(0.1, 0.9, 0.0),
        Logit::new(-0.6, 1.0, 1.4),
        vec![0.5, 1.0, 0.6, 0.8],
        vec![0.4, -0.3, 0.9],
    )
}

#[test]
fn ordering_is_strict_with_a_lagged_effect() {
    let spec = ordering_instance();
    let lim = exact_limits(&enumerable_dgp(&spec).unwrap(), 2).unwrap();
    assert!(lim.q[0] > 0.0 && lim.q[0] < 1.0);
    assert!(lim.rsw < lim.sw - 1e-3, "{lim:?}");
    assert!(lim.sw < spec.theta() - 1e-3, "{lim:?}");
    assert_relative_eq!(lim.sw - lim.rsw, spec.psi[3] * lim.q[0], epsilon = 1e-12);
}

#[test]
fn window_estimators_coincide_without_lagged_effects() {
    // ψ_3 = 0: the window m = 2 already captures the whole effect.
    let mut spec = ordering_instance();
    spec.psi[3] = 0.0;
    let lim = exact_limits(&enumerable_dgp(&spec).unwrap(), 2).unwrap();
    assert_relative_eq!(lim.sw, lim.rsw, epsilon = 1e-12);
    assert_relative_eq!(lim.sw, spec.theta(), epsilon = 1e-12);
}

#[test]
fn independent_treatments_give_zero_q() {
    let mut spec = ordering_instance();
    spec.treatment_prob = vec![[[0.3, 0.3], [0.6, 0.6]]; 3];
    spec.covariate_prob = vec![[[0.4, 0.4], [0.4, 0.4]]; 3];
    let t = enumerable_dgp(&spec).unwrap();
    for q in q_values(&t, 1) {
        assert!(q.abs() < 1e-12);
    }
}

#[test]
fn early_confounding_separates_partial_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = random_spec(&mut rng, 2, Structure::EarlyConfounded);
    let lim = exact_limits(&enumerable_dgp(&spec).unwrap(), 1).unwrap();
    assert!((lim.psw - lim.sw).abs() > 1e-3, "{lim:?}");
    // The full window is unaffected.
    let full = exact_limits(&enumerable_dgp(&spec).unwrap(), 2).unwrap();
    assert_relative_eq!(full.psw, full.sw, epsilon = 1e-12);
}

fn shuffled(table: &ProbabilityTable, seed: u64) -> ProbabilityTable {
    use rand::seq::SliceRandom;
    let mut rows = table.rows.clone();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ProbabilityTable { horizon: table.horizon, rows }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn limits_ignore_row_order(seed in any::<u64>(), k in 2usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = enumerable_dgp(&random_spec(&mut rng, k, Structure::Exogenous)).unwrap();
        let u = shuffled(&t, seed ^ 0x5eed);
        for m in 1..=k {
            let a = exact_limits(&t, m).unwrap();
            let b = exact_limits(&u, m).unwrap();
            prop_assert!((a.sw - b.sw).abs() < 1e-12);
            prop_assert!((a.rsw - b.rsw).abs() < 1e-12);
            prop_assert!((a.psw - b.psw).abs() < 1e-12);
        }
    }

    #[test]
    fn tables_are_distributions(seed in any::<u64>(), k in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = enumerable_dgp(&random_spec(&mut rng, k, Structure::Exogenous)).unwrap();
        prop_assert_eq!(t.rows.len(), 1 << (2 * k));
        prop_assert!((t.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(t.rows.iter().all(|r| r.mass > 0.0));
    }

    #[test]
    fn g_formula_matches_the_model(seed in any::<u64>(), k in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, k, Structure::EarlyConfounded);
        let lim = exact_limits(&enumerable_dgp(&spec).unwrap(), k).unwrap();
        prop_assert!((lim.theta_k - spec.theta()).abs() < 1e-10);
        prop_assert!((lim.sw - spec.theta()).abs() < 1e-10);
    }
}
