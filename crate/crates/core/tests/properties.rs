//! Property tests for panel I/O, weights, estimators, tests and selection.

mod common;

use common::{cox_data, logistic_data};
use pmsm::dgp::{generate_normal, generate_survival, NormalDgpConfig, SurvivalDgpConfig};
use pmsm::estimate::{contrast_arms, Analysis, ModelForm};
use pmsm::glm::{dot, fit_weighted_cox, fit_weighted_logistic, fit_wls, CoxData};
use pmsm::infer::{chi2_critical, pair_test, variance_of_difference};
use pmsm::ipw::{WeightKind, WeightModelSpec};
use pmsm::panel::{LongPanel, SubjectOutcome, SubjectRecord};
use pmsm::select::{closed_test_select, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random valid mean-mode panel with optional censoring, covariates and
/// baseline columns. The first subject is always followed to `K`: the long
/// format carries `K` only as the length of the longest record.
fn random_panel(seed: u64) -> (LongPanel, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=5);
    let n = rng.random_range(1..=25);
    let q = rng.random_range(0..=2);
    let p = rng.random_range(0..=2);
    let censored = rng.random::<bool>();
    let mut follow_up = Vec::with_capacity(n);
    let records: Vec<SubjectRecord> = (0..n)
        .map(|i| {
            // C(t) = 1 from slot `c` on, or never.
            let c = if i > 0 && censored && rng.random::<bool>() { Some(rng.random_range(0..k)) } else { None };
            let end = c.map_or(k, |c| c + 1);
            follow_up.push(end);
            let observed = |t: usize, v: f64| if t < end { v } else { f64::NAN };
            SubjectRecord {
                id: 10 * i as u64 + 3,
                baseline: (0..p).map(|_| rng.random_range(-5.0..5.0)).collect(),
                covariates: (0..k).map(|t| (0..q).map(|_| observed(t, rng.random_range(-3.0..3.0))).collect()).collect(),
                treatments: (0..k).map(|t| observed(t, f64::from(rng.random::<bool>()))).collect(),
                censoring: censored.then(|| (0..k).map(|s| u8::from(c.is_some_and(|c| s >= c))).collect()),
                outcome: SubjectOutcome::Continuous(if c.is_some() { f64::NAN } else { rng.random_range(-10.0..10.0) }),
            }
        })
        .collect();
    (LongPanel::new(k, &records).expect("generated panel is valid"), follow_up)
}

fn small_scenario(scenario: u8, n: usize, seed: u64) -> LongPanel {
    let cfg = match scenario {
        1 => NormalDgpConfig::scenario1(n, seed),
        2 => NormalDgpConfig::scenario2(n, seed),
        _ => NormalDgpConfig::scenario3(n, seed),
    };
    generate_normal(&cfg).0
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip(seed in any::<u64>()) {
        let (panel, _) = random_panel(seed);
        let mut buf = Vec::new();
        panel.write_csv_to(&mut buf).unwrap();
        let back = LongPanel::read_csv_from(buf.as_slice()).unwrap();
        prop_assert_eq!(&panel, &back);
    }

    #[test]
    fn person_period_count(seed in any::<u64>()) {
        let (panel, follow_up) = random_panel(seed);
        let rows = panel.expand_person_periods().unwrap();
        prop_assert_eq!(rows.len(), follow_up.iter().sum::<usize>());
        prop_assert!(rows.len() <= panel.n() * panel.horizon());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn survival_round_trip_and_monotone_events(seed in any::<u64>()) {
        let (panel, _) = generate_survival(&SurvivalDgpConfig::new(30, seed));
        let mut buf = Vec::new();
        panel.write_csv_to(&mut buf).unwrap();
        prop_assert_eq!(&panel, &LongPanel::read_csv_from(buf.as_slice()).unwrap());
        let k = panel.horizon();
        let mut total = 0;
        for i in 0..panel.n() {
            let stop = (1..=k)
                .find(|&t| panel.censored_at(i, t) == Some(true) || panel.event_at(i, t) == Some(true))
                .unwrap_or(k);
            prop_assert_eq!(panel.follow_up(i), stop);
            // Events are absorbing; after censoring nothing is observed.
            let after = if panel.event_at(i, stop) == Some(true) { Some(true) } else { None };
            for t in stop + 1..=k {
                prop_assert_eq!(panel.event_at(i, t), after);
            }
            total += stop;
        }
        prop_assert_eq!(panel.expand_person_periods().unwrap().len(), total);
    }

    #[test]
    fn fits_ignore_weight_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y, w, _) = logistic_data(&mut rng, 200, 3);
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let a = fit_weighted_logistic(&x, &y, &w).unwrap();
        let b = fit_weighted_logistic(&x, &y, &scaled).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!(close(*u, *v, 1e-7), "{:?} vs {:?}", a.coefficients, b.coefficients);
        }
        let a = fit_wls(&x, &y, &w).unwrap();
        let b = fit_wls(&x, &y, &scaled).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!(close(*u, *v, 1e-10));
        }
        let data = cox_data(&mut rng, 150, &[0.5, -0.5], 6);
        let mut scaled_data = data.clone();
        scaled_data.weight.iter_mut().for_each(|v| *v *= c);
        let a = fit_weighted_cox(&data).unwrap();
        let b = fit_weighted_cox(&scaled_data).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!(close(*u, *v, 1e-7));
        }
    }

    #[test]
    fn wls_normal_equations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _, w, _) = logistic_data(&mut rng, 80, 4);
        let y: Vec<f64> = (0..x.n_rows()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let fit = fit_wls(&x, &y, &w).unwrap();
        for j in 0..x.n_cols() {
            let s: f64 = x.rows().zip(&y).zip(&w).map(|((r, yi), wi)| wi * (yi - dot(r, &fit.coefficients)) * r[j]).sum();
            prop_assert!(s.abs() < 1e-10, "column {j}: {s}");
        }
    }

    #[test]
    fn weights_and_estimators_on_scenario_data(seed in any::<u64>(), scenario in 1u8..=3) {
        let panel = small_scenario(scenario, 600, seed);
        let k = panel.horizon();
        let spec = WeightModelSpec::for_horizon(k);
        let analysis = Analysis::new(&panel, &spec, ModelForm::Saturated).unwrap();
        let sw = analysis.weights(WeightKind::Sw, k).unwrap();
        for m in 1..=k {
            for kind in [WeightKind::Sw, WeightKind::Rsw, WeightKind::Psw] {
                let ws = analysis.weights(kind, m).unwrap();
                prop_assert!(ws.values.iter().all(|v| v.is_finite() && *v > 0.0));
            }
        }
        // Full window: the three weight kinds are the same numbers.
        for kind in [WeightKind::Rsw, WeightKind::Psw] {
            prop_assert_eq!(&analysis.weights(kind, k).unwrap().values, &sw.values);
        }
        let full: Vec<f64> = [WeightKind::Sw, WeightKind::Rsw, WeightKind::Psw]
            .iter()
            .map(|kind| analysis.estimate(*kind, k).unwrap().estimate)
            .collect();
        prop_assert!(full.iter().all(|e| *e == full[0]));

        let arms = contrast_arms(&panel, 2);
        prop_assert!(arms.treated.iter().zip(&arms.control).all(|(t, c)| !(*t && *c)));

        for kind in [WeightKind::Sw, WeightKind::Rsw, WeightKind::Psw] {
            let e = analysis.estimate(kind, 2).unwrap();
            let n = e.influence.len() as f64;
            let mean = e.influence.iter().sum::<f64>() / n;
            let sd = (e.influence.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(e.influence.iter().sum::<f64>().abs() <= 1e-8 * sd * n, "{kind:?}");
            prop_assert!(e.variance >= 0.0);
        }
    }

    #[test]
    fn pair_tests_are_well_formed(seed in any::<u64>(), alpha in 0.01f64..0.5) {
        let panel = small_scenario(1, 500, seed);
        let spec = WeightModelSpec::for_horizon(panel.horizon());
        let analysis = Analysis::new(&panel, &spec, ModelForm::Saturated).unwrap();
        for m in 1..panel.horizon() {
            let a = analysis.estimate(WeightKind::Sw, m).unwrap();
            let b = analysis.estimate(WeightKind::Rsw, m).unwrap();
            let v = variance_of_difference(&a, &b).unwrap();
            prop_assert!(v <= 2.0 * (a.variance + b.variance) + 1e-15);
            let t = pair_test(&a, &b, alpha).unwrap();
            prop_assert!(t.statistic >= 0.0);
            prop_assert!((0.0..=1.0).contains(&t.p_value));
            prop_assert_eq!(t.rejected, t.statistic > chi2_critical(alpha));
        }
    }

    #[test]
    fn subject_order_does_not_matter(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let panel = small_scenario(2, 500, seed);
        let mut order: Vec<usize> = (0..panel.n()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let shuffled = panel.subset(&order);
        let spec = WeightModelSpec::for_horizon(panel.horizon());
        let a = Analysis::new(&panel, &spec, ModelForm::Main).unwrap();
        let b = Analysis::new(&shuffled, &spec, ModelForm::Main).unwrap();
        for kind in [WeightKind::Sw, WeightKind::Rsw, WeightKind::Psw] {
            let x = a.estimate(kind, 2).unwrap();
            let y = b.estimate(kind, 2).unwrap();
            prop_assert!(close(x.estimate, y.estimate, 1e-8));
            prop_assert!(close(x.variance, y.variance, 1e-7));
        }
        let x = pair_test(&a.estimate(WeightKind::Sw, 1).unwrap(), &a.estimate(WeightKind::Rsw, 1).unwrap(), 0.05).unwrap();
        let y = pair_test(&b.estimate(WeightKind::Sw, 1).unwrap(), &b.estimate(WeightKind::Rsw, 1).unwrap(), 0.05).unwrap();
        prop_assert!(close(x.statistic, y.statistic, 1e-7));
    }

    #[test]
    fn selection_paths_are_consistent(seed in any::<u64>(), alpha in 0.01f64..0.6, pz in any::<bool>(), start in 1usize..=3) {
        let panel = small_scenario(1, 400, seed);
        let spec = WeightModelSpec::for_horizon(panel.horizon());
        let analysis = Analysis::new(&panel, &spec, ModelForm::Saturated).unwrap();
        let variant = if pz { Variant::Pztest } else { Variant::Ztest };
        let r = closed_test_select(&analysis, alpha, variant, start, panel.horizon()).unwrap();
        let again = closed_test_select(&analysis, alpha, variant, start, panel.horizon()).unwrap();
        prop_assert_eq!(&r, &again);
        prop_assert!(r.is_consistent());
        let ms: Vec<usize> = r.path.iter().map(|t| t.m).collect();
        prop_assert_eq!(ms, (start..=r.selected_m.min(panel.horizon() - 1)).collect::<Vec<_>>());
        let (last, before) = r.path.split_last().unwrap();
        prop_assert!(before.iter().all(|t| t.rejected));
        prop_assert!(!last.rejected || r.selected_m == panel.horizon());
    }
}

#[test]
fn cox_data_is_shared_with_the_oracles() {
    // Keeps the helper exercised from this file as well.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d: CoxData = cox_data(&mut rng, 10, &[0.0, 0.0], 3);
    assert_eq!(d.n_subjects, 10);
}
