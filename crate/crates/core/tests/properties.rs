use proptest::prelude::*;

use jumpdr::ambiguity::{conic_rep, divergence_eval, worst_case_over_rep, AmbiguitySet, Divergence, DivergenceKind};
use jumpdr::conic::ClarabelBackend;
use jumpdr::learner::{r_tv, radius, replay, ConfidenceSchedule, LearnerState, RadiusSpec};
use jumpdr::risk::{avar, avar_scan, tighten_alpha};
use jumpdr::tree::{node_count, ScenarioTree, DEFAULT_NODE_BUDGET};

fn simplex(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, d).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|d| (simplex(d), prop::collection::vec(-10.0f64..10.0, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn avar_between_mean_and_max((p, xi) in instance(), alpha in 0.0f64..=1.0) {
        let v = avar(&p, alpha, &xi);
        let mean: f64 = p.iter().zip(&xi).map(|(a, b)| a * b).sum();
        let max = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= mean - 1e-9 && v <= max + 1e-9);
        prop_assert!((v - avar_scan(&p, alpha, &xi)).abs() <= 1e-9);
    }

    #[test]
    fn avar_nonincreasing_in_alpha((p, xi) in instance(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(avar(&p, lo, &xi) >= avar(&p, hi, &xi) - 1e-9);
    }

    #[test]
    fn avar_translation_and_scaling((p, xi) in instance(), alpha in 0.01f64..=1.0, c in -5.0f64..5.0, s in 0.1f64..10.0) {
        let base = avar(&p, alpha, &xi);
        let shifted: Vec<f64> = xi.iter().map(|v| v + c).collect();
        let scaled: Vec<f64> = xi.iter().map(|v| v * s).collect();
        prop_assert!((avar(&p, alpha, &shifted) - base - c).abs() <= 1e-8);
        prop_assert!((avar(&p, alpha, &scaled) - s * base).abs() <= 1e-8 * (1.0 + base.abs() * s));
    }

    #[test]
    fn tv_radius_shrinks_with_data_and_confidence(m in 1u64..100_000, beta in 1e-6f64..0.5, d in 2usize..8) {
        prop_assert!(r_tv(m + 1, beta, d) <= r_tv(m, beta, d));
        prop_assert!(r_tv(m, beta, d) <= r_tv(m, beta / 2.0, d));
    }

    #[test]
    fn every_divergence_radius_is_monotone_in_samples(k in 0usize..5, m in 1u64..10_000, beta in 1e-4f64..0.2) {
        let kind = DivergenceKind::ALL[k];
        let div = Divergence::default_for(kind, 3);
        let a = radius(&div, m, beta, 3, false).unwrap();
        let b = radius(&div, 4 * m, beta, 3, false).unwrap();
        prop_assert!(b <= a, "{kind}: {a} -> {b}");
    }

    #[test]
    fn divergence_vanishes_on_the_diagonal(k in 0usize..5, p in simplex(4)) {
        let div = Divergence::default_for(DivergenceKind::ALL[k], 4);
        prop_assert!(divergence_eval(&div, &p, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn tightened_level_stays_in_range(alpha in 0.01f64..0.99, frac in 0.0f64..0.99) {
        let a = tighten_alpha(alpha, frac * alpha).unwrap();
        prop_assert!(a > 0.0 && a <= alpha);
        prop_assert!(tighten_alpha(alpha, alpha).is_err());
    }

    #[test]
    fn learner_rows_stay_stochastic(path in prop::collection::vec(0usize..3, 2..60)) {
        let spec = RadiusSpec::new(Divergence::tv());
        let conf = ConfidenceSchedule::new(0.19, 2.0, 2, 0).unwrap();
        let (s, c) = replay(&LearnerState::init(3, 2).unwrap(), &conf, &path, &spec).unwrap();
        prop_assert_eq!(s.t(), (path.len() - 1) as u64);
        prop_assert_eq!(c.t, s.t());
        for i in 0..3 {
            let row = s.p_hat_row(i);
            prop_assert!(row.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn tree_has_geometric_size(d in 2usize..4, horizon in 0usize..5, root in 0usize..2) {
        let spec = RadiusSpec::new(Divergence::tv());
        let conf = ConfidenceSchedule::new(0.19, 2.0, 2, 3).unwrap();
        let s = LearnerState::init(d, 2).unwrap();
        let tree = ScenarioTree::build(d, horizon, root, &s, &conf, &spec, DEFAULT_NODE_BUDGET).unwrap();
        prop_assert_eq!(tree.len() as u128, node_count(d, horizon));
        prop_assert_eq!(tree.params.len(), tree.n_nonleaf());
        for n in 1..tree.len() {
            let parent = tree.nodes[n].parent.unwrap();
            prop_assert_eq!(tree.nodes[n].stage, tree.nodes[parent].stage + 1);
            if n < tree.n_nonleaf() {
                prop_assert_eq!(tree.params[n].learner.t(), tree.params[parent].learner.t() + 1);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tv_worst_case_grows_with_radius(center in simplex(3), xi in prop::collection::vec(-3.0f64..3.0, 3), r in 0.0f64..1.0) {
        let mut be = ClarabelBackend::default();
        let mut value = |radius: f64| {
            let set = AmbiguitySet::new(center.clone(), radius, Divergence::tv()).unwrap();
            worst_case_over_rep(&conic_rep(&set).unwrap(), &xi, &mut be).unwrap().0
        };
        let small = value(r);
        let large = value(r + 0.5);
        let nominal: f64 = center.iter().zip(&xi).map(|(a, b)| a * b).sum();
        prop_assert!(small >= nominal - 1e-6);
        prop_assert!(large >= small - 1e-6);
        prop_assert!(large <= xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-6);
    }

    #[test]
    fn worst_case_is_translation_equivariant(k in 0usize..5, center in simplex(3), xi in prop::collection::vec(-3.0f64..3.0, 3), c in -2.0f64..2.0) {
        let div = Divergence::default_for(DivergenceKind::ALL[k], 3);
        let set = AmbiguitySet::new(center, 0.05, div).unwrap();
        let rep = conic_rep(&set).unwrap();
        let mut be = ClarabelBackend::default();
        let base = worst_case_over_rep(&rep, &xi, &mut be).unwrap().0;
        let shifted: Vec<f64> = xi.iter().map(|v| v + c).collect();
        let moved = worst_case_over_rep(&rep, &shifted, &mut be).unwrap().0;
        prop_assert!((moved - base - c).abs() <= 1e-5, "{base} {moved} {c}");
    }
}
