use proptest::prelude::*;
use rwa_core::subcircuits::*;

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_filter_map("non-zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| w.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #[test]
    fn leakage_complements_own_power(p in distribution(11), first in 1usize..11) {
        let pair = SubcircuitPair::new(first, 11).unwrap();
        let own: f64 = pair.guides().iter().map(|g| p[g - 1]).sum();
        let leak = leakage(&p, pair).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((leak + 100.0 * own / total - 100.0).abs() <= 1e-12);
    }

    #[test]
    fn crosstalk_never_exceeds_leakage(p in distribution(11), a in 1usize..11, b in 1usize..11) {
        let own = SubcircuitPair::new(a, 11).unwrap();
        let other = SubcircuitPair::new(b, 11).unwrap();
        prop_assume!(!own.overlaps(&other));
        let ct = crosstalk(&p, own, other).unwrap();
        prop_assert!(ct <= leakage(&p, own).unwrap() + 1e-12);
    }

    #[test]
    fn coupler_columns_are_normalised(eta in 0.0f64..=1.0, phi in -7.0f64..7.0) {
        let m = two_mode_unitary(eta, phi).unwrap();
        let u = m.matrix();
        prop_assert!((u[[0, 0]].norm_sqr() + u[[1, 0]].norm_sqr() - 1.0).abs() <= 1e-15);
        prop_assert!((u[[0, 1]].norm_sqr() + u[[1, 1]].norm_sqr() - 1.0).abs() <= 1e-15);
        prop_assert!((u[[0, 0]].norm_sqr() - eta).abs() <= 1e-15);
    }

    #[test]
    fn permutation_rows_only_for_extreme_reflectivities(
        ea in prop_oneof![Just(0.0), Just(1.0), 0.01f64..0.99],
        eb in prop_oneof![Just(0.0), Just(1.0), 0.01f64..0.99],
    ) {
        let t = gate_truth_table(ea, eb).unwrap();
        let permutation = t.table.iter().all(|row| {
            row.iter().filter(|&&x| x == 1.0).count() == 1
                && row.iter().filter(|&&x| x == 0.0).count() == 3
        });
        let extreme = |e: f64| e == 0.0 || e == 1.0;
        prop_assert_eq!(permutation, extreme(ea) && extreme(eb));
    }

    #[test]
    fn fidelity_is_one_only_for_matching_tables(
        ea in 0.0f64..=1.0, eb in 0.0f64..=1.0, da in -0.3f64..0.3, db in -0.3f64..0.3,
    ) {
        let t = gate_truth_table(ea, eb).unwrap();
        prop_assert!((average_fidelity(&t, &t).unwrap() - 1.0).abs() <= 1e-12);
        let other = gate_truth_table((ea + da).clamp(0.0, 1.0), (eb + db).clamp(0.0, 1.0)).unwrap();
        let f = average_fidelity(&t, &other).unwrap();
        let same = t.table.iter().flatten().zip(other.table.iter().flatten()).all(|(x, y)| (x - y).abs() <= 1e-12);
        prop_assert_eq!((f - 1.0).abs() <= 1e-12, same);
    }
}
