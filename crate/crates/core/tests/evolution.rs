mod support;

use proptest::prelude::*;
use rwa_core::device_model::{build_hamiltonian, DeviceSpec, TridiagonalHamiltonian, VoltageConfig};
use rwa_core::evolution::{output_power, propagation_profile, unitary};
use support::*;

#[test]
fn unitarity_and_oracle_over_random_devices() {
    let mut rng = rng(2024);
    for _ in 0..200 {
        let (spec, v) = random_case(&mut rng);
        let h = build_hamiltonian(&spec, &v).unwrap();
        let u = unitary(&h, 24.0).unwrap();
        assert!(unitarity_defect(u.matrix()) <= 1e-10);
        let oracle = expm_oracle(&dense_hamiltonian(&spec, &v), 24.0);
        let diff = max_abs_diff(u.matrix(), &oracle);
        assert!(diff <= 1e-9, "oracle mismatch {diff} at N = {}", spec.n_guides());
    }
}

#[test]
fn output_power_is_column_modulus() {
    let mut rng = rng(7);
    for _ in 0..20 {
        let (spec, v) = random_case(&mut rng);
        let u = unitary(&build_hamiltonian(&spec, &v).unwrap(), 24.0).unwrap();
        for input in 1..=spec.n_guides() {
            let p = output_power(&u, input).unwrap();
            for (m, pm) in p.iter().enumerate() {
                let brute = u.matrix()[[m, input - 1]].re.powi(2) + u.matrix()[[m, input - 1]].im.powi(2);
                assert!((pm - brute).abs() < 1e-15);
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn lone_coupler_in_full_array() {
    let c = 0.05;
    let mut coupling = vec![0.0; 10];
    coupling[0] = c;
    let spec = DeviceSpec::default().with_base_coupling(coupling).unwrap();
    let h = build_hamiltonian(&spec, &VoltageConfig::zeros(22)).unwrap();
    let l = spec.coupling_length();
    let p = output_power(&unitary(&h, l).unwrap(), 1).unwrap();
    assert!((p[0] - (c * l).cos().powi(2)).abs() < 1e-12);
    assert!((p[1] - (c * l).sin().powi(2)).abs() < 1e-12);
    assert!(p[2..].iter().all(|&x| x.abs() < 1e-12));
}

fn tridiagonal() -> impl Strategy<Value = TridiagonalHamiltonian> {
    (2usize..=11).prop_flat_map(|n| {
        (
            prop::collection::vec(2.8f64..3.4, n),
            prop::collection::vec(-0.05f64..0.2, n - 1),
        )
            .prop_map(|(d, o)| TridiagonalHamiltonian::new(d, o).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composition(h in tridiagonal(), l1 in 0.5f64..60.0, l2 in 0.5f64..60.0) {
        let u1 = unitary(&h, l1).unwrap();
        let u2 = unitary(&h, l2).unwrap();
        let u12 = unitary(&h, l1 + l2).unwrap();
        let product = u2.matrix().dot(u1.matrix());
        prop_assert!(max_abs_diff(u12.matrix(), &product) <= 1e-9);
    }

    #[test]
    fn profile_rows_conserve_power(h in tridiagonal(), l in 1.0f64..100.0, steps in 2usize..60) {
        let input = 1 + (steps % h.dim());
        let profile = propagation_profile(&h, l, steps, input).unwrap();
        prop_assert_eq!(profile.intensities.nrows(), steps);
        for row in profile.intensities.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn zero_coupling_blocks_transfer(h in tridiagonal(), cut in 0usize..10, l in 1.0f64..100.0) {
        let n = h.dim();
        let k = cut % (n - 1);
        let mut off = h.offdiag().to_vec();
        off[k] = 0.0;
        let h = TridiagonalHamiltonian::new(h.diag().to_vec(), off).unwrap();
        let u = unitary(&h, l).unwrap();
        for i in 0..=k {
            for j in k + 1..n {
                prop_assert!(u.matrix()[[i, j]].norm() <= 1e-12);
                prop_assert!(u.matrix()[[j, i]].norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn detuned_pair_peak_transfer(c in 0.02f64..0.2, detune in -0.2f64..0.2) {
        let h = TridiagonalHamiltonian::new(vec![3.1 + detune, 3.1], vec![c]).unwrap();
        let omega = (c * c + (detune / 2.0).powi(2)).sqrt();
        // Odd step count puts the midpoint sample on the first transfer peak.
        let l = std::f64::consts::PI / omega;
        let profile = propagation_profile(&h, l, 201, 1).unwrap();
        let peak = profile.intensities.column(1).iter().copied().fold(0.0, f64::max);
        let expected = c * c / (c * c + (detune / 2.0).powi(2));
        prop_assert!((peak - expected).abs() <= 1e-9, "{} vs {}", peak, expected);
    }
}
