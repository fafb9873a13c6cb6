//! Property tests for the core invariants.

use hqfno::mixer::{vqc_param_count, RobustScaler, VqcMixer};
use hqfno::num::Cplx;
use hqfno::qsim::{apply_gate_kind, GateKind, Statevector, Targets};
use hqfno::spectral::{irfft3, rfft3};
use hqfno::synthdata::{h_star, MaterialConstants};
use ndarray::Array5;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn normalized_state(n: usize, seed: u64) -> Statevector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut amps: Vec<Cplx<f64>> = (0..1usize << n)
        .map(|_| {
            Cplx::new(
                rand::Rng::gen_range(&mut rng, -1.0..1.0),
                rand::Rng::gen_range(&mut rng, -1.0..1.0),
            )
        })
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter_mut().for_each(|a| *a /= norm);
    Statevector::from_amplitudes(amps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_gate_preserves_statevector_norm(
        seed in 0u64..1000,
        n in 2usize..5,
        angle in -10.0f64..10.0,
        gate_pick in 0usize..6,
        q in 0usize..4,
    ) {
        let mut state = normalized_state(n, seed);
        let a = q % n;
        let b = (q + 1) % n;
        let (kind, targets) = match gate_pick {
            0 => (GateKind::Hadamard, Targets::One(a)),
            1 => (GateKind::RX, Targets::One(a)),
            2 => (GateKind::RZ, Targets::One(a)),
            3 => (GateKind::Swap, Targets::Two(a, b)),
            4 => (GateKind::ControlledPhase, Targets::Two(a, b)),
            _ => (GateKind::IsingXy, Targets::Two(a, b)),
        };
        if a != b || matches!(targets, Targets::One(_)) {
            apply_gate_kind(&mut state, kind, targets, angle).unwrap();
            prop_assert!((state.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ising_xy_touches_only_the_middle_subspace(
        seed in 0u64..1000,
        phi in -10.0f64..10.0,
    ) {
        let mut state = normalized_state(2, seed);
        let before = state.clone();
        apply_gate_kind(&mut state, GateKind::IsingXy, Targets::Two(0, 1), phi).unwrap();
        prop_assert!((state.amplitudes()[0b00] - before.amplitudes()[0b00]).norm() < 1e-15);
        prop_assert!((state.amplitudes()[0b11] - before.amplitudes()[0b11]).norm() < 1e-15);
    }

    #[test]
    fn rfft3_roundtrip_is_identity(
        seed in 0u64..1000,
        x in 2usize..7,
        y in 2usize..7,
        z in 2usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field: Array5<f64> = Array5::from_shape_fn((1, 2, x, y, z), |_| {
            rand::Rng::gen_range(&mut rng, -1.0..1.0)
        });
        let spec = rfft3(field.view());
        let back = irfft3(spec.view(), z).unwrap();
        for (a, b) in field.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn scaled_angles_stay_inside_the_open_interval(
        lo in -5.0f64..0.0,
        width in 0.1f64..10.0,
        // Position in units of the tracked range; beyond a handful of
        // range-widths the f64 sigmoid saturates to exactly 0 or 1.
        t in -5.0f64..6.0,
    ) {
        let mut s = RobustScaler::<f64>::new(1);
        s.running_min[0] = lo;
        s.running_max[0] = lo + width;
        s.initialized = true;
        let v = lo + t * width;
        let a = s.scale_to_angles(&[v]).unwrap()[0];
        prop_assert!(a > 0.0 && a < std::f64::consts::PI);
    }

    #[test]
    fn enthalpy_is_monotone_in_power_and_speed(
        p in 40.0f64..190.0,
        v in 0.1f64..1.0,
    ) {
        let mat = MaterialConstants::default();
        let h = h_star(p, v, &mat).unwrap();
        prop_assert!(h_star(p + 1.0, v, &mat).unwrap() > h);
        prop_assert!(h_star(p, v + 0.01, &mat).unwrap() < h);
    }

    #[test]
    fn mixer_parameter_count_formula_matches_enumeration(
        c_q in 1usize..6,
        n_q in 1usize..6,
        d in 1usize..4,
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mixer = VqcMixer::<f64>::new(c_q, n_q, d, &mut rng).unwrap();
        prop_assert_eq!(mixer.trainable_count(), vqc_param_count(c_q, n_q, d));
    }
}
