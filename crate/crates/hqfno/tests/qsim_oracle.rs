#![allow(clippy::needless_range_loop)] // dense-matrix index arithmetic

//! Brute-force dense-matrix oracle for the statevector simulator.
//!
//! Gates are expanded to full 2^n x 2^n matrices from their textbook
//! definitions and applied by plain matrix-vector products; none of the
//! stride kernels under test are reused here.

use hqfno::num::Cplx;
use hqfno::qsim::{
    apply_gate_kind, build_inverse_qft, build_qft, AngleRef, CircuitSpec, GateKind, GateOp,
    Statevector, Targets,
};

type C64 = Cplx<f64>;

fn czero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Full-dimension matrix for a 1-qubit gate on qubit `q` of `n`.
fn embed_1q(n: usize, q: usize, m: [[C64; 2]; 2]) -> Vec<Vec<C64>> {
    let dim = 1 << n;
    let mut out = vec![vec![czero(); dim]; dim];
    for col in 0..dim {
        let bit = col >> q & 1;
        for row_bit in 0..2 {
            let row = (col & !(1 << q)) | (row_bit << q);
            out[row][col] = m[row_bit][bit];
        }
    }
    out
}

/// Full-dimension matrix for a 2-qubit gate on (a, b); the pair index is
/// bit_a + 2*bit_b, matching the simulator's (|00>,|01>,|10>,|11>) order.
fn embed_2q(n: usize, a: usize, b: usize, m: [[C64; 4]; 4]) -> Vec<Vec<C64>> {
    let dim = 1 << n;
    let mut out = vec![vec![czero(); dim]; dim];
    for col in 0..dim {
        let pair = (col >> a & 1) | ((col >> b & 1) << 1);
        for row_pair in 0..4 {
            let row = (col & !(1 << a) & !(1 << b))
                | ((row_pair & 1) << a)
                | (((row_pair >> 1) & 1) << b);
            out[row][col] = m[row_pair][pair];
        }
    }
    out
}

fn matvec(m: &[Vec<C64>], v: &[C64]) -> Vec<C64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn gate_matrix(n: usize, op: &GateOp<f64>, theta: &[f64], inputs: &[f64]) -> Vec<Vec<C64>> {
    let angle = match op.angle {
        AngleRef::None => 0.0,
        AngleRef::Fixed(a) => a,
        AngleRef::Theta(i) => theta[i],
        AngleRef::Input(i) => inputs[i],
    };
    let i = C64::new(0.0, 1.0);
    match (op.kind, op.targets) {
        (GateKind::Hadamard, Targets::One(q)) => {
            let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            embed_1q(n, q, [[s, s], [s, -s]])
        }
        (GateKind::RX, Targets::One(q)) => {
            let c = C64::new((angle / 2.0).cos(), 0.0);
            let ms = -i * (angle / 2.0).sin();
            embed_1q(n, q, [[c, ms], [ms, c]])
        }
        (GateKind::RZ, Targets::One(q)) => {
            let em = C64::from_polar(1.0, -angle / 2.0);
            let ep = C64::from_polar(1.0, angle / 2.0);
            embed_1q(n, q, [[em, czero()], [czero(), ep]])
        }
        (GateKind::Swap, Targets::Two(a, b)) => {
            let one = C64::new(1.0, 0.0);
            let z = czero();
            embed_2q(
                n,
                a,
                b,
                [
                    [one, z, z, z],
                    [z, z, one, z],
                    [z, one, z, z],
                    [z, z, z, one],
                ],
            )
        }
        (GateKind::ControlledPhase, Targets::Two(a, b)) => {
            let one = C64::new(1.0, 0.0);
            let z = czero();
            let ph = C64::from_polar(1.0, angle);
            embed_2q(
                n,
                a,
                b,
                [[one, z, z, z], [z, one, z, z], [z, z, one, z], [z, z, z, ph]],
            )
        }
        (GateKind::IsingXy, Targets::Two(a, b)) => {
            let one = C64::new(1.0, 0.0);
            let z = czero();
            let c = C64::new((angle / 2.0).cos(), 0.0);
            let is = i * (angle / 2.0).sin();
            embed_2q(
                n,
                a,
                b,
                [[one, z, z, z], [z, c, is, z], [z, is, c, z], [z, z, z, one]],
            )
        }
        _ => panic!("oracle does not model {:?}", op.kind),
    }
}

/// Run a circuit by dense matrix products from |0...0>.
fn dense_run(circuit: &CircuitSpec<f64>, theta: &[f64], inputs: &[f64]) -> Vec<C64> {
    let dim = 1usize << circuit.n_qubits();
    let mut v = vec![czero(); dim];
    v[0] = C64::new(1.0, 0.0);
    for op in circuit.ops() {
        let m = gate_matrix(circuit.n_qubits(), op, theta, inputs);
        v = matvec(&m, &v);
    }
    v
}

#[test]
fn qft_matches_dft_matrix_for_small_n() {
    // QFT|j> must equal the DFT column 2^{-n/2} sum_k exp(2 pi i jk/N) |k>.
    for n in 1..=4usize {
        let qft = build_qft::<f64>(n).unwrap();
        let dim = 1usize << n;
        for j in 0..dim {
            let mut s = Statevector::<f64>::basis_state(n, j);
            qft.apply_to(&mut s, &[], &[]).unwrap();
            for k in 0..dim {
                let phase = 2.0 * std::f64::consts::PI * (j * k) as f64 / dim as f64;
                let expected = C64::from_polar(1.0 / (dim as f64).sqrt(), phase);
                let got = s.amplitudes()[k];
                assert!(
                    (got - expected).norm() < 1e-12,
                    "n={n} j={j} k={k}: {got} vs {expected}"
                );
            }
        }
    }
}

#[test]
fn qft_then_inverse_is_identity_on_all_basis_states_up_to_n8() {
    for n in 1..=8usize {
        let qft = build_qft::<f64>(n).unwrap();
        let iqft = build_inverse_qft::<f64>(n).unwrap();
        for j in 0..(1usize << n) {
            let mut s = Statevector::<f64>::basis_state(n, j);
            qft.apply_to(&mut s, &[], &[]).unwrap();
            iqft.apply_to(&mut s, &[], &[]).unwrap();
            for (k, amp) in s.amplitudes().iter().enumerate() {
                let expected = if k == j { 1.0 } else { 0.0 };
                assert!(
                    (amp - C64::new(expected, 0.0)).norm() < 1e-12,
                    "n={n} j={j} k={k}"
                );
            }
        }
    }
}

#[test]
fn ising_xy_matrix_entries_match_definition_exactly() {
    // Reconstruct the 4x4 matrix by applying the gate to each pair basis
    // state and compare entrywise against the closed form.
    for phi in [0.0, 0.37, -1.2, std::f64::consts::PI, 2.0 * std::f64::consts::PI] {
        let c = (phi / 2.0).cos();
        let s = (phi / 2.0).sin();
        let z = czero();
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        let expected = [
            [one, z, z, z],
            [z, C64::new(c, 0.0), i * s, z],
            [z, i * s, C64::new(c, 0.0), z],
            [z, z, z, one],
        ];
        for col in 0..4 {
            let mut sv = Statevector::<f64>::basis_state(2, col);
            apply_gate_kind(&mut sv, GateKind::IsingXy, Targets::Two(0, 1), phi).unwrap();
            for row in 0..4 {
                let got = sv.amplitudes()[row];
                assert!(
                    (got - expected[row][col]).norm() < 1e-15,
                    "phi={phi} entry ({row},{col})"
                );
            }
        }
    }
}

#[test]
fn random_circuits_match_dense_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for n in 2..=4usize {
        let mut ops: Vec<GateOp<f64>> = Vec::new();
        for q in 0..n {
            ops.push(GateOp::rx(q, AngleRef::Input(q)));
        }
        ops.extend(build_qft::<f64>(n).unwrap().ops().iter().copied());
        let mut slot = 0usize;
        let mut a = 0usize;
        while a + 1 < n {
            ops.push(GateOp::rz(a, AngleRef::Theta(slot)));
            ops.push(GateOp::ising_xy(a, a + 1, AngleRef::Theta(slot + 1)));
            ops.push(GateOp::rz(a + 1, AngleRef::Theta(slot + 2)));
            slot += 3;
            a += 1;
        }
        ops.extend(build_inverse_qft::<f64>(n).unwrap().ops().iter().copied());
        let circuit = CircuitSpec::new(n, ops).unwrap();
        let theta: Vec<f64> = (0..circuit.n_theta())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let inputs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();

        let fast = circuit.run(&theta, &inputs).unwrap();
        let dense = dense_run(&circuit, &theta, &inputs);
        for (a, b) in fast.amplitudes().iter().zip(&dense) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
