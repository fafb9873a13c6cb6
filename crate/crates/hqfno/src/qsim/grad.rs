//! Gradient rules for circuit expectation values.
//!
//! Three routes are provided: adjoint-statevector (one extra backward sweep,
//! the training default), parameter-shift (works from expectation values
//! alone, used by the shot-based study), and central finite differences.
//! The IsingXY angle is shifted through its commuting XX/YY factor
//! decomposition, each factor obeying a two-term rule with shift pi and
//! coefficient 1/4.

use super::{
    apply_gate_kind, apply_gate_kind_inverse, expect_z_all, AngleRef, CircuitSpec, GateKind,
    GateOp, Statevector, Targets,
};
use crate::error::{Error, Result};
use crate::num::{r, Cplx, Real};
use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradMethod {
    Adjoint,
    ParameterShift,
    /// Central differences with the given step.
    FiniteDifference {
        h: f64,
    },
}

/// Jacobian of per-qubit `<Z_j>` with respect to the trainable angles,
/// shape (n_qubits, n_theta). `input_state` defaults to `|0...0>`.
pub fn circuit_gradients<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
    input_state: Option<&Statevector<T>>,
    method: GradMethod,
) -> Result<Array2<T>> {
    let base = match input_state {
        Some(s) => s.clone(),
        None => Statevector::zero_state(circuit.n_qubits()),
    };
    match method {
        GradMethod::Adjoint => {
            let mut jac = Array2::zeros((circuit.n_qubits(), circuit.n_theta()));
            for j in 0..circuit.n_qubits() {
                let mut weights = vec![T::zero(); circuit.n_qubits()];
                weights[j] = T::one();
                let (dtheta, _) = adjoint_weighted_z_from(circuit, theta, inputs, &base, &weights)?;
                for (i, g) in dtheta.iter().enumerate() {
                    jac[(j, i)] = *g;
                }
            }
            Ok(jac)
        }
        GradMethod::ParameterShift => parameter_shift_jacobian(circuit, theta, inputs, &base),
        GradMethod::FiniteDifference { h } => {
            finite_difference_jacobian(circuit, theta, inputs, &base, r(h))
        }
    }
}

fn expect_z_from<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
    base: &Statevector<T>,
) -> Result<Vec<T>> {
    let mut s = base.clone();
    circuit.apply_to(&mut s, theta, inputs)?;
    expect_z_all(&s)
}

fn finite_difference_jacobian<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
    base: &Statevector<T>,
    h: T,
) -> Result<Array2<T>> {
    let n_theta = circuit.n_theta();
    let mut jac = Array2::zeros((circuit.n_qubits(), n_theta));
    let mut work = theta.to_vec();
    for i in 0..n_theta {
        work[i] = theta[i] + h;
        let plus = expect_z_from(circuit, &work, inputs, base)?;
        work[i] = theta[i] - h;
        let minus = expect_z_from(circuit, &work, inputs, base)?;
        work[i] = theta[i];
        for j in 0..circuit.n_qubits() {
            jac[(j, i)] = (plus[j] - minus[j]) / (h + h);
        }
    }
    Ok(jac)
}

/// Evaluate `<Z>` with op `op_index` replaced by an explicit gate sequence
/// (angles must be resolved in the replacement ops).
fn expect_z_with_replacement<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
    base: &Statevector<T>,
    op_index: usize,
    replacement: &[(GateKind, Targets, T)],
) -> Result<Vec<T>> {
    let mut s = base.clone();
    for (k, op) in circuit.ops().iter().enumerate() {
        if k == op_index {
            for &(kind, targets, angle) in replacement {
                apply_gate_kind(&mut s, kind, targets, angle)?;
            }
        } else {
            let angle = circuit.resolve_angle(op, theta, inputs)?;
            apply_gate_kind(&mut s, op.kind, op.targets, angle)?;
        }
    }
    expect_z_all(&s)
}

/// One two-term-rule contribution: coefficient and the gate sequence
/// replacing the shifted op.
type ShiftTerm<T> = (T, Vec<(GateKind, Targets, T)>);

fn parameter_shift_jacobian<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
    base: &Statevector<T>,
) -> Result<Array2<T>> {
    let n_q = circuit.n_qubits();
    let mut jac = Array2::zeros((n_q, circuit.n_theta()));
    let half = r::<T>(0.5);
    let quarter = r::<T>(0.25);
    let pi = T::PI();
    let frac_pi_2 = T::FRAC_PI_2();
    for (k, op) in circuit.ops().iter().enumerate() {
        let slot = match op.angle {
            AngleRef::Theta(i) => i,
            _ => continue,
        };
        let phi = circuit.resolve_angle(op, theta, inputs)?;
        // Each (coeff, replacement ops) pair contributes coeff * <Z> to the
        // derivative of this op's angle.
        let terms: Vec<ShiftTerm<T>> = match op.kind {
            GateKind::RX | GateKind::RZ | GateKind::ControlledPhase => vec![
                (half, vec![(op.kind, op.targets, phi + frac_pi_2)]),
                (-half, vec![(op.kind, op.targets, phi - frac_pi_2)]),
            ],
            GateKind::IsingXxPart | GateKind::IsingYyPart => vec![
                (quarter, vec![(op.kind, op.targets, phi + pi)]),
                (-quarter, vec![(op.kind, op.targets, phi - pi)]),
            ],
            GateKind::IsingXy => {
                // XY(phi) = exp(i phi XX/4) exp(i phi YY/4); shift each
                // commuting factor separately.
                let xx = GateKind::IsingXxPart;
                let yy = GateKind::IsingYyPart;
                let t = op.targets;
                vec![
                    (quarter, vec![(xx, t, phi + pi), (yy, t, phi)]),
                    (-quarter, vec![(xx, t, phi - pi), (yy, t, phi)]),
                    (quarter, vec![(xx, t, phi), (yy, t, phi + pi)]),
                    (-quarter, vec![(xx, t, phi), (yy, t, phi - pi)]),
                ]
            }
            GateKind::Hadamard | GateKind::Swap => continue,
        };
        for (coeff, replacement) in terms {
            let z = expect_z_with_replacement(circuit, theta, inputs, base, k, &replacement)?;
            for j in 0..n_q {
                jac[(j, slot)] += coeff * z[j];
            }
        }
    }
    Ok(jac)
}

/// Adjoint-statevector gradients of `sum_j weights[j] * <Z_j>` with respect
/// to both trainable angles and input angles, starting from `|0...0>`.
///
/// Returns `(d_theta, d_inputs)`.
pub fn adjoint_weighted_z<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
    weights: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let base = Statevector::zero_state(circuit.n_qubits());
    adjoint_weighted_z_from(circuit, theta, inputs, &base, weights)
}

fn adjoint_weighted_z_from<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
    base: &Statevector<T>,
    weights: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let n_q = circuit.n_qubits();
    if weights.len() != n_q {
        return Err(Error::shape(format!(
            "expected {n_q} observable weights, got {}",
            weights.len()
        )));
    }
    // Forward pass.
    let mut psi = base.clone();
    circuit.apply_to(&mut psi, theta, inputs)?;

    // lambda = O psi with O = sum_j w_j Z_j (diagonal).
    let mut lambda = psi.clone();
    for (b, amp) in lambda.amplitudes_mut().iter_mut().enumerate() {
        let mut o = T::zero();
        for (j, w) in weights.iter().enumerate() {
            if b >> j & 1 == 0 {
                o += *w;
            } else {
                o -= *w;
            }
        }
        *amp *= o;
    }

    let mut d_theta = vec![T::zero(); circuit.n_theta()];
    let mut d_inputs = vec![T::zero(); circuit.n_inputs()];
    let two = r::<T>(2.0);

    for op in circuit.ops().iter().rev() {
        let angle = circuit.resolve_angle(op, theta, inputs)?;
        // d<O>/d(angle) = 2 Re <lambda | G U | psi_before> = 2 Re <lambda| G |psi_here>
        // where psi_here is the state *after* this gate, i.e. the current psi.
        let slot = match op.angle {
            AngleRef::Theta(i) => Some((true, i)),
            AngleRef::Input(i) => Some((false, i)),
            _ => None,
        };
        if let Some((is_theta, i)) = slot {
            let g = two * generator_overlap(&lambda, &psi, op).re;
            if is_theta {
                d_theta[i] += g;
            } else {
                d_inputs[i] += g;
            }
        }
        apply_gate_kind_inverse(&mut psi, op.kind, op.targets, angle)?;
        apply_gate_kind_inverse(&mut lambda, op.kind, op.targets, angle)?;
    }
    Ok((d_theta, d_inputs))
}

/// `<lambda| G |psi>` where `G U` is the derivative of the gate unitary with
/// respect to its angle (G applied after the gate).
fn generator_overlap<T: Real>(
    lambda: &Statevector<T>,
    psi: &Statevector<T>,
    op: &GateOp<T>,
) -> Cplx<T> {
    let l = lambda.amplitudes();
    let p = psi.amplitudes();
    let dim = p.len();
    let zero = Cplx::new(T::zero(), T::zero());
    let mut acc = zero;
    match (op.kind, op.targets) {
        (GateKind::RX, Targets::One(q)) => {
            // G = -i X / 2
            let f = Cplx::new(T::zero(), -r::<T>(0.5));
            super::for_each_pair(dim, q, |i0, i1| {
                acc = acc + l[i0].conj() * (f * p[i1]) + l[i1].conj() * (f * p[i0]);
            });
        }
        (GateKind::RZ, Targets::One(q)) => {
            // G = -i Z / 2
            let f0 = Cplx::new(T::zero(), -r::<T>(0.5));
            let f1 = Cplx::new(T::zero(), r::<T>(0.5));
            super::for_each_pair(dim, q, |i0, i1| {
                acc = acc + l[i0].conj() * (f0 * p[i0]) + l[i1].conj() * (f1 * p[i1]);
            });
        }
        (GateKind::ControlledPhase, Targets::Two(a, b)) => {
            // G = i |11><11|
            let f = Cplx::new(T::zero(), T::one());
            super::for_each_quad(dim, a, b, |_, _, _, i11| {
                acc += l[i11].conj() * (f * p[i11]);
            });
        }
        (GateKind::IsingXy, Targets::Two(a, b)) => {
            // G = i (XX + YY) / 4: swaps the middle pair with factor i/2.
            let f = Cplx::new(T::zero(), r::<T>(0.5));
            super::for_each_quad(dim, a, b, |_, i01, i10, _| {
                acc = acc + l[i01].conj() * (f * p[i10]) + l[i10].conj() * (f * p[i01]);
            });
        }
        (GateKind::IsingXxPart, Targets::Two(a, b)) => {
            // G = i XX / 4
            let f = Cplx::new(T::zero(), r::<T>(0.25));
            super::for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                acc = acc
                    + l[i00].conj() * (f * p[i11])
                    + l[i11].conj() * (f * p[i00])
                    + l[i01].conj() * (f * p[i10])
                    + l[i10].conj() * (f * p[i01]);
            });
        }
        (GateKind::IsingYyPart, Targets::Two(a, b)) => {
            // G = i YY / 4
            let f = Cplx::new(T::zero(), r::<T>(0.25));
            super::for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                acc = acc - l[i00].conj() * (f * p[i11]) - l[i11].conj() * (f * p[i00])
                    + l[i01].conj() * (f * p[i10])
                    + l[i10].conj() * (f * p[i01]);
            });
        }
        (GateKind::Hadamard | GateKind::Swap, _) => {}
        _ => unreachable!("arity checked at circuit construction"),
    }
    acc
}

/// Apply the generator factor G (with `dU = G U`) to the state in place.
/// Used by exact probability Jacobians.
fn apply_generator<T: Real>(state: &mut Statevector<T>, op: &GateOp<T>) {
    let dim = state.dim();
    let zero = Cplx::new(T::zero(), T::zero());
    let amps = state.amplitudes_mut();
    match (op.kind, op.targets) {
        (GateKind::RX, Targets::One(q)) => {
            let f = Cplx::new(T::zero(), -r::<T>(0.5));
            super::for_each_pair(dim, q, |i0, i1| {
                let a = amps[i0];
                let b = amps[i1];
                amps[i0] = f * b;
                amps[i1] = f * a;
            });
        }
        (GateKind::RZ, Targets::One(q)) => {
            let f0 = Cplx::new(T::zero(), -r::<T>(0.5));
            let f1 = Cplx::new(T::zero(), r::<T>(0.5));
            super::for_each_pair(dim, q, |i0, i1| {
                amps[i0] = f0 * amps[i0];
                amps[i1] = f1 * amps[i1];
            });
        }
        (GateKind::ControlledPhase, Targets::Two(a, b)) => {
            let f = Cplx::new(T::zero(), T::one());
            super::for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                amps[i00] = zero;
                amps[i01] = zero;
                amps[i10] = zero;
                amps[i11] = f * amps[i11];
            });
        }
        (GateKind::IsingXy, Targets::Two(a, b)) => {
            let f = Cplx::new(T::zero(), r::<T>(0.5));
            super::for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                let x = amps[i01];
                let y = amps[i10];
                amps[i00] = zero;
                amps[i11] = zero;
                amps[i01] = f * y;
                amps[i10] = f * x;
            });
        }
        (GateKind::IsingXxPart, Targets::Two(a, b)) => {
            let f = Cplx::new(T::zero(), r::<T>(0.25));
            super::for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                let (a00, a01, a10, a11) = (amps[i00], amps[i01], amps[i10], amps[i11]);
                amps[i00] = f * a11;
                amps[i11] = f * a00;
                amps[i01] = f * a10;
                amps[i10] = f * a01;
            });
        }
        (GateKind::IsingYyPart, Targets::Two(a, b)) => {
            let f = Cplx::new(T::zero(), r::<T>(0.25));
            super::for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                let (a00, a01, a10, a11) = (amps[i00], amps[i01], amps[i10], amps[i11]);
                amps[i00] = -(f * a11);
                amps[i11] = -(f * a00);
                amps[i01] = f * a10;
                amps[i10] = f * a01;
            });
        }
        (GateKind::Hadamard | GateKind::Swap, _) => {
            for a in amps.iter_mut() {
                *a = zero;
            }
        }
        _ => unreachable!(),
    }
}

/// Exact Jacobian of outcome probabilities with respect to trainable angles,
/// shape (2^n, n_theta): d p_y / d theta_i = 2 Re( conj(psi_y) dpsi_y ).
pub fn probability_jacobian<T: Real>(
    circuit: &CircuitSpec<T>,
    theta: &[T],
    inputs: &[T],
) -> Result<Array2<T>> {
    let psi = circuit.run(theta, inputs)?;
    let dim = psi.dim();
    let mut jac = Array2::zeros((dim, circuit.n_theta()));
    for (k, op) in circuit.ops().iter().enumerate() {
        let slot = match op.angle {
            AngleRef::Theta(i) => i,
            _ => continue,
        };
        // dpsi = U_{>k} G U_k U_{<k} |0>
        let mut d = Statevector::zero_state(circuit.n_qubits());
        for (j, other) in circuit.ops().iter().enumerate() {
            let angle = circuit.resolve_angle(other, theta, inputs)?;
            apply_gate_kind(&mut d, other.kind, other.targets, angle)?;
            if j == k {
                apply_generator(&mut d, op);
            }
        }
        let two = r::<T>(2.0);
        for y in 0..dim {
            jac[(y, slot)] += two * (psi.amplitudes()[y].conj() * d.amplitudes()[y]).re;
        }
    }
    Ok(jac)
}
