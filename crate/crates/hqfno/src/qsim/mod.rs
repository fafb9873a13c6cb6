//! Exact statevector circuit simulation.
//!
//! Conventions used throughout the crate:
//! - Little-endian bit order: qubit 0 is the least significant bit of the
//!   basis-state index. `|01>` on qubits (1, 0) is therefore index `0b01 = 1`.
//! - Gates are applied in place over the dense amplitude vector with stride
//!   arithmetic; no full matrices are ever materialized.
//! - For two-qubit gates the pair basis is ordered `(|00>, |01>, |10>, |11>)`
//!   where the *first* target supplies the low bit of the pair index. All
//!   two-qubit gates in the set are symmetric under target exchange.

mod grad;

pub use grad::{adjoint_weighted_z, circuit_gradients, probability_jacobian, GradMethod};

use crate::error::{Error, Result};
use crate::num::{r, Cplx, Real};

/// Dense complex amplitude vector over `2^n_qubits` basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector<T: Real> {
    amps: Vec<Cplx<T>>,
    n_qubits: usize,
}

impl<T: Real> Statevector<T> {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Self {
        assert!(n_qubits >= 1, "n_qubits must be positive");
        let mut amps = vec![Cplx::new(T::zero(), T::zero()); 1 << n_qubits];
        amps[0] = Cplx::new(T::one(), T::zero());
        Statevector { amps, n_qubits }
    }

    /// Computational basis state `|index>` (little-endian index).
    pub fn basis_state(n_qubits: usize, index: usize) -> Self {
        assert!(index < (1 << n_qubits), "basis index out of range");
        let mut s = Self::zero_state(n_qubits);
        s.amps[0] = Cplx::new(T::zero(), T::zero());
        s.amps[index] = Cplx::new(T::one(), T::zero());
        s
    }

    /// Build from raw amplitudes; the length must be a power of two.
    pub fn from_amplitudes(amps: Vec<Cplx<T>>) -> Result<Self> {
        let n = amps.len();
        if n == 0 || n & (n - 1) != 0 {
            return Err(Error::shape(format!(
                "amplitude vector length {n} is not a power of two"
            )));
        }
        Ok(Statevector {
            n_qubits: n.trailing_zeros() as usize,
            amps,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Cplx<T>] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Cplx<T>] {
        &mut self.amps
    }

    /// L2 norm of the amplitude vector.
    pub fn norm(&self) -> T {
        self.amps
            .iter()
            .map(|a| a.norm_sqr())
            .fold(T::zero(), |acc, x| acc + x)
            .sqrt()
    }

    /// Outcome probabilities `|amp_b|^2` over basis states.
    pub fn probabilities(&self) -> Vec<T> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Inner product `<self|other>`.
    pub fn inner(&self, other: &Self) -> Cplx<T> {
        debug_assert_eq!(self.n_qubits, other.n_qubits);
        self.amps
            .iter()
            .zip(&other.amps)
            .fold(Cplx::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            })
    }
}

/// Gate vocabulary. `IsingXxPart` / `IsingYyPart` are the two commuting
/// factors of `IsingXy` used by the shift-rule decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    Hadamard,
    Swap,
    RX,
    RZ,
    ControlledPhase,
    IsingXy,
    IsingXxPart,
    IsingYyPart,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Hadamard | GateKind::RX | GateKind::RZ => 1,
            _ => 2,
        }
    }

    pub fn has_angle(self) -> bool {
        !matches!(self, GateKind::Hadamard | GateKind::Swap)
    }
}

/// Where a gate angle comes from when a circuit is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AngleRef<T> {
    /// No angle (Hadamard, Swap).
    None,
    /// Structural constant, e.g. QFT phases.
    Fixed(T),
    /// Trainable parameter slot.
    Theta(usize),
    /// Data-dependent input slot (angle embedding).
    Input(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Targets {
    One(usize),
    Two(usize, usize),
}

impl Targets {
    fn check(self, n_qubits: usize, kind: GateKind) -> Result<()> {
        let check_q = |q: usize| -> Result<()> {
            if q >= n_qubits {
                Err(Error::QubitIndex {
                    index: q,
                    n_qubits,
                })
            } else {
                Ok(())
            }
        };
        match (self, kind.arity()) {
            (Targets::One(q), 1) => check_q(q),
            (Targets::Two(a, b), 2) => {
                check_q(a)?;
                check_q(b)?;
                if a == b {
                    return Err(Error::domain(format!(
                        "two-qubit gate targets must be distinct, got ({a}, {b})"
                    )));
                }
                Ok(())
            }
            _ => Err(Error::domain(format!(
                "gate {kind:?} expects {} target(s)",
                kind.arity()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOp<T> {
    pub kind: GateKind,
    pub targets: Targets,
    pub angle: AngleRef<T>,
}

impl<T: Real> GateOp<T> {
    pub fn hadamard(q: usize) -> Self {
        GateOp {
            kind: GateKind::Hadamard,
            targets: Targets::One(q),
            angle: AngleRef::None,
        }
    }
    pub fn swap(a: usize, b: usize) -> Self {
        GateOp {
            kind: GateKind::Swap,
            targets: Targets::Two(a, b),
            angle: AngleRef::None,
        }
    }
    pub fn rx(q: usize, angle: AngleRef<T>) -> Self {
        GateOp {
            kind: GateKind::RX,
            targets: Targets::One(q),
            angle,
        }
    }
    pub fn rz(q: usize, angle: AngleRef<T>) -> Self {
        GateOp {
            kind: GateKind::RZ,
            targets: Targets::One(q),
            angle,
        }
    }
    pub fn controlled_phase(a: usize, b: usize, angle: AngleRef<T>) -> Self {
        GateOp {
            kind: GateKind::ControlledPhase,
            targets: Targets::Two(a, b),
            angle,
        }
    }
    pub fn ising_xy(a: usize, b: usize, angle: AngleRef<T>) -> Self {
        GateOp {
            kind: GateKind::IsingXy,
            targets: Targets::Two(a, b),
            angle,
        }
    }
}

/// Immutable circuit description. Angles are resolved against a trainable
/// parameter slice and an input slice at evaluation time, so one spec can be
/// replayed over many data rows without rebuilding.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec<T> {
    n_qubits: usize,
    ops: Vec<GateOp<T>>,
    n_theta: usize,
    n_inputs: usize,
}

impl<T: Real> CircuitSpec<T> {
    pub fn new(n_qubits: usize, ops: Vec<GateOp<T>>) -> Result<Self> {
        if n_qubits < 1 {
            return Err(Error::domain("circuit needs at least one qubit"));
        }
        let mut n_theta = 0usize;
        let mut n_inputs = 0usize;
        for op in &ops {
            op.targets.check(n_qubits, op.kind)?;
            match (op.kind.has_angle(), op.angle) {
                (true, AngleRef::None) => {
                    return Err(Error::domain(format!("gate {:?} requires an angle", op.kind)))
                }
                (false, AngleRef::None) => {}
                (false, _) => {
                    return Err(Error::domain(format!("gate {:?} takes no angle", op.kind)))
                }
                (true, AngleRef::Theta(i)) => n_theta = n_theta.max(i + 1),
                (true, AngleRef::Input(i)) => n_inputs = n_inputs.max(i + 1),
                (true, AngleRef::Fixed(_)) => {}
            }
        }
        Ok(CircuitSpec {
            n_qubits,
            ops,
            n_theta,
            n_inputs,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn ops(&self) -> &[GateOp<T>] {
        &self.ops
    }

    /// Number of trainable angle slots.
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    /// Number of data-input angle slots.
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    /// One flag per angle-bearing op: true iff the angle is trainable.
    pub fn trainable_mask(&self) -> Vec<bool> {
        self.ops
            .iter()
            .filter(|op| op.kind.has_angle())
            .map(|op| matches!(op.angle, AngleRef::Theta(_)))
            .collect()
    }

    pub fn resolve_angle(&self, op: &GateOp<T>, theta: &[T], inputs: &[T]) -> Result<T> {
        let val = match op.angle {
            AngleRef::None => T::zero(),
            AngleRef::Fixed(a) => a,
            AngleRef::Theta(i) => *theta.get(i).ok_or_else(|| {
                Error::shape(format!("theta slice too short for slot {i}"))
            })?,
            AngleRef::Input(i) => *inputs.get(i).ok_or_else(|| {
                Error::shape(format!("input slice too short for slot {i}"))
            })?,
        };
        if op.kind.has_angle() && !val.is_finite() {
            return Err(Error::domain(format!("non-finite angle for {:?}", op.kind)));
        }
        Ok(val)
    }

    /// Apply all ops to `state` in order.
    pub fn apply_to(&self, state: &mut Statevector<T>, theta: &[T], inputs: &[T]) -> Result<()> {
        if state.n_qubits != self.n_qubits {
            return Err(Error::shape(format!(
                "state has {} qubits, circuit expects {}",
                state.n_qubits, self.n_qubits
            )));
        }
        for op in &self.ops {
            let angle = self.resolve_angle(op, theta, inputs)?;
            apply_gate_kind(state, op.kind, op.targets, angle)?;
        }
        Ok(())
    }

    /// Run the circuit from `|0...0>`.
    pub fn run(&self, theta: &[T], inputs: &[T]) -> Result<Statevector<T>> {
        let mut s = Statevector::zero_state(self.n_qubits);
        self.apply_to(&mut s, theta, inputs)?;
        Ok(s)
    }

    /// Exact adjoint circuit: reversed op order, negated angles. Fails if any
    /// angle is non-structural (the adjoint of a parameterized slot is not a
    /// fixed circuit).
    pub fn adjoint(&self) -> Result<Self> {
        let mut ops = Vec::with_capacity(self.ops.len());
        for op in self.ops.iter().rev() {
            let angle = match op.angle {
                AngleRef::None => AngleRef::None,
                AngleRef::Fixed(a) => AngleRef::Fixed(-a),
                _ => {
                    return Err(Error::config(
                        "adjoint of a circuit with parameter slots is not representable",
                    ))
                }
            };
            ops.push(GateOp {
                kind: op.kind,
                targets: op.targets,
                angle,
            });
        }
        CircuitSpec::new(self.n_qubits, ops)
    }
}

/// Apply a single gate to the state. Angle must already be resolved.
pub fn apply_gate_kind<T: Real>(
    state: &mut Statevector<T>,
    kind: GateKind,
    targets: Targets,
    angle: T,
) -> Result<()> {
    targets.check(state.n_qubits, kind)?;
    if kind.has_angle() && !angle.is_finite() {
        return Err(Error::domain(format!("non-finite angle for {kind:?}")));
    }
    let amps = &mut state.amps;
    let dim = amps.len();
    match (kind, targets) {
        (GateKind::Hadamard, Targets::One(q)) => {
            let inv_sqrt2 = T::FRAC_1_SQRT_2();
            for_each_pair(dim, q, |i0, i1| {
                let a = amps[i0];
                let b = amps[i1];
                amps[i0] = (a + b) * inv_sqrt2;
                amps[i1] = (a - b) * inv_sqrt2;
            });
        }
        (GateKind::RX, Targets::One(q)) => {
            let half = angle * r::<T>(0.5);
            let c = half.cos();
            let s = half.sin();
            // exp(-i a X/2) = [[cos, -i sin], [-i sin, cos]]
            for_each_pair(dim, q, |i0, i1| {
                let a = amps[i0];
                let b = amps[i1];
                amps[i0] = a * c - Cplx::new(T::zero(), s) * b;
                amps[i1] = b * c - Cplx::new(T::zero(), s) * a;
            });
        }
        (GateKind::RZ, Targets::One(q)) => {
            let half = angle * r::<T>(0.5);
            let e_neg = Cplx::from_polar(T::one(), -half);
            let e_pos = Cplx::from_polar(T::one(), half);
            for_each_pair(dim, q, |i0, i1| {
                amps[i0] *= e_neg;
                amps[i1] *= e_pos;
            });
        }
        (GateKind::Swap, Targets::Two(a, b)) => {
            for_each_quad(dim, a, b, |_, i01, i10, _| {
                amps.swap(i01, i10);
            });
        }
        (GateKind::ControlledPhase, Targets::Two(a, b)) => {
            let phase = Cplx::from_polar(T::one(), angle);
            for_each_quad(dim, a, b, |_, _, _, i11| {
                amps[i11] *= phase;
            });
        }
        (GateKind::IsingXy, Targets::Two(a, b)) => {
            // exp(i phi (XX+YY)/4): acts on the {|01>, |10>} subspace as
            // [[cos(phi/2), i sin(phi/2)], [i sin(phi/2), cos(phi/2)]].
            let half = angle * r::<T>(0.5);
            let c = half.cos();
            let is = Cplx::new(T::zero(), half.sin());
            for_each_quad(dim, a, b, |_, i01, i10, _| {
                let x = amps[i01];
                let y = amps[i10];
                amps[i01] = x * c + is * y;
                amps[i10] = y * c + is * x;
            });
        }
        (GateKind::IsingXxPart, Targets::Two(a, b)) => {
            // exp(i phi XX/4) = cos(phi/4) I + i sin(phi/4) XX
            let quarter = angle * r::<T>(0.25);
            let c = quarter.cos();
            let is = Cplx::new(T::zero(), quarter.sin());
            for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                let a00 = amps[i00];
                let a01 = amps[i01];
                let a10 = amps[i10];
                let a11 = amps[i11];
                amps[i00] = a00 * c + is * a11;
                amps[i11] = a11 * c + is * a00;
                amps[i01] = a01 * c + is * a10;
                amps[i10] = a10 * c + is * a01;
            });
        }
        (GateKind::IsingYyPart, Targets::Two(a, b)) => {
            // exp(i phi YY/4) = cos(phi/4) I + i sin(phi/4) YY
            let quarter = angle * r::<T>(0.25);
            let c = quarter.cos();
            let is = Cplx::new(T::zero(), quarter.sin());
            for_each_quad(dim, a, b, |i00, i01, i10, i11| {
                let a00 = amps[i00];
                let a01 = amps[i01];
                let a10 = amps[i10];
                let a11 = amps[i11];
                // YY|00> = -|11>, YY|11> = -|00>, YY|01> = |10>, YY|10> = |01>
                amps[i00] = a00 * c - is * a11;
                amps[i11] = a11 * c - is * a00;
                amps[i01] = a01 * c + is * a10;
                amps[i10] = a10 * c + is * a01;
            });
        }
        _ => unreachable!("targets arity checked above"),
    }
    Ok(())
}

/// Apply the inverse of a gate (all gates here invert by angle negation).
pub fn apply_gate_kind_inverse<T: Real>(
    state: &mut Statevector<T>,
    kind: GateKind,
    targets: Targets,
    angle: T,
) -> Result<()> {
    apply_gate_kind(state, kind, targets, -angle)
}

/// Iterate over (i0, i1) index pairs differing only in bit `q`.
#[inline]
fn for_each_pair(dim: usize, q: usize, mut f: impl FnMut(usize, usize)) {
    let step = 1usize << q;
    let mut base = 0usize;
    while base < dim {
        for offset in base..base + step {
            f(offset, offset + step);
        }
        base += step << 1;
    }
}

/// Iterate over (i00, i01, i10, i11) where i01 has bit `a` set, i10 bit `b`.
#[inline]
fn for_each_quad(dim: usize, a: usize, b: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let ma = 1usize << a;
    let mb = 1usize << b;
    for i in 0..dim {
        if i & ma == 0 && i & mb == 0 {
            f(i, i | ma, i | mb, i | ma | mb);
        }
    }
}

/// Pauli-Z expectation per qubit: entry j = sum_b |amp_b|^2 * (+1 if bit j of
/// b is 0 else -1).
pub fn expect_z_all<T: Real>(state: &Statevector<T>) -> Result<Vec<T>> {
    let mut total = T::zero();
    let mut z = vec![T::zero(); state.n_qubits];
    for (b, amp) in state.amps.iter().enumerate() {
        let p = amp.norm_sqr();
        total += p;
        for (j, zj) in z.iter_mut().enumerate() {
            if b >> j & 1 == 0 {
                *zj += p;
            } else {
                *zj -= p;
            }
        }
    }
    if (total - T::one()).abs() > r(1e-9) {
        return Err(Error::Internal(format!(
            "total probability {total} deviates from 1 by more than 1e-9"
        )));
    }
    Ok(z)
}

/// Textbook QFT: Hadamards and controlled phases, then the bit-reversal swap
/// network. Satisfies `QFT |j> = 2^{-n/2} sum_k exp(2 pi i j k / 2^n) |k>` in
/// the little-endian index basis.
pub fn build_qft<T: Real>(n_qubits: usize) -> Result<CircuitSpec<T>> {
    if n_qubits < 1 {
        return Err(Error::domain("QFT needs at least one qubit"));
    }
    let mut ops = Vec::new();
    for q in (0..n_qubits).rev() {
        ops.push(GateOp::hadamard(q));
        for p in (0..q).rev() {
            let angle = r::<T>(std::f64::consts::PI / (1u64 << (q - p)) as f64);
            ops.push(GateOp::controlled_phase(p, q, AngleRef::Fixed(angle)));
        }
    }
    for q in 0..n_qubits / 2 {
        ops.push(GateOp::swap(q, n_qubits - 1 - q));
    }
    CircuitSpec::new(n_qubits, ops)
}

/// Exact adjoint of [`build_qft`]: reversed ops with negated phases.
pub fn build_inverse_qft<T: Real>(n_qubits: usize) -> Result<CircuitSpec<T>> {
    build_qft::<T>(n_qubits)?.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    type C64 = Cplx<f64>;

    fn random_state(n: usize, seed: u64) -> Statevector<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut amps: Vec<C64> = (0..1usize << n)
            .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut amps {
            *a /= norm;
        }
        Statevector::from_amplitudes(amps).unwrap()
    }

    #[test]
    fn xy_at_zero_is_identity() {
        let mut s = random_state(3, 1);
        let before = s.clone();
        apply_gate_kind(&mut s, GateKind::IsingXy, Targets::Two(0, 2), 0.0).unwrap();
        for (a, b) in s.amplitudes().iter().zip(before.amplitudes()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn xy_at_pi_maps_01_to_i_10() {
        // |01> on targets (a=0, b=1) means bit0=1, bit1=0 -> index 1.
        let mut s = Statevector::<f64>::basis_state(2, 0b01);
        apply_gate_kind(&mut s, GateKind::IsingXy, Targets::Two(0, 1), std::f64::consts::PI)
            .unwrap();
        // Expect i * |10> = i at index 0b10.
        assert!((s.amplitudes()[0b10] - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(s.amplitudes()[0b01].norm() < 1e-15);
    }

    #[test]
    fn xy_leaves_00_and_11_unchanged() {
        for phi in [0.3, 1.2, -2.5, std::f64::consts::PI] {
            let mut s = random_state(2, 7);
            let before = s.clone();
            apply_gate_kind(&mut s, GateKind::IsingXy, Targets::Two(0, 1), phi).unwrap();
            assert!((s.amplitudes()[0b00] - before.amplitudes()[0b00]).norm() < 1e-15);
            assert!((s.amplitudes()[0b11] - before.amplitudes()[0b11]).norm() < 1e-15);
        }
    }

    #[test]
    fn xy_is_product_of_commuting_parts() {
        let phi = 0.8371;
        let mut a = random_state(3, 3);
        let mut b = a.clone();
        apply_gate_kind(&mut a, GateKind::IsingXy, Targets::Two(1, 2), phi).unwrap();
        apply_gate_kind(&mut b, GateKind::IsingXxPart, Targets::Two(1, 2), phi).unwrap();
        apply_gate_kind(&mut b, GateKind::IsingYyPart, Targets::Two(1, 2), phi).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn rx_then_z_expectation_is_cos() {
        for a in [0.0, 0.4, std::f64::consts::FRAC_PI_2, 2.9] {
            let mut s = Statevector::<f64>::zero_state(1);
            apply_gate_kind(&mut s, GateKind::RX, Targets::One(0), a).unwrap();
            let z = expect_z_all(&s).unwrap();
            assert!((z[0] - a.cos()).abs() < 1e-14, "a={a}");
        }
        // a = pi/3 -> 0.5 exactly up to float error
        let mut s = Statevector::<f64>::zero_state(1);
        apply_gate_kind(&mut s, GateKind::RX, Targets::One(0), std::f64::consts::FRAC_PI_3).unwrap();
        assert!((expect_z_all(&s).unwrap()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn expect_z_basis_states() {
        let s = Statevector::<f64>::zero_state(3);
        assert_eq!(expect_z_all(&s).unwrap(), vec![1.0, 1.0, 1.0]);
        // |1> on qubit 0, |0> on qubit 1 -> (-1, +1)
        let s = Statevector::<f64>::basis_state(2, 0b01);
        assert_eq!(expect_z_all(&s).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn qft_single_qubit_is_hadamard() {
        let qft = build_qft::<f64>(1).unwrap();
        assert_eq!(qft.ops().len(), 1);
        assert_eq!(qft.ops()[0].kind, GateKind::Hadamard);
    }

    #[test]
    fn qft_of_zero_state_is_uniform() {
        for n in 1..=5 {
            let qft = build_qft::<f64>(n).unwrap();
            let s = qft.run(&[], &[]).unwrap();
            let expected = (1.0f64 / (1u64 << n) as f64).sqrt();
            for amp in s.amplitudes() {
                assert!((amp.re - expected).abs() < 1e-12);
                assert!(amp.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qft_inverse_qft_is_identity_on_random_state() {
        for n in 1..=6 {
            let qft = build_qft::<f64>(n).unwrap();
            let iqft = build_inverse_qft::<f64>(n).unwrap();
            let original = random_state(n, n as u64);
            let mut s = original.clone();
            qft.apply_to(&mut s, &[], &[]).unwrap();
            iqft.apply_to(&mut s, &[], &[]).unwrap();
            for (a, b) in s.amplitudes().iter().zip(original.amplitudes()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gate_application_preserves_norm() {
        let mut s = random_state(4, 11);
        let gates: Vec<(GateKind, Targets, f64)> = vec![
            (GateKind::Hadamard, Targets::One(2), 0.0),
            (GateKind::RX, Targets::One(0), 1.1),
            (GateKind::RZ, Targets::One(3), -0.7),
            (GateKind::Swap, Targets::Two(1, 3), 0.0),
            (GateKind::ControlledPhase, Targets::Two(0, 2), 0.9),
            (GateKind::IsingXy, Targets::Two(2, 3), 2.2),
        ];
        for (kind, t, a) in gates {
            apply_gate_kind(&mut s, kind, t, a).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-12, "after {kind:?}");
        }
    }

    #[test]
    fn out_of_range_target_is_an_index_error() {
        let mut s = Statevector::<f64>::zero_state(2);
        let err = apply_gate_kind(&mut s, GateKind::RX, Targets::One(2), 0.1).unwrap_err();
        assert!(matches!(err, Error::QubitIndex { index: 2, n_qubits: 2 }));
    }

    #[test]
    fn non_finite_angle_is_a_domain_error() {
        let mut s = Statevector::<f64>::zero_state(1);
        let err = apply_gate_kind(&mut s, GateKind::RX, Targets::One(0), f64::NAN).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn f32_instantiation_preserves_norm() {
        let mut s = Statevector::<f32>::zero_state(3);
        apply_gate_kind(&mut s, GateKind::Hadamard, Targets::One(0), 0.0f32).unwrap();
        apply_gate_kind(&mut s, GateKind::IsingXy, Targets::Two(0, 2), 1.3f32).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-5);
    }
}
