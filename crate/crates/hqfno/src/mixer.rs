//! Mode-shared spectral mixers.
//!
//! Two realizations of the same role: a variational-quantum-circuit mixer
//! (robust scaler -> linear encode -> QFT / odd-even IsingXY mesh / inverse
//! QFT -> per-qubit Z readout -> linear decode) and a parameter-matched
//! classical bottleneck MLP. Both consume one retained Fourier mode as a
//! `2*C_q` real vector (real parts then imaginary parts) and emit the same
//! layout back.

#![allow(clippy::needless_range_loop)] // matmul-style index loops

use crate::error::{Error, Result};
use crate::num::{dgelu, dsigmoid_from_output, gelu, r, sigmoid, Cplx, Real};
use crate::qsim::{
    adjoint_weighted_z, build_inverse_qft, build_qft, AngleRef, CircuitSpec, GateOp,
};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalerMode {
    Training,
    Inference,
}

/// Feature-wise EMA percentile min-max state with soft (sigmoid) compression
/// to angles in (0, pi). Non-trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustScaler<T: Real> {
    pub running_min: Array1<T>,
    pub running_max: Array1<T>,
    pub momentum: T,
    pub epsilon: T,
    pub initialized: bool,
    pub mode: ScalerMode,
    /// Number of EMA updates applied so far (the data-driven init counts).
    pub update_count: usize,
}

pub const SCALER_MOMENTUM_DEFAULT: f64 = 0.05;
pub const SCALER_EPSILON_DEFAULT: f64 = 1e-6;
const LOW_QUANTILE: f64 = 0.02;
const HIGH_QUANTILE: f64 = 0.98;

impl<T: Real> RobustScaler<T> {
    pub fn new(n_features: usize) -> Self {
        RobustScaler {
            running_min: Array1::zeros(n_features),
            running_max: Array1::zeros(n_features),
            momentum: r(SCALER_MOMENTUM_DEFAULT),
            epsilon: r(SCALER_EPSILON_DEFAULT),
            initialized: false,
            mode: ScalerMode::Training,
            update_count: 0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.running_min.len()
    }

    /// EMA percentile update from a batch of rows (N x n_features). The very
    /// first update sets the state directly to the batch percentiles.
    pub fn update(&mut self, batch: ArrayView2<T>) -> Result<()> {
        if self.mode != ScalerMode::Training {
            return Err(Error::state("scaler update called in inference mode"));
        }
        if batch.nrows() == 0 || batch.ncols() != self.n_features() {
            return Err(Error::shape(format!(
                "scaler update expects N x {} batch, got {} x {}",
                self.n_features(),
                batch.nrows(),
                batch.ncols()
            )));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite values in scaler update batch"));
        }
        let mut col = Vec::with_capacity(batch.nrows());
        for j in 0..self.n_features() {
            col.clear();
            col.extend(batch.column(j).iter().copied());
            let lo = crate::num::quantile(&col, LOW_QUANTILE);
            let hi = crate::num::quantile(&col, HIGH_QUANTILE);
            if self.initialized {
                let mu = self.momentum;
                self.running_min[j] = (T::one() - mu) * self.running_min[j] + mu * lo;
                self.running_max[j] = (T::one() - mu) * self.running_max[j] + mu * hi;
            } else {
                self.running_min[j] = lo;
                self.running_max[j] = hi;
            }
        }
        self.initialized = true;
        self.update_count += 1;
        Ok(())
    }

    /// Map a feature row into (0, pi)^n: normalize against the tracked
    /// percentile range, centered sigmoid with slope 6, scale by pi.
    /// Out-of-range values are softly compressed, never clipped.
    pub fn scale_to_angles(&self, row: &[T]) -> Result<Vec<T>> {
        let (angles, _) = self.scale_with_sigmoid(row)?;
        Ok(angles)
    }

    /// Like [`Self::scale_to_angles`] but also returns the sigmoid outputs
    /// needed by the backward pass.
    pub fn scale_with_sigmoid(&self, row: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if !self.initialized {
            return Err(Error::state("scaler used before first update"));
        }
        if row.len() != self.n_features() {
            return Err(Error::shape(format!(
                "scaler expects {} features, got {}",
                self.n_features(),
                row.len()
            )));
        }
        let six = r::<T>(6.0);
        let half = r::<T>(0.5);
        let mut angles = Vec::with_capacity(row.len());
        let mut sig = Vec::with_capacity(row.len());
        for (j, &v) in row.iter().enumerate() {
            let inv = T::one() / (self.running_max[j] - self.running_min[j] + self.epsilon);
            let norm = (v - self.running_min[j]) * inv;
            let s = sigmoid(six * (norm - half));
            sig.push(s);
            angles.push(T::PI() * s);
        }
        Ok((angles, sig))
    }

    /// d(angle_j)/d(row_j), given the cached sigmoid outputs.
    pub fn angle_jacobian_diag(&self, sig: &[T]) -> Vec<T> {
        let six = r::<T>(6.0);
        sig.iter()
            .enumerate()
            .map(|(j, &s)| {
                let inv = T::one() / (self.running_max[j] - self.running_min[j] + self.epsilon);
                T::PI() * dsigmoid_from_output(s) * six * inv
            })
            .collect()
    }
}

/// Pack complex coefficients as [Re..., Im...].
pub fn pack_complex<T: Real>(coeffs: &[Cplx<T>]) -> Vec<T> {
    let mut row = Vec::with_capacity(2 * coeffs.len());
    row.extend(coeffs.iter().map(|c| c.re));
    row.extend(coeffs.iter().map(|c| c.im));
    row
}

/// Inverse of [`pack_complex`]: first half are real parts, second half
/// imaginary parts.
pub fn unpack_complex<T: Real>(row: &[T]) -> Vec<Cplx<T>> {
    let c_q = row.len() / 2;
    (0..c_q).map(|c| Cplx::new(row[c], row[c_q + c])).collect()
}

/// Trainable-parameter count of the VQC mixer:
/// `3 d (n_q - 1) + 4 C_q n_q + n_q + 2 C_q`.
pub fn vqc_param_count(c_q: usize, n_q: usize, depth: usize) -> usize {
    3 * depth * (n_q - 1) + 4 * c_q * n_q + n_q + 2 * c_q
}

/// Circuit template shared across all retained modes: RX angle embedding
/// (input slots), QFT, `depth` odd-even IsingXY mesh layers, inverse QFT.
///
/// Trainable angle order: for each depth layer, even pairs (0,1),(2,3),...
/// then odd pairs (1,2),(3,4),...; each pair consumes (RZ on first, IsingXY,
/// RZ on second) in that order.
pub fn mixer_circuit_template<T: Real>(n_q: usize, depth: usize) -> Result<CircuitSpec<T>> {
    if n_q < 1 {
        return Err(Error::domain("mixer circuit needs at least one qubit"));
    }
    let mut ops: Vec<GateOp<T>> = Vec::new();
    for q in 0..n_q {
        ops.push(GateOp::rx(q, AngleRef::Input(q)));
    }
    ops.extend(build_qft::<T>(n_q)?.ops().iter().copied());
    let mut slot = 0usize;
    for _ in 0..depth {
        for start in [0usize, 1] {
            let mut a = start;
            while a + 1 < n_q {
                ops.push(GateOp::rz(a, AngleRef::Theta(slot)));
                ops.push(GateOp::ising_xy(a, a + 1, AngleRef::Theta(slot + 1)));
                ops.push(GateOp::rz(a + 1, AngleRef::Theta(slot + 2)));
                slot += 3;
                a += 2;
            }
        }
    }
    ops.extend(build_inverse_qft::<T>(n_q)?.ops().iter().copied());
    let spec = CircuitSpec::new(n_q, ops)?;
    debug_assert_eq!(spec.n_theta(), 3 * depth * (n_q - 1));
    Ok(spec)
}

/// Materialized mixer circuit for a concrete angle-embedding row: embedding
/// angles become fixed, trainable slots stay referenced.
pub fn build_mixer_circuit<T: Real>(
    n_q: usize,
    depth: usize,
    angles: &[T],
) -> Result<CircuitSpec<T>> {
    if angles.len() != n_q {
        return Err(Error::shape(format!(
            "expected {n_q} embedding angles, got {}",
            angles.len()
        )));
    }
    for &a in angles {
        if !a.is_finite() {
            return Err(Error::domain("non-finite embedding angle"));
        }
    }
    let template = mixer_circuit_template::<T>(n_q, depth)?;
    let ops = template
        .ops()
        .iter()
        .map(|op| {
            let angle = match op.angle {
                AngleRef::Input(i) => AngleRef::Fixed(angles[i]),
                other => other,
            };
            GateOp {
                kind: op.kind,
                targets: op.targets,
                angle,
            }
        })
        .collect();
    CircuitSpec::new(n_q, ops)
}

/// VQC mixer parameters: circuit angles plus encode/decode projections.
#[derive(Debug, Clone)]
pub struct VqcMixer<T: Real> {
    pub theta: Array1<T>,
    /// Encode projection, n_q x 2C_q.
    pub e_w: Array2<T>,
    pub e_b: Array1<T>,
    /// Decode projection, 2C_q x n_q.
    pub d_w: Array2<T>,
    pub d_b: Array1<T>,
    pub c_q: usize,
    pub n_q: usize,
    pub depth: usize,
    circuit: CircuitSpec<T>,
}

fn uniform<T: Real>(rng: &mut impl Rng, limit: f64) -> T {
    r(rng.gen_range(-limit..limit))
}

impl<T: Real> VqcMixer<T> {
    /// Fresh mixer: theta uniform on [-pi/10, pi/10], projections fan-in
    /// scaled uniform.
    pub fn new(c_q: usize, n_q: usize, depth: usize, rng: &mut impl Rng) -> Result<Self> {
        if c_q == 0 || n_q == 0 || depth == 0 {
            return Err(Error::config("VQC mixer needs c_q, n_q, depth >= 1"));
        }
        let circuit = mixer_circuit_template::<T>(n_q, depth)?;
        let theta_limit = std::f64::consts::PI / 10.0;
        let theta = Array1::from_shape_fn(3 * depth * (n_q - 1), |_| uniform(rng, theta_limit));
        let e_limit = 1.0 / ((2 * c_q) as f64).sqrt();
        let e_w = Array2::from_shape_fn((n_q, 2 * c_q), |_| uniform(rng, e_limit));
        let e_b = Array1::from_shape_fn(n_q, |_| uniform(rng, e_limit));
        let d_limit = 1.0 / (n_q as f64).sqrt();
        let d_w = Array2::from_shape_fn((2 * c_q, n_q), |_| uniform(rng, d_limit));
        let d_b = Array1::from_shape_fn(2 * c_q, |_| uniform(rng, d_limit));
        Ok(VqcMixer {
            theta,
            e_w,
            e_b,
            d_w,
            d_b,
            c_q,
            n_q,
            depth,
            circuit,
        })
    }

    pub fn circuit(&self) -> &CircuitSpec<T> {
        &self.circuit
    }

    /// Enumerated count of stored trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.theta.len() + self.e_w.len() + self.e_b.len() + self.d_w.len() + self.d_b.len()
    }

    /// Mixer forward for one retained mode.
    pub fn forward(
        &self,
        scaler: &RobustScaler<T>,
        coeffs: &[Cplx<T>],
    ) -> Result<Vec<Cplx<T>>> {
        Ok(self.forward_cached(scaler, coeffs)?.0)
    }

    pub fn forward_cached(
        &self,
        scaler: &RobustScaler<T>,
        coeffs: &[Cplx<T>],
    ) -> Result<(Vec<Cplx<T>>, VqcRowCache<T>)> {
        if coeffs.len() != self.c_q {
            return Err(Error::shape(format!(
                "expected {} complex coefficients, got {}",
                self.c_q,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::data("non-finite mixer input coefficients"));
        }
        let row = pack_complex(coeffs);
        let (angles, sig) = scaler.scale_with_sigmoid(&row)?;
        // a = E * angles + e_b
        let mut a = self.e_b.to_vec();
        for (j, aj) in a.iter_mut().enumerate() {
            for (k, &ang) in angles.iter().enumerate() {
                *aj += self.e_w[(j, k)] * ang;
            }
        }
        let state = self.circuit.run(self.theta.as_slice().unwrap(), &a)?;
        let z = crate::qsim::expect_z_all(&state)?;
        // y = D * z + d_b
        let mut y = self.d_b.to_vec();
        for (k, yk) in y.iter_mut().enumerate() {
            for (j, &zj) in z.iter().enumerate() {
                *yk += self.d_w[(k, j)] * zj;
            }
        }
        let out = unpack_complex(&y);
        Ok((out, VqcRowCache { sig, angles, a, z }))
    }

    /// Reverse-mode pass for one row. Returns the gradient with respect to
    /// the input coefficients; parameter gradients accumulate into `grads`.
    pub fn backward(
        &self,
        scaler: &RobustScaler<T>,
        cache: &VqcRowCache<T>,
        grad_out: &[Cplx<T>],
        grads: &mut VqcGrads<T>,
    ) -> Result<Vec<Cplx<T>>> {
        let two_cq = 2 * self.c_q;
        // Complex reassembly adjoint.
        let mut g_y = vec![T::zero(); two_cq];
        for c in 0..self.c_q {
            g_y[c] = grad_out[c].re;
            g_y[self.c_q + c] = grad_out[c].im;
        }
        // y = D z + d_b
        let mut g_z = vec![T::zero(); self.n_q];
        for k in 0..two_cq {
            grads.d_b[k] += g_y[k];
            for j in 0..self.n_q {
                grads.d_w[(k, j)] += g_y[k] * cache.z[j];
                g_z[j] += self.d_w[(k, j)] * g_y[k];
            }
        }
        // Circuit: adjoint sweep of sum_j g_z[j] <Z_j>.
        let (d_theta, g_a) =
            adjoint_weighted_z(&self.circuit, self.theta.as_slice().unwrap(), &cache.a, &g_z)?;
        for (i, g) in d_theta.iter().enumerate() {
            grads.theta[i] += *g;
        }
        // a = E * angles + e_b
        let mut g_angles = vec![T::zero(); two_cq];
        for j in 0..self.n_q {
            grads.e_b[j] += g_a[j];
            for k in 0..two_cq {
                grads.e_w[(j, k)] += g_a[j] * cache.angles[k];
                g_angles[k] += self.e_w[(j, k)] * g_a[j];
            }
        }
        // Scaler (running stats are constants).
        let diag = scaler.angle_jacobian_diag(&cache.sig);
        let g_row: Vec<T> = g_angles
            .iter()
            .zip(&diag)
            .map(|(&g, &d)| g * d)
            .collect();
        Ok(unpack_complex(&g_row))
    }
}

#[derive(Debug, Clone)]
pub struct VqcRowCache<T> {
    pub sig: Vec<T>,
    pub angles: Vec<T>,
    pub a: Vec<T>,
    pub z: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct VqcGrads<T: Real> {
    pub theta: Array1<T>,
    pub e_w: Array2<T>,
    pub e_b: Array1<T>,
    pub d_w: Array2<T>,
    pub d_b: Array1<T>,
}

impl<T: Real> VqcGrads<T> {
    pub fn zeros_like(m: &VqcMixer<T>) -> Self {
        VqcGrads {
            theta: Array1::zeros(m.theta.len()),
            e_w: Array2::zeros(m.e_w.dim()),
            e_b: Array1::zeros(m.e_b.len()),
            d_w: Array2::zeros(m.d_w.dim()),
            d_b: Array1::zeros(m.d_b.len()),
        }
    }
}

/// Classical mode-shared bottleneck control.
///
/// Structure: bias-free input projection 2C_q -> h, GELU, `depth - 1` hidden
/// h -> h linears with bias (GELU after each), output projection h -> 2C_q
/// with bias. The bias-free input projection is what lets the width search
/// land within a few parameters of the VQC budget.
#[derive(Debug, Clone)]
pub struct BottleneckMixer<T: Real> {
    pub in_w: Array2<T>,
    pub hidden: Vec<(Array2<T>, Array1<T>)>,
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
    pub c_q: usize,
    pub width: usize,
    pub depth: usize,
}

/// Trainable-parameter count of the bottleneck for a given width/depth.
pub fn bottleneck_param_count(c_q: usize, width: usize, depth: usize) -> usize {
    let h = width;
    2 * c_q * h + (depth - 1) * (h * h + h) + (h * 2 * c_q + 2 * c_q)
}

/// Exhaustive width search matching the bottleneck budget to the VQC budget
/// at the same (C_q, n_q, d). Ties break toward smaller depth, then smaller
/// width. Returns (width, depth, achieved_count).
pub fn match_bottleneck_width(c_q: usize, n_q: usize, d: usize) -> (usize, usize, usize) {
    let target = vqc_param_count(c_q, n_q, d) as i64;
    let mut best: Option<(i64, usize, usize, usize)> = None;
    for depth in 1..=3usize {
        for h in 1..=8 * c_q {
            let count = bottleneck_param_count(c_q, h, depth);
            let miss = (count as i64 - target).abs();
            let cand = (miss, depth, h, count);
            best = Some(match best {
                None => cand,
                Some(cur) => {
                    if (miss, depth, h) < (cur.0, cur.1, cur.2) {
                        cand
                    } else {
                        cur
                    }
                }
            });
        }
    }
    let (_, depth, h, count) = best.expect("non-empty search space");
    (h, depth, count)
}

impl<T: Real> BottleneckMixer<T> {
    pub fn new(c_q: usize, width: usize, depth: usize, rng: &mut impl Rng) -> Result<Self> {
        if c_q == 0 || width == 0 || depth == 0 {
            return Err(Error::config("bottleneck needs c_q, width, depth >= 1"));
        }
        let in_limit = 1.0 / ((2 * c_q) as f64).sqrt();
        let h_limit = 1.0 / (width as f64).sqrt();
        let in_w = Array2::from_shape_fn((width, 2 * c_q), |_| uniform(rng, in_limit));
        let hidden = (0..depth - 1)
            .map(|_| {
                (
                    Array2::from_shape_fn((width, width), |_| uniform(rng, h_limit)),
                    Array1::from_shape_fn(width, |_| uniform(rng, h_limit)),
                )
            })
            .collect();
        let out_w = Array2::from_shape_fn((2 * c_q, width), |_| uniform(rng, h_limit));
        let out_b = Array1::from_shape_fn(2 * c_q, |_| uniform(rng, h_limit));
        Ok(BottleneckMixer {
            in_w,
            hidden,
            out_w,
            out_b,
            c_q,
            width,
            depth,
        })
    }

    /// Mixer sized by [`match_bottleneck_width`] against the VQC at the same
    /// configuration.
    pub fn matched(c_q: usize, n_q: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let (width, depth, _) = match_bottleneck_width(c_q, n_q, d);
        Self::new(c_q, width, depth, rng)
    }

    pub fn trainable_count(&self) -> usize {
        self.in_w.len()
            + self
                .hidden
                .iter()
                .map(|(w, b)| w.len() + b.len())
                .sum::<usize>()
            + self.out_w.len()
            + self.out_b.len()
    }

    pub fn forward(
        &self,
        scaler: &RobustScaler<T>,
        coeffs: &[Cplx<T>],
    ) -> Result<Vec<Cplx<T>>> {
        Ok(self.forward_cached(scaler, coeffs)?.0)
    }

    pub fn forward_cached(
        &self,
        scaler: &RobustScaler<T>,
        coeffs: &[Cplx<T>],
    ) -> Result<(Vec<Cplx<T>>, BottleneckRowCache<T>)> {
        if coeffs.len() != self.c_q {
            return Err(Error::shape(format!(
                "expected {} complex coefficients, got {}",
                self.c_q,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::data("non-finite mixer input coefficients"));
        }
        let row = pack_complex(coeffs);
        let (angles, sig) = scaler.scale_with_sigmoid(&row)?;

        let mut pre = Vec::with_capacity(self.depth);
        let mut act = Vec::with_capacity(self.depth);
        // Input projection, no bias.
        let mut h: Vec<T> = (0..self.width)
            .map(|i| {
                (0..2 * self.c_q)
                    .map(|k| self.in_w[(i, k)] * angles[k])
                    .fold(T::zero(), |a, b| a + b)
            })
            .collect();
        pre.push(h.clone());
        let mut g: Vec<T> = h.iter().map(|&x| gelu(x)).collect();
        act.push(g.clone());
        for (w, b) in &self.hidden {
            h = (0..self.width)
                .map(|i| {
                    b[i] + (0..self.width)
                        .map(|k| w[(i, k)] * g[k])
                        .fold(T::zero(), |a, c| a + c)
                })
                .collect();
            pre.push(h.clone());
            g = h.iter().map(|&x| gelu(x)).collect();
            act.push(g.clone());
        }
        let y: Vec<T> = (0..2 * self.c_q)
            .map(|i| {
                self.out_b[i]
                    + (0..self.width)
                        .map(|k| self.out_w[(i, k)] * g[k])
                        .fold(T::zero(), |a, c| a + c)
            })
            .collect();
        let out = unpack_complex(&y);
        Ok((out, BottleneckRowCache { sig, angles, pre, act }))
    }

    pub fn backward(
        &self,
        scaler: &RobustScaler<T>,
        cache: &BottleneckRowCache<T>,
        grad_out: &[Cplx<T>],
        grads: &mut BottleneckGrads<T>,
    ) -> Result<Vec<Cplx<T>>> {
        let two_cq = 2 * self.c_q;
        let mut g_y = vec![T::zero(); two_cq];
        for c in 0..self.c_q {
            g_y[c] = grad_out[c].re;
            g_y[self.c_q + c] = grad_out[c].im;
        }
        let last_act = cache.act.last().expect("at least one activation");
        let mut g_act = vec![T::zero(); self.width];
        for i in 0..two_cq {
            grads.out_b[i] += g_y[i];
            for k in 0..self.width {
                grads.out_w[(i, k)] += g_y[i] * last_act[k];
                g_act[k] += self.out_w[(i, k)] * g_y[i];
            }
        }
        for layer in (0..self.hidden.len()).rev() {
            let pre = &cache.pre[layer + 1];
            let g_pre: Vec<T> = g_act
                .iter()
                .zip(pre)
                .map(|(&g, &x)| g * dgelu(x))
                .collect();
            let prev_act = &cache.act[layer];
            let (w, _) = &self.hidden[layer];
            let (gw, gb) = &mut grads.hidden[layer];
            let mut g_prev = vec![T::zero(); self.width];
            for i in 0..self.width {
                gb[i] += g_pre[i];
                for k in 0..self.width {
                    gw[(i, k)] += g_pre[i] * prev_act[k];
                    g_prev[k] += w[(i, k)] * g_pre[i];
                }
            }
            g_act = g_prev;
        }
        let g_pre0: Vec<T> = g_act
            .iter()
            .zip(&cache.pre[0])
            .map(|(&g, &x)| g * dgelu(x))
            .collect();
        let mut g_angles = vec![T::zero(); two_cq];
        for i in 0..self.width {
            for k in 0..two_cq {
                grads.in_w[(i, k)] += g_pre0[i] * cache.angles[k];
                g_angles[k] += self.in_w[(i, k)] * g_pre0[i];
            }
        }
        let diag = scaler.angle_jacobian_diag(&cache.sig);
        let g_row: Vec<T> = g_angles
            .iter()
            .zip(&diag)
            .map(|(&g, &d)| g * d)
            .collect();
        Ok(unpack_complex(&g_row))
    }
}

#[derive(Debug, Clone)]
pub struct BottleneckRowCache<T> {
    pub sig: Vec<T>,
    pub angles: Vec<T>,
    pub pre: Vec<Vec<T>>,
    pub act: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct BottleneckGrads<T: Real> {
    pub in_w: Array2<T>,
    pub hidden: Vec<(Array2<T>, Array1<T>)>,
    pub out_w: Array2<T>,
    pub out_b: Array1<T>,
}

impl<T: Real> BottleneckGrads<T> {
    pub fn zeros_like(m: &BottleneckMixer<T>) -> Self {
        BottleneckGrads {
            in_w: Array2::zeros(m.in_w.dim()),
            hidden: m
                .hidden
                .iter()
                .map(|(w, b)| (Array2::zeros(w.dim()), Array1::zeros(b.len())))
                .collect(),
            out_w: Array2::zeros(m.out_w.dim()),
            out_b: Array1::zeros(m.out_b.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn initialized_scaler(n: usize, lo: f64, hi: f64) -> RobustScaler<f64> {
        let mut s = RobustScaler::new(n);
        s.running_min.fill(lo);
        s.running_max.fill(hi);
        s.initialized = true;
        s
    }

    #[test]
    fn first_update_sets_state_to_batch_percentiles() {
        let mut s = RobustScaler::<f64>::new(2);
        let batch = array![[2.0, 2.0], [2.0, 2.0], [2.0, 2.0]];
        s.update(batch.view()).unwrap();
        assert_eq!(s.running_min[0], 2.0);
        assert_eq!(s.running_max[1], 2.0);
        // Second constant batch at 4.0 with mu = 0.05 -> 2.1.
        let batch2 = array![[4.0, 4.0], [4.0, 4.0]];
        s.update(batch2.view()).unwrap();
        assert!((s.running_min[0] - 2.1).abs() < 1e-15);
        assert!((s.running_max[0] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn inference_mode_update_is_an_error_and_leaves_state_unchanged() {
        let mut s = RobustScaler::<f64>::new(1);
        s.update(array![[1.0], [3.0]].view()).unwrap();
        s.mode = ScalerMode::Inference;
        let before = s.clone();
        let err = s.update(array![[9.0]].view()).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        assert_eq!(s, before);
    }

    #[test]
    fn scale_to_angles_matches_sigmoid_endpoints() {
        // Epsilon 0 so the endpoint identities are exact; the default 1e-6
        // denominator offset only perturbs them at the 1e-6 level.
        let mut s = initialized_scaler(1, 1.0, 3.0);
        s.epsilon = 0.0;
        // r = m -> pi * sigmoid(-3)
        let a = s.scale_to_angles(&[1.0]).unwrap()[0];
        assert!((a - 0.14899).abs() < 1e-5);
        assert!((a - std::f64::consts::PI / (1.0 + 3.0f64.exp())).abs() < 1e-12);
        // r = M -> pi * sigmoid(3) = pi e^3 / (1 + e^3)
        let b = s.scale_to_angles(&[3.0]).unwrap()[0];
        assert!((b - 2.99260).abs() < 1e-5);
        // midpoint -> pi/2
        let c = s.scale_to_angles(&[2.0]).unwrap()[0];
        assert!((c - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn scale_to_angles_stays_strictly_inside_0_pi() {
        // Inputs up to four range-widths outside [m, M] stay strictly inside
        // (0, pi); far beyond that double-precision sigmoid saturates.
        let s = initialized_scaler(1, -1.0, 1.0);
        for v in [-9.0, -5.0, -1.0, 0.0, 1.0, 5.0, 9.0] {
            let a = s.scale_to_angles(&[v]).unwrap()[0];
            assert!(a > 0.0 && a < std::f64::consts::PI, "v={v} a={a}");
        }
        let uninit = RobustScaler::<f64>::new(1);
        assert!(matches!(
            uninit.scale_to_angles(&[0.0]).unwrap_err(),
            Error::State(_)
        ));
    }

    #[test]
    fn mixer_circuit_counts_match_formula() {
        // n_q = 5, d = 1: 4 pair ops, 12 trainable angles.
        let c = mixer_circuit_template::<f64>(5, 1).unwrap();
        assert_eq!(c.n_theta(), 12);
        let xy_count = c
            .ops()
            .iter()
            .filter(|op| op.kind == crate::qsim::GateKind::IsingXy)
            .count();
        assert_eq!(xy_count, 4);
        // n_q = 2, d = 1: one pair, 3 angles.
        let c = mixer_circuit_template::<f64>(2, 1).unwrap();
        assert_eq!(c.n_theta(), 3);
        // Formula over a grid.
        for n_q in 2..=8 {
            for d in 1..=3 {
                let c = mixer_circuit_template::<f64>(n_q, d).unwrap();
                assert_eq!(c.n_theta(), 3 * d * (n_q - 1));
            }
        }
    }

    #[test]
    fn zero_theta_circuit_reduces_to_rx_embedding() {
        // QFT cancels its inverse when the mesh is identity.
        let n_q = 3;
        let circuit = build_mixer_circuit::<f64>(n_q, 2, &[0.4, 1.1, 2.0]).unwrap();
        let theta = vec![0.0; circuit.n_theta()];
        let state = circuit.run(&theta, &[]).unwrap();
        let mut expected = crate::qsim::Statevector::<f64>::zero_state(n_q);
        for (q, &a) in [0.4, 1.1, 2.0].iter().enumerate() {
            crate::qsim::apply_gate_kind(
                &mut expected,
                crate::qsim::GateKind::RX,
                crate::qsim::Targets::One(q),
                a,
            )
            .unwrap();
        }
        for (x, y) in state.amplitudes().iter().zip(expected.amplitudes()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn vqc_trainable_count_matches_formula_over_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c_q in 1..=8usize {
            for n_q in 1..=8usize {
                for d in 1..=3usize {
                    let m = VqcMixer::<f64>::new(c_q, n_q, d, &mut rng).unwrap();
                    assert_eq!(m.trainable_count(), vqc_param_count(c_q, n_q, d));
                }
            }
        }
        // Headline numbers.
        assert_eq!(vqc_param_count(5, 5, 1), 127);
        assert_eq!(vqc_param_count(3, 3, 1), 51);
        assert_eq!(vqc_param_count(8, 8, 1), 301);
        assert_eq!(vqc_param_count(1, 1, 1), 7);
    }

    #[test]
    fn width_search_matches_vqc_budget_within_tolerance() {
        let (h, depth, count) = match_bottleneck_width(5, 5, 1);
        assert_eq!((h, depth, count), (6, 1, 130));
        assert!((count as i64 - 127).unsigned_abs() <= 3);
        // c_q = 1: target 7, nearest achievable.
        let (_, _, count) = match_bottleneck_width(1, 1, 1);
        assert!((count as i64 - 7).unsigned_abs() <= 1);
        // A matched mixer enumerates to the achieved count.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = BottleneckMixer::<f64>::matched(5, 5, 1, &mut rng).unwrap();
        assert_eq!(m.trainable_count(), 130);
    }

    #[test]
    fn vqc_forward_zero_angles_gives_decode_of_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = VqcMixer::<f64>::new(2, 2, 1, &mut rng).unwrap();
        m.theta.fill(0.0);
        m.e_w.fill(0.0);
        m.e_b.fill(0.0);
        let scaler = initialized_scaler(4, -1.0, 1.0);
        let out = m
            .forward(&scaler, &[Cplx::new(0.3, -0.2), Cplx::new(0.9, 0.1)])
            .unwrap();
        // All embedding angles are 0 -> state |00> -> z = (1, 1) -> y = D*1 + d_b.
        for c in 0..2 {
            let re = m.d_w[(c, 0)] + m.d_w[(c, 1)] + m.d_b[c];
            let im = m.d_w[(2 + c, 0)] + m.d_w[(2 + c, 1)] + m.d_b[2 + c];
            assert!((out[c].re - re).abs() < 1e-12);
            assert!((out[c].im - im).abs() < 1e-12);
        }
    }

    #[test]
    fn vqc_forward_identity_projections_at_midpoint_gives_zero() {
        // n_q = 2 C_q override: E = I, D = I, biases 0, theta = 0; inputs at
        // the scaler midpoint map to angles pi/2, so every <Z> = 0.
        let c_q = 1;
        let n_q = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = VqcMixer::<f64>::new(c_q, n_q, 1, &mut rng).unwrap();
        m.theta.fill(0.0);
        m.e_w.assign(&Array2::eye(2));
        m.e_b.fill(0.0);
        m.d_w.assign(&Array2::eye(2));
        m.d_b.fill(0.0);
        let mut scaler = initialized_scaler(2, 0.0, 2.0);
        scaler.epsilon = 0.0;
        let out = m.forward(&scaler, &[Cplx::new(1.0, 1.0)]).unwrap();
        assert!(out[0].norm() < 1e-12);
    }

    #[test]
    fn mode_shared_property_identical_inputs_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = VqcMixer::<f64>::new(3, 3, 2, &mut rng).unwrap();
        let scaler = initialized_scaler(6, -2.0, 2.0);
        let coeffs = vec![
            Cplx::new(0.1, 0.7),
            Cplx::new(-0.4, 0.2),
            Cplx::new(1.3, -0.9),
        ];
        let a = m.forward(&scaler, &coeffs).unwrap();
        let b = m.forward(&scaler, &coeffs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bottleneck_zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = BottleneckMixer::<f64>::new(2, 3, 2, &mut rng).unwrap();
        m.in_w.fill(0.0);
        for (w, b) in &mut m.hidden {
            w.fill(0.0);
            b.fill(0.0);
        }
        m.out_w.fill(0.0);
        m.out_b.fill(0.0);
        let scaler = initialized_scaler(4, -1.0, 1.0);
        let out = m
            .forward(&scaler, &[Cplx::new(0.5, 0.5), Cplx::new(-0.5, 0.1)])
            .unwrap();
        for c in out {
            assert_eq!(c, Cplx::new(0.0, 0.0));
        }
    }

    fn fd_check_vqc(c_q: usize, n_q: usize, depth: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = VqcMixer::<f64>::new(c_q, n_q, depth, &mut rng).unwrap();
        let scaler = initialized_scaler(2 * c_q, -1.0, 1.0);
        let coeffs: Vec<Cplx<f64>> = (0..c_q)
            .map(|_| Cplx::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)))
            .collect();
        // Scalar functional: weighted sum of output components.
        let w: Vec<Cplx<f64>> = (0..c_q)
            .map(|_| Cplx::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let loss = |mm: &VqcMixer<f64>| -> f64 {
            let out = mm.forward(&scaler, &coeffs).unwrap();
            out.iter()
                .zip(&w)
                .map(|(o, wi)| o.re * wi.re + o.im * wi.im)
                .sum()
        };
        let (out, cache) = m.forward_cached(&scaler, &coeffs).unwrap();
        let _ = out;
        let mut grads = VqcGrads::zeros_like(&m);
        m.backward(&scaler, &cache, &w, &mut grads).unwrap();

        let h = 1e-4;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        let mut m2 = m.clone();
        for i in 0..m.theta.len() {
            m2.theta[i] = m.theta[i] + h;
            let lp = loss(&m2);
            m2.theta[i] = m.theta[i] - h;
            let lm = loss(&m2);
            m2.theta[i] = m.theta[i];
            assert!(rel(grads.theta[i], (lp - lm) / (2.0 * h)) < 1e-5, "theta {i}");
        }
        for idx in 0..m.e_w.len() {
            let (j, k) = (idx / (2 * c_q), idx % (2 * c_q));
            m2.e_w[(j, k)] = m.e_w[(j, k)] + h;
            let lp = loss(&m2);
            m2.e_w[(j, k)] = m.e_w[(j, k)] - h;
            let lm = loss(&m2);
            m2.e_w[(j, k)] = m.e_w[(j, k)];
            assert!(rel(grads.e_w[(j, k)], (lp - lm) / (2.0 * h)) < 1e-5, "E {j},{k}");
        }
        for idx in 0..m.d_w.len() {
            let (j, k) = (idx / n_q, idx % n_q);
            m2.d_w[(j, k)] = m.d_w[(j, k)] + h;
            let lp = loss(&m2);
            m2.d_w[(j, k)] = m.d_w[(j, k)] - h;
            let lm = loss(&m2);
            m2.d_w[(j, k)] = m.d_w[(j, k)];
            assert!(rel(grads.d_w[(j, k)], (lp - lm) / (2.0 * h)) < 1e-5, "D {j},{k}");
        }
        // Input gradient.
        let g_in = {
            let mut grads = VqcGrads::zeros_like(&m);
            m.backward(&scaler, &cache, &w, &mut grads).unwrap()
        };
        for c in 0..c_q {
            let mut cp = coeffs.clone();
            cp[c].re += h;
            let lp = {
                let out = m.forward(&scaler, &cp).unwrap();
                out.iter()
                    .zip(&w)
                    .map(|(o, wi)| o.re * wi.re + o.im * wi.im)
                    .sum::<f64>()
            };
            cp[c].re = coeffs[c].re - h;
            let lm = {
                let out = m.forward(&scaler, &cp).unwrap();
                out.iter()
                    .zip(&w)
                    .map(|(o, wi)| o.re * wi.re + o.im * wi.im)
                    .sum::<f64>()
            };
            assert!(rel(g_in[c].re, (lp - lm) / (2.0 * h)) < 1e-5, "input re {c}");
        }
    }

    #[test]
    fn vqc_end_to_end_gradients_match_finite_differences() {
        fd_check_vqc(2, 2, 1, 10);
        fd_check_vqc(3, 3, 2, 11);
        fd_check_vqc(5, 5, 1, 12);
    }

    #[test]
    fn bottleneck_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let c_q = 2;
        let m = BottleneckMixer::<f64>::new(c_q, 5, 3, &mut rng).unwrap();
        let scaler = initialized_scaler(2 * c_q, -1.0, 1.0);
        let coeffs = vec![Cplx::new(0.3, -0.5), Cplx::new(-0.2, 0.8)];
        let w = vec![Cplx::new(1.0, -0.7), Cplx::new(0.4, 0.9)];
        let loss = |mm: &BottleneckMixer<f64>| -> f64 {
            let out = mm.forward(&scaler, &coeffs).unwrap();
            out.iter()
                .zip(&w)
                .map(|(o, wi)| o.re * wi.re + o.im * wi.im)
                .sum()
        };
        let (_, cache) = m.forward_cached(&scaler, &coeffs).unwrap();
        let mut grads = BottleneckGrads::zeros_like(&m);
        m.backward(&scaler, &cache, &w, &mut grads).unwrap();
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        let mut m2 = m.clone();
        for idx in 0..m.in_w.len() {
            let (i, k) = (idx / (2 * c_q), idx % (2 * c_q));
            m2.in_w[(i, k)] = m.in_w[(i, k)] + h;
            let lp = loss(&m2);
            m2.in_w[(i, k)] = m.in_w[(i, k)] - h;
            let lm = loss(&m2);
            m2.in_w[(i, k)] = m.in_w[(i, k)];
            assert!(rel(grads.in_w[(i, k)], (lp - lm) / (2.0 * h)) < 1e-5);
        }
        for l in 0..m.hidden.len() {
            for i in 0..m.width {
                m2.hidden[l].1[i] = m.hidden[l].1[i] + h;
                let lp = loss(&m2);
                m2.hidden[l].1[i] = m.hidden[l].1[i] - h;
                let lm = loss(&m2);
                m2.hidden[l].1[i] = m.hidden[l].1[i];
                assert!(rel(grads.hidden[l].1[i], (lp - lm) / (2.0 * h)) < 1e-5);
            }
        }
    }

    #[test]
    fn vqc_matches_brute_force_dense_simulation() {
        // Random 2-qubit instance vs an explicit matrix chain evaluated in
        // the test: scaler -> E -> RX embeddings -> QFT -> mesh -> IQFT -> Z.
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let m = VqcMixer::<f64>::new(1, 2, 1, &mut rng).unwrap();
        let scaler = initialized_scaler(2, -1.0, 1.0);
        let coeffs = vec![Cplx::new(0.25, -0.65)];
        let out = m.forward(&scaler, &coeffs).unwrap();

        // Reference: dense 4x4 linear algebra.
        let row = [coeffs[0].re, coeffs[0].im];
        let ang: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let norm = (v - scaler.running_min[j])
                    / (scaler.running_max[j] - scaler.running_min[j] + scaler.epsilon);
                std::f64::consts::PI / (1.0 + (-6.0 * (norm - 0.5)).exp())
            })
            .collect();
        let a: Vec<f64> = (0..2)
            .map(|j| m.e_b[j] + m.e_w[(j, 0)] * ang[0] + m.e_w[(j, 1)] * ang[1])
            .collect();
        type C64 = Cplx<f64>;
        let i = C64::new(0.0, 1.0);
        let kron = |a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]| -> Vec<Vec<C64>> {
            // qubit 1 (row factor a) is the high bit, qubit 0 (b) low.
            let mut m = vec![vec![C64::new(0.0, 0.0); 4]; 4];
            for r1 in 0..2 {
                for c1 in 0..2 {
                    for r0 in 0..2 {
                        for c0 in 0..2 {
                            m[(r1 << 1) | r0][(c1 << 1) | c0] = a[r1][c1] * b[r0][c0];
                        }
                    }
                }
            }
            m
        };
        let rx = |t: f64| -> [[C64; 2]; 2] {
            let c = C64::new((t / 2.0).cos(), 0.0);
            let s = -i * (t / 2.0).sin();
            [[c, s], [s, c]]
        };
        let id2 = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];
        let matmul = |a: &Vec<Vec<C64>>, b: &Vec<Vec<C64>>| -> Vec<Vec<C64>> {
            let mut out = vec![vec![C64::new(0.0, 0.0); 4]; 4];
            for r in 0..4 {
                for c in 0..4 {
                    for k in 0..4 {
                        out[r][c] += a[r][k] * b[k][c];
                    }
                }
            }
            out
        };
        // 2-qubit QFT matrix: (1/2) [[1,1,1,1],[1,i,-1,-i],[1,-1,1,-1],[1,-i,-1,i]]
        let om = |p: u32| C64::from_polar(1.0, std::f64::consts::PI / 2.0 * p as f64);
        let mut qft = vec![vec![C64::new(0.0, 0.0); 4]; 4];
        for j in 0..4u32 {
            for k in 0..4u32 {
                qft[k as usize][j as usize] = om((j * k) % 4) * 0.5;
            }
        }
        let iqft: Vec<Vec<C64>> = (0..4)
            .map(|r| (0..4).map(|c| qft[c][r].conj()).collect())
            .collect();
        let rz = |t: f64| -> [[C64; 2]; 2] {
            [
                [C64::from_polar(1.0, -t / 2.0), C64::new(0.0, 0.0)],
                [C64::new(0.0, 0.0), C64::from_polar(1.0, t / 2.0)],
            ]
        };
        let xy = |p: f64| -> Vec<Vec<C64>> {
            let c = C64::new((p / 2.0).cos(), 0.0);
            let s = i * (p / 2.0).sin();
            let z = C64::new(0.0, 0.0);
            let one = C64::new(1.0, 0.0);
            vec![
                vec![one, z, z, z],
                vec![z, c, s, z],
                vec![z, s, c, z],
                vec![z, z, z, one],
            ]
        };
        let emb = matmul(&kron(&rx(a[1]), &id2), &kron(&id2, &rx(a[0])));
        let mesh = matmul(
            &kron(&rz(m.theta[2]), &id2),
            &matmul(&xy(m.theta[1]), &kron(&id2, &rz(m.theta[0]))),
        );
        let total = matmul(&iqft, &matmul(&mesh, &matmul(&qft, &emb)));
        let psi: Vec<C64> = (0..4).map(|r| total[r][0]).collect();
        let p: Vec<f64> = psi.iter().map(|x| x.norm_sqr()).collect();
        let z0 = p[0] - p[1] + p[2] - p[3];
        let z1 = p[0] + p[1] - p[2] - p[3];
        let y0 = m.d_b[0] + m.d_w[(0, 0)] * z0 + m.d_w[(0, 1)] * z1;
        let y1 = m.d_b[1] + m.d_w[(1, 0)] * z0 + m.d_w[(1, 1)] * z1;
        assert!((out[0].re - y0).abs() < 1e-10, "{} vs {y0}", out[0].re);
        assert!((out[0].im - y1).abs() < 1e-10, "{} vs {y1}", out[0].im);
    }
}
