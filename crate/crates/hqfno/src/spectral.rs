//! Partitioned hybrid 3D spectral convolution.
//!
//! Pipeline per Fourier layer: real 3D FFT (unnormalized forward, 1/(XYZ)
//! inverse), four-corner low-frequency truncation in (kx, ky) with one-sided
//! kz, dense mode-wise complex mixing for the last `C - C_q` output channels,
//! mode-shared mixer for the first `C_q`, inverse real FFT.
//!
//! Complex gradients follow the `dL/dRe + i dL/dIm` convention, so for
//! `y = x * w` the pullbacks are `g_x = g_y * conj(w)` and `g_w = g_y * conj(x)`.

use crate::error::{Error, Result};
use crate::mixer::{
    BottleneckGrads, BottleneckMixer, BottleneckRowCache, RobustScaler, VqcGrads, VqcMixer,
    VqcRowCache,
};
use crate::num::{r, Cplx, Real};
use ndarray::{Array2, Array5, Array6, ArrayView5, ArrayViewMut5, Axis};
use rand::Rng;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

fn czero<T: Real>() -> Cplx<T> {
    Cplx::new(T::zero(), T::zero())
}

fn fft_along_axis<T: Real>(data: &mut ArrayViewMut5<Cplx<T>>, axis: usize, dir: FftDirection) {
    let len = data.shape()[axis];
    if len == 1 {
        return;
    }
    let mut planner = FftPlanner::<T>::new();
    let fft = planner.plan_fft(len, dir);
    let mut scratch = vec![czero::<T>(); fft.get_inplace_scratch_len()];
    let mut lane_buf = vec![czero::<T>(); len];
    for mut lane in data.lanes_mut(Axis(axis)) {
        for (i, v) in lane.iter().enumerate() {
            lane_buf[i] = *v;
        }
        fft.process_with_scratch(&mut lane_buf, &mut scratch);
        for (i, v) in lane.iter_mut().enumerate() {
            *v = lane_buf[i];
        }
    }
}

/// One-sided length along the rFFT axis.
pub fn rfft_len(z: usize) -> usize {
    z / 2 + 1
}

/// Forward real 3D FFT of a (B, C, X, Y, Z) field; unnormalized, one-sided
/// along the last axis: output (B, C, X, Y, Z/2+1).
pub fn rfft3<T: Real>(field: ArrayView5<T>) -> Array5<Cplx<T>> {
    let (b, c, x, y, z) = field.dim();
    let zr = rfft_len(z);
    let mut buf = Array5::from_shape_fn((b, c, x, y, z), |idx| Cplx::new(field[idx], T::zero()));
    fft_along_axis(&mut buf.view_mut(), 4, FftDirection::Forward);
    let mut spec = buf.slice(ndarray::s![.., .., .., .., 0..zr]).to_owned();
    fft_along_axis(&mut spec.view_mut(), 3, FftDirection::Forward);
    fft_along_axis(&mut spec.view_mut(), 2, FftDirection::Forward);
    spec
}

/// Inverse of [`rfft3`] onto a real field with `z` cells along the last axis.
/// Conjugate symmetry is assumed along the one-sided axis; any imaginary
/// residue on the self-conjugate planes is discarded, matching the usual
/// irfftn semantics.
pub fn irfft3<T: Real>(spec: ArrayView5<Cplx<T>>, z: usize) -> Result<Array5<T>> {
    let (b, c, x, y, zr) = spec.dim();
    if zr != rfft_len(z) {
        return Err(Error::shape(format!(
            "one-sided axis has {zr} bins, expected {} for z = {z}",
            rfft_len(z)
        )));
    }
    let mut half = spec.to_owned();
    fft_along_axis(&mut half.view_mut(), 2, FftDirection::Inverse);
    fft_along_axis(&mut half.view_mut(), 3, FftDirection::Inverse);
    // Hermitian extension along z, then inverse transform.
    let mut full = Array5::from_elem((b, c, x, y, z), czero::<T>());
    for bi in 0..b {
        for ci in 0..c {
            for xi in 0..x {
                for yi in 0..y {
                    for k in 0..zr {
                        full[(bi, ci, xi, yi, k)] = half[(bi, ci, xi, yi, k)];
                    }
                    for k in zr..z {
                        full[(bi, ci, xi, yi, k)] = half[(bi, ci, xi, yi, z - k)].conj();
                    }
                }
            }
        }
    }
    fft_along_axis(&mut full.view_mut(), 4, FftDirection::Inverse);
    let norm = T::one() / r::<T>((x * y * z) as f64);
    Ok(full.mapv(|v| v.re * norm))
}

/// Adjoint of [`rfft3`] as a linear map from the one-sided spectrum back to
/// the real field: mirror bins are zero-filled (not conjugated) and the
/// unnormalized inverse transform's real part is taken.
pub fn rfft3_adjoint<T: Real>(g_spec: ArrayView5<Cplx<T>>, z: usize) -> Result<Array5<T>> {
    let (b, c, x, y, zr) = g_spec.dim();
    if zr != rfft_len(z) {
        return Err(Error::shape(format!(
            "one-sided axis has {zr} bins, expected {} for z = {z}",
            rfft_len(z)
        )));
    }
    let mut full = Array5::from_elem((b, c, x, y, z), czero::<T>());
    full.slice_mut(ndarray::s![.., .., .., .., 0..zr])
        .assign(&g_spec);
    fft_along_axis(&mut full.view_mut(), 2, FftDirection::Inverse);
    fft_along_axis(&mut full.view_mut(), 3, FftDirection::Inverse);
    fft_along_axis(&mut full.view_mut(), 4, FftDirection::Inverse);
    Ok(full.mapv(|v| v.re))
}

/// Adjoint of [`irfft3`]: forward rFFT scaled by 1/(XYZ), with doubled
/// contribution for bins that represent a conjugate pair.
pub fn irfft3_adjoint<T: Real>(g_field: ArrayView5<T>) -> Array5<Cplx<T>> {
    let (_, _, x, y, z) = g_field.dim();
    let mut g_spec = rfft3(g_field);
    let zr = g_spec.dim().4;
    let norm = T::one() / r::<T>((x * y * z) as f64);
    let two = r::<T>(2.0);
    for k in 0..zr {
        let self_conjugate = k == 0 || (z % 2 == 0 && k == zr - 1);
        let factor = if self_conjugate { norm } else { two * norm };
        g_spec
            .slice_mut(ndarray::s![.., .., .., .., k..k + 1])
            .mapv_inplace(|v| v * factor);
    }
    g_spec
}

/// Retained-mode budget. Stored weights always carry the set budget; the
/// effective counts are clamped per forward grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeBudget {
    pub set: [usize; 3],
}

impl ModeBudget {
    pub fn new(set: [usize; 3]) -> Self {
        ModeBudget { set }
    }

    /// Effective modes for a padded grid: `min(set_x, X/2)`, `min(set_y, Y/2)`,
    /// `min(set_z, Z/2 + 1)`.
    pub fn effective(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let [x, y, z] = dims;
        let eff = [
            self.set[0].min(x / 2),
            self.set[1].min(y / 2),
            self.set[2].min(rfft_len(z)),
        ];
        if eff.contains(&0) {
            return Err(Error::domain(format!(
                "degenerate grid {dims:?} for mode budget {:?}",
                self.set
            )));
        }
        Ok(eff)
    }
}

/// Extract the four (kx, ky) corner blocks, shape (B, C, mx, my, mz) each.
/// Corner order: (lo, lo), (lo, hi), (hi, lo), (hi, hi).
pub fn gather_corners<T: Real>(
    spec: ArrayView5<Cplx<T>>,
    eff: [usize; 3],
) -> [Array5<Cplx<T>>; 4] {
    let (_, _, x, y, _) = spec.dim();
    let [mx, my, mz] = eff;
    let xs = [(0, mx), (x - mx, x)];
    let ys = [(0, my), (y - my, y)];
    let block = |xa: (usize, usize), ya: (usize, usize)| {
        spec.slice(ndarray::s![.., .., xa.0..xa.1, ya.0..ya.1, 0..mz])
            .to_owned()
    };
    [
        block(xs[0], ys[0]),
        block(xs[0], ys[1]),
        block(xs[1], ys[0]),
        block(xs[1], ys[1]),
    ]
}

/// Exact right inverse of [`gather_corners`] onto a zero spectrum of the
/// given (B, C, X, Y, Zr) shape.
pub fn scatter_corners<T: Real>(
    corners: &[Array5<Cplx<T>>; 4],
    dims: (usize, usize, usize, usize, usize),
) -> Array5<Cplx<T>> {
    let (b, c, x, y, zr) = dims;
    let (_, _, mx, my, mz) = corners[0].dim();
    let mut spec = Array5::from_elem((b, c, x, y, zr), czero::<T>());
    let xs = [(0, mx), (x - mx, x)];
    let ys = [(0, my), (y - my, y)];
    for (i, corner) in corners.iter().enumerate() {
        let xa = xs[i / 2];
        let ya = ys[i % 2];
        spec.slice_mut(ndarray::s![.., .., xa.0..xa.1, ya.0..ya.1, 0..mz])
            .assign(corner);
    }
    spec
}

/// Mode-shared mixer branch attached to a spectral layer.
#[derive(Debug, Clone)]
pub enum MixerBranch<T: Real> {
    Vqc(VqcMixer<T>),
    Bottleneck(BottleneckMixer<T>),
}

impl<T: Real> MixerBranch<T> {
    pub fn c_q(&self) -> usize {
        match self {
            MixerBranch::Vqc(m) => m.c_q,
            MixerBranch::Bottleneck(m) => m.c_q,
        }
    }

    pub fn trainable_count(&self) -> usize {
        match self {
            MixerBranch::Vqc(m) => m.trainable_count(),
            MixerBranch::Bottleneck(m) => m.trainable_count(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MixerRowCache<T: Real> {
    Vqc(VqcRowCache<T>),
    Bottleneck(BottleneckRowCache<T>),
}

#[derive(Debug, Clone)]
pub enum MixerGrads<T: Real> {
    Vqc(VqcGrads<T>),
    Bottleneck(BottleneckGrads<T>),
}

impl<T: Real> MixerGrads<T> {
    pub fn zeros_like(branch: &MixerBranch<T>) -> Self {
        match branch {
            MixerBranch::Vqc(m) => MixerGrads::Vqc(VqcGrads::zeros_like(m)),
            MixerBranch::Bottleneck(m) => MixerGrads::Bottleneck(BottleneckGrads::zeros_like(m)),
        }
    }
}

/// One partitioned spectral convolution: four dense complex corner weights
/// of shape (C, C - C_q, set modes, 2) plus an optional mode-shared mixer
/// with its robust input scaler.
#[derive(Debug, Clone)]
pub struct SpectralConv<T: Real> {
    pub budget: ModeBudget,
    pub channels: usize,
    pub c_q: usize,
    /// Per corner: (c_in, c_out, mx_set, my_set, mz_set, re/im).
    pub corners: [Array6<T>; 4],
    pub scaler: Option<RobustScaler<T>>,
    pub mixer: Option<MixerBranch<T>>,
}

impl<T: Real> SpectralConv<T> {
    pub fn new(
        channels: usize,
        c_q: usize,
        budget: ModeBudget,
        mixer: Option<MixerBranch<T>>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if c_q > channels {
            return Err(Error::config(format!(
                "c_q = {c_q} exceeds channel width {channels}"
            )));
        }
        match (&mixer, c_q) {
            (None, 0) => {}
            (Some(m), cq) if cq > 0 => {
                if m.c_q() != cq {
                    return Err(Error::config("mixer c_q does not match layer c_q"));
                }
            }
            _ => {
                return Err(Error::config(
                    "mixer must be present exactly when c_q > 0",
                ))
            }
        }
        let c_out = channels - c_q;
        let [mx, my, mz] = budget.set;
        let scale = if channels * c_out > 0 {
            1.0 / (channels * c_out) as f64
        } else {
            0.0
        };
        let corners = std::array::from_fn(|_| {
            Array6::from_shape_fn((channels, c_out, mx, my, mz, 2), |_| {
                r::<T>(rng.gen_range(0.0..1.0) * scale)
            })
        });
        let scaler = mixer.as_ref().map(|m| RobustScaler::new(2 * m.c_q()));
        Ok(SpectralConv {
            budget,
            channels,
            c_q,
            corners,
            scaler,
            mixer,
        })
    }

    /// Complex weight at a retained mode of corner `i`.
    #[inline]
    fn weight(&self, i: usize, ci: usize, co: usize, k: (usize, usize, usize)) -> Cplx<T> {
        let w = &self.corners[i];
        Cplx::new(
            w[(ci, co, k.0, k.1, k.2, 0)],
            w[(ci, co, k.0, k.1, k.2, 1)],
        )
    }

    /// Spectral path forward. In training mode the scaler is EMA-updated once
    /// from all mode instances of the batch before any row is mixed.
    /// Returns the output field, the cache for backward, and the number of
    /// mixer row invocations.
    pub fn forward(
        &mut self,
        field: ArrayView5<T>,
        training: bool,
    ) -> Result<(Array5<T>, SpectralCache<T>, usize)> {
        let (b, c, x, y, z) = field.dim();
        if c != self.channels {
            return Err(Error::shape(format!(
                "spectral conv expects {} channels, got {c}",
                self.channels
            )));
        }
        let eff = self.budget.effective([x, y, z])?;
        let spec = rfft3(field);
        let corners_in = gather_corners(spec.view(), eff);

        // Scaler update from every retained-mode instance of the batch, once.
        if training {
            if let (Some(scaler), Some(_)) = (&mut self.scaler, &self.mixer) {
                let rows = collect_mixer_rows(&corners_in, self.c_q);
                scaler.update(rows.view())?;
            }
        }

        let [mx, my, mz] = eff;
        let n_modes = mx * my * mz;
        let c_out = self.channels - self.c_q;
        let mut corners_out: [Array5<Cplx<T>>; 4] =
            std::array::from_fn(|_| Array5::from_elem((b, self.channels, mx, my, mz), czero::<T>()));
        let mut row_caches: Vec<MixerRowCache<T>> = Vec::new();
        let mut invocations = 0usize;

        for (i, block) in corners_in.iter().enumerate() {
            // Classical branch: all C input channels -> output channels C_q..C.
            for bi in 0..b {
                for kx in 0..mx {
                    for ky in 0..my {
                        for kz in 0..mz {
                            for co in 0..c_out {
                                let mut acc = czero::<T>();
                                for ci in 0..self.channels {
                                    acc += block[(bi, ci, kx, ky, kz)]
                                            * self.weight(i, ci, co, (kx, ky, kz));
                                }
                                corners_out[i][(bi, self.c_q + co, kx, ky, kz)] = acc;
                            }
                        }
                    }
                }
            }
            // Quantum / bottleneck branch: first C_q input channels ->
            // output channels 0..C_q, one mixer row per retained mode.
            if let (Some(mixer), Some(scaler)) = (&self.mixer, &self.scaler) {
                let mut coeffs = vec![czero::<T>(); self.c_q];
                for bi in 0..b {
                    for kx in 0..mx {
                        for ky in 0..my {
                            for kz in 0..mz {
                                for ch in 0..self.c_q {
                                    coeffs[ch] = block[(bi, ch, kx, ky, kz)];
                                }
                                let (out, cache) = match mixer {
                                    MixerBranch::Vqc(m) => {
                                        let (o, cch) = m.forward_cached(scaler, &coeffs)?;
                                        (o, MixerRowCache::Vqc(cch))
                                    }
                                    MixerBranch::Bottleneck(m) => {
                                        let (o, cch) = m.forward_cached(scaler, &coeffs)?;
                                        (o, MixerRowCache::Bottleneck(cch))
                                    }
                                };
                                invocations += 1;
                                for ch in 0..self.c_q {
                                    corners_out[i][(bi, ch, kx, ky, kz)] = out[ch];
                                }
                                row_caches.push(cache);
                            }
                        }
                    }
                }
            }
            let _ = n_modes;
        }

        let zr = rfft_len(z);
        let out_spec = scatter_corners(&corners_out, (b, self.channels, x, y, zr));
        let out = irfft3(out_spec.view(), z)?;
        let cache = SpectralCache {
            corners_in,
            eff,
            dims: (b, c, x, y, z),
            row_caches,
        };
        Ok((out, cache, invocations))
    }

    /// Reverse-mode pass: accumulates weight/mixer gradients into `grads` and
    /// returns the gradient with respect to the layer input field.
    pub fn backward(
        &self,
        cache: &SpectralCache<T>,
        g_out: ArrayView5<T>,
        grads: &mut SpectralGrads<T>,
    ) -> Result<Array5<T>> {
        let (b, _, x, y, z) = cache.dims;
        let [mx, my, mz] = cache.eff;
        let c_out = self.channels - self.c_q;
        let g_spec_out = irfft3_adjoint(g_out);
        let g_corners_out = gather_corners(g_spec_out.view(), cache.eff);

        let mut g_corners_in: [Array5<Cplx<T>>; 4] =
            std::array::from_fn(|_| Array5::from_elem((b, self.channels, mx, my, mz), czero::<T>()));
        let mut row_iter = cache.row_caches.iter();

        for (i, block) in cache.corners_in.iter().enumerate() {
            for bi in 0..b {
                for kx in 0..mx {
                    for ky in 0..my {
                        for kz in 0..mz {
                            for co in 0..c_out {
                                let g = g_corners_out[i][(bi, self.c_q + co, kx, ky, kz)];
                                for ci in 0..self.channels {
                                    let w = self.weight(i, ci, co, (kx, ky, kz));
                                    g_corners_in[i][(bi, ci, kx, ky, kz)] += g * w.conj();
                                    let gw = g * block[(bi, ci, kx, ky, kz)].conj();
                                    grads.corners[i][(ci, co, kx, ky, kz, 0)] += gw.re;
                                    grads.corners[i][(ci, co, kx, ky, kz, 1)] += gw.im;
                                }
                            }
                        }
                    }
                }
            }
            if let (Some(mixer), Some(scaler)) = (&self.mixer, &self.scaler) {
                let g_mixer = grads
                    .mixer
                    .as_mut()
                    .ok_or_else(|| Error::config("missing mixer gradient store"))?;
                let mut g_row_out = vec![czero::<T>(); self.c_q];
                for bi in 0..b {
                    for kx in 0..mx {
                        for ky in 0..my {
                            for kz in 0..mz {
                                for ch in 0..self.c_q {
                                    g_row_out[ch] = g_corners_out[i][(bi, ch, kx, ky, kz)];
                                }
                                let row_cache = row_iter
                                    .next()
                                    .ok_or_else(|| Error::Internal("row cache underrun".into()))?;
                                let g_in = match (mixer, row_cache, &mut *g_mixer) {
                                    (
                                        MixerBranch::Vqc(m),
                                        MixerRowCache::Vqc(cch),
                                        MixerGrads::Vqc(gg),
                                    ) => m.backward(scaler, cch, &g_row_out, gg)?,
                                    (
                                        MixerBranch::Bottleneck(m),
                                        MixerRowCache::Bottleneck(cch),
                                        MixerGrads::Bottleneck(gg),
                                    ) => m.backward(scaler, cch, &g_row_out, gg)?,
                                    _ => {
                                        return Err(Error::Internal(
                                            "mixer kind mismatch in backward".into(),
                                        ))
                                    }
                                };
                                for ch in 0..self.c_q {
                                    g_corners_in[i][(bi, ch, kx, ky, kz)] += g_in[ch];
                                }
                            }
                        }
                    }
                }
            }
        }

        let zr = rfft_len(z);
        let g_spec_in = scatter_corners(&g_corners_in, (b, self.channels, x, y, zr));
        rfft3_adjoint(g_spec_in.view(), z)
    }

    /// Trainable scalar count: dense corner weights plus the mixer.
    pub fn trainable_count(&self) -> usize {
        let dense: usize = self.corners.iter().map(|c| c.len()).sum();
        dense + self.mixer.as_ref().map_or(0, |m| m.trainable_count())
    }
}

/// Gather all mixer input rows (4 corners x B x modes, 2 C_q features) in the
/// documented corner-major, then (b, kx, ky, kz) row-major order.
fn collect_mixer_rows<T: Real>(corners: &[Array5<Cplx<T>>; 4], c_q: usize) -> Array2<T> {
    let (b, _, mx, my, mz) = corners[0].dim();
    let n_rows = 4 * b * mx * my * mz;
    let mut rows = Array2::zeros((n_rows, 2 * c_q));
    let mut row = 0usize;
    for block in corners {
        for bi in 0..b {
            for kx in 0..mx {
                for ky in 0..my {
                    for kz in 0..mz {
                        for ch in 0..c_q {
                            let v = block[(bi, ch, kx, ky, kz)];
                            rows[(row, ch)] = v.re;
                            rows[(row, c_q + ch)] = v.im;
                        }
                        row += 1;
                    }
                }
            }
        }
    }
    rows
}

#[derive(Debug, Clone)]
pub struct SpectralCache<T: Real> {
    pub corners_in: [Array5<Cplx<T>>; 4],
    pub eff: [usize; 3],
    pub dims: (usize, usize, usize, usize, usize),
    pub row_caches: Vec<MixerRowCache<T>>,
}

#[derive(Debug, Clone)]
pub struct SpectralGrads<T: Real> {
    pub corners: [Array6<T>; 4],
    pub mixer: Option<MixerGrads<T>>,
}

impl<T: Real> SpectralGrads<T> {
    pub fn zeros_like(conv: &SpectralConv<T>) -> Self {
        SpectralGrads {
            corners: std::array::from_fn(|i| Array6::zeros(conv.corners[i].dim())),
            mixer: conv.mixer.as_ref().map(MixerGrads::zeros_like),
        }
    }
}
