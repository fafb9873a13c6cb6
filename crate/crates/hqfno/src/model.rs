//! Full operator network: pointwise lifting, L hybrid Fourier layers
//! (pointwise skip + spectral path, GELU between layers), spatial padding,
//! and a weight-normalized SiLU pointwise decoder emitting the temperature
//! and metal-fraction fields. Includes the exact parameter accountant.

use crate::error::{Error, Result};
use crate::mixer::{
    match_bottleneck_width, vqc_param_count, BottleneckMixer, RobustScaler, ScalerMode, VqcMixer,
};
use crate::num::{dgelu, dsilu, gelu, r, silu, Real};
use crate::spectral::{MixerBranch, ModeBudget, SpectralCache, SpectralConv, SpectralGrads};
use ndarray::{Array1, Array2, Array5, ArrayD, ArrayView5, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    None,
    Vqc,
    Bottleneck,
}

/// Input feature switches, in channel order (x, y, z, P, V_scan, H*).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFeatures {
    pub x: bool,
    pub y: bool,
    pub z: bool,
    pub power: bool,
    pub v_scan: bool,
    pub h_star: bool,
}

impl Default for InputFeatures {
    fn default() -> Self {
        InputFeatures {
            x: true,
            y: true,
            z: true,
            power: true,
            v_scan: true,
            h_star: true,
        }
    }
}

impl InputFeatures {
    pub fn count(&self) -> usize {
        [self.x, self.y, self.z, self.power, self.v_scan, self.h_star]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

fn default_layers() -> usize {
    3
}
fn default_channels() -> usize {
    32
}
fn default_modes() -> [usize; 3] {
    [25, 20, 15]
}
fn default_depth() -> usize {
    1
}
fn default_padding() -> usize {
    9
}
fn default_decoder_width() -> usize {
    32
}
fn default_decoder_layers() -> usize {
    3
}
fn default_mixer_kind() -> MixerKind {
    MixerKind::None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_modes")]
    pub set_modes: [usize; 3],
    #[serde(default)]
    pub c_q: usize,
    /// Circuit width; defaults to `c_q`.
    #[serde(default)]
    pub n_q: Option<usize>,
    #[serde(default = "default_depth")]
    pub circuit_depth: usize,
    #[serde(default = "default_padding")]
    pub padding: usize,
    #[serde(default = "default_mixer_kind")]
    pub mixer_kind: MixerKind,
    #[serde(default)]
    pub features: InputFeatures,
    #[serde(default = "default_decoder_width")]
    pub decoder_width: usize,
    #[serde(default = "default_decoder_layers")]
    pub decoder_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: default_layers(),
            channels: default_channels(),
            set_modes: default_modes(),
            c_q: 0,
            n_q: None,
            circuit_depth: default_depth(),
            padding: default_padding(),
            mixer_kind: default_mixer_kind(),
            features: InputFeatures::default(),
            decoder_width: default_decoder_width(),
            decoder_layers: default_decoder_layers(),
        }
    }
}

pub const OUTPUT_CHANNELS: usize = 2;

impl ModelConfig {
    pub fn effective_n_q(&self) -> usize {
        self.n_q.unwrap_or(self.c_q)
    }

    pub fn in_channels(&self) -> usize {
        self.features.count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 {
            return Err(Error::config("layers and channels must be positive"));
        }
        if self.c_q > self.channels {
            return Err(Error::config(format!(
                "c_q = {} exceeds channel width {}",
                self.c_q, self.channels
            )));
        }
        let mixer_present = self.mixer_kind != MixerKind::None;
        if mixer_present != (self.c_q > 0) {
            return Err(Error::config(
                "mixer_kind must be none exactly when c_q = 0",
            ));
        }
        if mixer_present && self.effective_n_q() == 0 {
            return Err(Error::config("n_q must be positive when a mixer is present"));
        }
        if self.set_modes.contains(&0) {
            return Err(Error::config("set modes must be positive"));
        }
        if self.in_channels() == 0 {
            return Err(Error::config("at least one input feature required"));
        }
        if self.decoder_layers < 2 {
            return Err(Error::config("decoder needs at least two layers"));
        }
        Ok(())
    }
}

/// Pointwise (1x1x1) linear map over channels.
#[derive(Debug, Clone)]
pub struct PointwiseLinear<T: Real> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> PointwiseLinear<T> {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (c_in as f64).sqrt();
        PointwiseLinear {
            w: Array2::from_shape_fn((c_out, c_in), |_| r(rng.gen_range(-limit..limit))),
            b: Array1::from_shape_fn(c_out, |_| r(rng.gen_range(-limit..limit))),
        }
    }

    pub fn forward(&self, input: ArrayView5<T>) -> Array5<T> {
        let (bs, c_in, x, y, z) = input.dim();
        let c_out = self.w.nrows();
        debug_assert_eq!(c_in, self.w.ncols());
        let mut out = Array5::zeros((bs, c_out, x, y, z));
        for b in 0..bs {
            for xi in 0..x {
                for yi in 0..y {
                    for zi in 0..z {
                        for o in 0..c_out {
                            let mut acc = self.b[o];
                            for i in 0..c_in {
                                acc += self.w[(o, i)] * input[(b, i, xi, yi, zi)];
                            }
                            out[(b, o, xi, yi, zi)] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns gradient w.r.t. the input; accumulates (g_w, g_b).
    pub fn backward(
        &self,
        input: ArrayView5<T>,
        g_out: ArrayView5<T>,
        g_w: &mut Array2<T>,
        g_b: &mut Array1<T>,
    ) -> Array5<T> {
        let (bs, c_in, x, y, z) = input.dim();
        let c_out = self.w.nrows();
        let mut g_in = Array5::zeros((bs, c_in, x, y, z));
        for b in 0..bs {
            for xi in 0..x {
                for yi in 0..y {
                    for zi in 0..z {
                        for o in 0..c_out {
                            let g = g_out[(b, o, xi, yi, zi)];
                            g_b[o] += g;
                            for i in 0..c_in {
                                g_w[(o, i)] += g * input[(b, i, xi, yi, zi)];
                                g_in[(b, i, xi, yi, zi)] += self.w[(o, i)] * g;
                            }
                        }
                    }
                }
            }
        }
        g_in
    }
}

/// Weight-normalized pointwise linear: w = scale * v / |v|_row.
#[derive(Debug, Clone)]
pub struct WeightNormLinear<T: Real> {
    pub v: Array2<T>,
    pub scale: Array1<T>,
    pub b: Array1<T>,
}

impl<T: Real> WeightNormLinear<T> {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let limit = 1.0 / (c_in as f64).sqrt();
        let v = Array2::from_shape_fn((c_out, c_in), |_| r::<T>(rng.gen_range(-limit..limit)));
        // Initialize scale to the row norm so the initial effective weight
        // equals v.
        let scale = Array1::from_shape_fn(c_out, |o| {
            v.row(o)
                .iter()
                .map(|&x| x * x)
                .fold(T::zero(), |a, b| a + b)
                .sqrt()
        });
        WeightNormLinear {
            v,
            scale,
            b: Array1::from_shape_fn(c_out, |_| r(rng.gen_range(-limit..limit))),
        }
    }

    /// Row-norm floor keeping the all-zero direction well-defined (w = 0).
    fn norm_floor() -> T {
        r(1e-30)
    }

    fn effective_weight(&self) -> Array2<T> {
        let mut w = self.v.clone();
        for (o, mut row) in w.rows_mut().into_iter().enumerate() {
            let n = row
                .iter()
                .map(|&x| x * x)
                .fold(T::zero(), |a, b| a + b)
                .sqrt()
                .max(Self::norm_floor());
            let f = self.scale[o] / n;
            row.mapv_inplace(|x| x * f);
        }
        w
    }

    pub fn forward(&self, input: ArrayView5<T>) -> Array5<T> {
        let w = self.effective_weight();
        let lin = PointwiseLinear {
            w,
            b: self.b.clone(),
        };
        lin.forward(input)
    }

    pub fn backward(
        &self,
        input: ArrayView5<T>,
        g_out: ArrayView5<T>,
        g_v: &mut Array2<T>,
        g_scale: &mut Array1<T>,
        g_b: &mut Array1<T>,
    ) -> Array5<T> {
        let w = self.effective_weight();
        let lin = PointwiseLinear {
            w,
            b: self.b.clone(),
        };
        let mut g_w = Array2::zeros(self.v.dim());
        let g_in = lin.backward(input, g_out, &mut g_w, g_b);
        // Pull g_w back through w = scale * v / |v|.
        for o in 0..self.v.nrows() {
            let vrow = self.v.row(o);
            let n = vrow
                .iter()
                .map(|&x| x * x)
                .fold(T::zero(), |a, b| a + b)
                .sqrt()
                .max(Self::norm_floor());
            let dot = g_w
                .row(o)
                .iter()
                .zip(vrow.iter())
                .map(|(&g, &v)| g * v)
                .fold(T::zero(), |a, b| a + b);
            g_scale[o] += dot / n;
            let s = self.scale[o];
            for i in 0..self.v.ncols() {
                g_v[(o, i)] += s * (g_w[(o, i)] / n - dot * vrow[i] / (n * n * n));
            }
        }
        g_in
    }
}

/// Pointwise decoder: `decoder_layers` weight-normalized linears with SiLU
/// between them, channels C -> width -> ... -> 2 (T, alpha).
#[derive(Debug, Clone)]
pub struct Decoder<T: Real> {
    pub linears: Vec<WeightNormLinear<T>>,
}

impl<T: Real> Decoder<T> {
    pub fn new(c_in: usize, width: usize, n_layers: usize, rng: &mut impl Rng) -> Self {
        let mut linears = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let ci = if k == 0 { c_in } else { width };
            let co = if k == n_layers - 1 { OUTPUT_CHANNELS } else { width };
            linears.push(WeightNormLinear::new(ci, co, rng));
        }
        Decoder { linears }
    }
}

/// Append `pad` zero cells at the end of each spatial axis.
pub fn pad_spatial<T: Real>(field: ArrayView5<T>, pad: usize) -> Array5<T> {
    if pad == 0 {
        return field.to_owned();
    }
    let (b, c, x, y, z) = field.dim();
    let mut out = Array5::zeros((b, c, x + pad, y + pad, z + pad));
    out.slice_mut(ndarray::s![.., .., 0..x, 0..y, 0..z])
        .assign(&field);
    out
}

pub fn unpad_spatial<T: Real>(field: ArrayView5<T>, pad: usize) -> Array5<T> {
    if pad == 0 {
        return field.to_owned();
    }
    let (_, _, x, y, z) = field.dim();
    field
        .slice(ndarray::s![.., .., 0..x - pad, 0..y - pad, 0..z - pad])
        .to_owned()
}

#[derive(Debug, Clone)]
pub struct FourierLayer<T: Real> {
    pub pointwise: PointwiseLinear<T>,
    pub spectral: SpectralConv<T>,
}

/// Per-forward bookkeeping (effective modes, mixer row invocations).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardStats {
    pub mixer_invocations: usize,
    pub effective_modes: [usize; 3],
}

pub struct LayerTrace<T: Real> {
    input: Array5<T>,
    pre: Array5<T>,
    spec_cache: SpectralCache<T>,
}

pub struct ForwardTrace<T: Real> {
    raw_input: Array5<T>,
    lifted_padded: Array5<T>,
    layers: Vec<LayerTrace<T>>,
    decoder_inputs: Vec<Array5<T>>,
    decoder_pre: Vec<Array5<T>>,
    pub stats: ForwardStats,
}

#[derive(Debug, Clone)]
pub struct HybridFno<T: Real> {
    pub config: ModelConfig,
    pub lifting: PointwiseLinear<T>,
    pub layers: Vec<FourierLayer<T>>,
    pub decoder: Decoder<T>,
}

impl<T: Real> HybridFno<T> {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let lifting = PointwiseLinear::new(config.in_channels(), c, rng);
        let budget = ModeBudget::new(config.set_modes);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let mixer = match config.mixer_kind {
                MixerKind::None => None,
                MixerKind::Vqc => Some(MixerBranch::Vqc(VqcMixer::new(
                    config.c_q,
                    config.effective_n_q(),
                    config.circuit_depth,
                    rng,
                )?)),
                MixerKind::Bottleneck => Some(MixerBranch::Bottleneck(BottleneckMixer::matched(
                    config.c_q,
                    config.effective_n_q(),
                    config.circuit_depth,
                    rng,
                )?)),
            };
            layers.push(FourierLayer {
                pointwise: PointwiseLinear::new(c, c, rng),
                spectral: SpectralConv::new(c, config.c_q, budget, mixer, rng)?,
            });
        }
        let decoder = Decoder::new(c, config.decoder_width, config.decoder_layers, rng);
        Ok(HybridFno {
            config,
            lifting,
            layers,
            decoder,
        })
    }

    pub fn set_scaler_mode(&mut self, mode: ScalerMode) {
        for layer in &mut self.layers {
            if let Some(s) = &mut layer.spectral.scaler {
                s.mode = mode;
            }
        }
    }

    pub fn scalers(&self) -> Vec<&RobustScaler<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.spectral.scaler.as_ref())
            .collect()
    }

    /// Forward pass. `training` enables the per-batch scaler EMA update; the
    /// trace carries everything the backward pass needs.
    pub fn forward(
        &mut self,
        input: ArrayView5<T>,
        training: bool,
    ) -> Result<(Array5<T>, ForwardTrace<T>)> {
        let (_, c_in, _, _, _) = input.dim();
        if c_in != self.config.in_channels() {
            return Err(Error::shape(format!(
                "expected {} input channels, got {c_in}",
                self.config.in_channels()
            )));
        }
        self.set_scaler_mode(if training {
            ScalerMode::Training
        } else {
            ScalerMode::Inference
        });
        let lifted = self.lifting.forward(input);
        let padded = pad_spatial(lifted.view(), self.config.padding);
        let mut stats = ForwardStats::default();
        let mut u = padded.clone();
        let mut layer_traces = Vec::with_capacity(self.layers.len());
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let (spec_out, spec_cache, invocations) = layer.spectral.forward(u.view(), training)?;
            stats.mixer_invocations += invocations;
            stats.effective_modes = spec_cache.eff;
            let pw = layer.pointwise.forward(u.view());
            let pre = &pw + &spec_out;
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite activation in Fourier layer {l}"
                )));
            }
            let next = if l + 1 < n_layers {
                pre.mapv(gelu)
            } else {
                pre.clone()
            };
            layer_traces.push(LayerTrace {
                input: u,
                pre,
                spec_cache,
            });
            u = next;
        }
        let unpadded = unpad_spatial(u.view(), self.config.padding);
        // Decoder with SiLU between layers (not after the last).
        let mut decoder_inputs = Vec::new();
        let mut decoder_pre = Vec::new();
        let mut d = unpadded;
        let n_dec = self.decoder.linears.len();
        for (k, lin) in self.decoder.linears.iter().enumerate() {
            decoder_inputs.push(d.clone());
            let pre = lin.forward(d.view());
            decoder_pre.push(pre.clone());
            d = if k + 1 < n_dec { pre.mapv(silu) } else { pre };
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite decoder output".into()));
        }
        let trace = ForwardTrace {
            raw_input: input.to_owned(),
            lifted_padded: padded,
            layers: layer_traces,
            decoder_inputs,
            decoder_pre,
            stats,
        };
        Ok((d, trace))
    }

    /// Reverse-mode pass from the gradient of a scalar loss w.r.t. the
    /// output fields. Returns a named gradient store.
    pub fn backward(&self, trace: &ForwardTrace<T>, g_output: ArrayView5<T>) -> Result<GradStore<T>> {
        let mut store = GradStore::new();
        // Allocate all gradient tensors in schema order.
        for (name, view) in self.visit_params() {
            store.insert_zeros(&name, view.shape());
        }
        let mut g = g_output.to_owned();
        // Decoder backward.
        let n_dec = self.decoder.linears.len();
        for k in (0..n_dec).rev() {
            if k + 1 < n_dec {
                let pre = &trace.decoder_pre[k];
                ndarray::Zip::from(&mut g).and(pre).for_each(|gv, &p| {
                    *gv *= dsilu(p);
                });
            }
            let lin = &self.decoder.linears[k];
            let (mut g_v, mut g_s, mut g_b) = (
                Array2::zeros(lin.v.dim()),
                Array1::zeros(lin.scale.len()),
                Array1::zeros(lin.b.len()),
            );
            g = lin.backward(
                trace.decoder_inputs[k].view(),
                g.view(),
                &mut g_v,
                &mut g_s,
                &mut g_b,
            );
            store.accumulate(&format!("decoder.lin{k}.v"), g_v.into_dyn())?;
            store.accumulate(&format!("decoder.lin{k}.scale"), g_s.into_dyn())?;
            store.accumulate(&format!("decoder.lin{k}.b"), g_b.into_dyn())?;
        }
        // Unpad adjoint: zero-pad back to the padded grid.
        let (b, c, x, y, z) = trace.lifted_padded.dim();
        let mut g_pad = Array5::zeros((b, c, x, y, z));
        {
            let (gb, gc, gx, gy, gz) = g.dim();
            debug_assert_eq!((gb, gc), (b, c));
            g_pad
                .slice_mut(ndarray::s![.., .., 0..gx, 0..gy, 0..gz])
                .assign(&g);
        }
        let mut g_u = g_pad;
        // Fourier layers in reverse.
        let n_layers = self.layers.len();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let tr = &trace.layers[l];
            if l + 1 < n_layers {
                ndarray::Zip::from(&mut g_u).and(&tr.pre).for_each(|gv, &p| {
                    *gv *= dgelu(p);
                });
            }
            // The pre-activation was pw(u) + spectral(u): both see g_u.
            let mut spec_grads = SpectralGrads::zeros_like(&layer.spectral);
            let g_from_spec = layer
                .spectral
                .backward(&tr.spec_cache, g_u.view(), &mut spec_grads)?;
            for (i, corner) in spec_grads.corners.into_iter().enumerate() {
                store.accumulate(&format!("layer{l}.spectral.corner{i}"), corner.into_dyn())?;
            }
            if let Some(mg) = spec_grads.mixer {
                store.accumulate_mixer(l, mg)?;
            }
            let (mut g_w, mut g_b) = (
                Array2::zeros(layer.pointwise.w.dim()),
                Array1::zeros(layer.pointwise.b.len()),
            );
            let g_from_pw = layer
                .pointwise
                .backward(tr.input.view(), g_u.view(), &mut g_w, &mut g_b);
            store.accumulate(&format!("layer{l}.pointwise.w"), g_w.into_dyn())?;
            store.accumulate(&format!("layer{l}.pointwise.b"), g_b.into_dyn())?;
            g_u = &g_from_spec + &g_from_pw;
        }
        // Pad adjoint: slice to the unpadded grid, then lifting backward.
        let g_lift = unpad_spatial(g_u.view(), self.config.padding);
        let (mut g_w, mut g_b) = (
            Array2::zeros(self.lifting.w.dim()),
            Array1::zeros(self.lifting.b.len()),
        );
        let _ = self
            .lifting
            .backward(trace.raw_input.view(), g_lift.view(), &mut g_w, &mut g_b);
        store.accumulate("lifting.w", g_w.into_dyn())?;
        store.accumulate("lifting.b", g_b.into_dyn())?;
        Ok(store)
    }

    /// All trainable tensors with stable names, in schema order.
    pub fn visit_params(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out: Vec<(String, ArrayViewD<'_, T>)> = Vec::new();
        out.push(("lifting.w".into(), self.lifting.w.view().into_dyn()));
        out.push(("lifting.b".into(), self.lifting.b.view().into_dyn()));
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((
                format!("layer{l}.pointwise.w"),
                layer.pointwise.w.view().into_dyn(),
            ));
            out.push((
                format!("layer{l}.pointwise.b"),
                layer.pointwise.b.view().into_dyn(),
            ));
            for (i, corner) in layer.spectral.corners.iter().enumerate() {
                out.push((
                    format!("layer{l}.spectral.corner{i}"),
                    corner.view().into_dyn(),
                ));
            }
            match &layer.spectral.mixer {
                Some(MixerBranch::Vqc(m)) => {
                    out.push((format!("layer{l}.mixer.theta"), m.theta.view().into_dyn()));
                    out.push((format!("layer{l}.mixer.e_w"), m.e_w.view().into_dyn()));
                    out.push((format!("layer{l}.mixer.e_b"), m.e_b.view().into_dyn()));
                    out.push((format!("layer{l}.mixer.d_w"), m.d_w.view().into_dyn()));
                    out.push((format!("layer{l}.mixer.d_b"), m.d_b.view().into_dyn()));
                }
                Some(MixerBranch::Bottleneck(m)) => {
                    out.push((format!("layer{l}.mixer.in_w"), m.in_w.view().into_dyn()));
                    for (k, (w, bvec)) in m.hidden.iter().enumerate() {
                        out.push((format!("layer{l}.mixer.hidden{k}.w"), w.view().into_dyn()));
                        out.push((format!("layer{l}.mixer.hidden{k}.b"), bvec.view().into_dyn()));
                    }
                    out.push((format!("layer{l}.mixer.out_w"), m.out_w.view().into_dyn()));
                    out.push((format!("layer{l}.mixer.out_b"), m.out_b.view().into_dyn()));
                }
                None => {}
            }
        }
        for (k, lin) in self.decoder.linears.iter().enumerate() {
            out.push((format!("decoder.lin{k}.v"), lin.v.view().into_dyn()));
            out.push((format!("decoder.lin{k}.scale"), lin.scale.view().into_dyn()));
            out.push((format!("decoder.lin{k}.b"), lin.b.view().into_dyn()));
        }
        out
    }

    pub fn visit_params_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out: Vec<(String, ArrayViewMutD<'_, T>)> = Vec::new();
        out.push(("lifting.w".into(), self.lifting.w.view_mut().into_dyn()));
        out.push(("lifting.b".into(), self.lifting.b.view_mut().into_dyn()));
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((
                format!("layer{l}.pointwise.w"),
                layer.pointwise.w.view_mut().into_dyn(),
            ));
            out.push((
                format!("layer{l}.pointwise.b"),
                layer.pointwise.b.view_mut().into_dyn(),
            ));
            for (i, corner) in layer.spectral.corners.iter_mut().enumerate() {
                out.push((
                    format!("layer{l}.spectral.corner{i}"),
                    corner.view_mut().into_dyn(),
                ));
            }
            match &mut layer.spectral.mixer {
                Some(MixerBranch::Vqc(m)) => {
                    out.push((format!("layer{l}.mixer.theta"), m.theta.view_mut().into_dyn()));
                    out.push((format!("layer{l}.mixer.e_w"), m.e_w.view_mut().into_dyn()));
                    out.push((format!("layer{l}.mixer.e_b"), m.e_b.view_mut().into_dyn()));
                    out.push((format!("layer{l}.mixer.d_w"), m.d_w.view_mut().into_dyn()));
                    out.push((format!("layer{l}.mixer.d_b"), m.d_b.view_mut().into_dyn()));
                }
                Some(MixerBranch::Bottleneck(m)) => {
                    out.push((format!("layer{l}.mixer.in_w"), m.in_w.view_mut().into_dyn()));
                    for (k, (w, bvec)) in m.hidden.iter_mut().enumerate() {
                        out.push((format!("layer{l}.mixer.hidden{k}.w"), w.view_mut().into_dyn()));
                        out.push((
                            format!("layer{l}.mixer.hidden{k}.b"),
                            bvec.view_mut().into_dyn(),
                        ));
                    }
                    out.push((format!("layer{l}.mixer.out_w"), m.out_w.view_mut().into_dyn()));
                    out.push((format!("layer{l}.mixer.out_b"), m.out_b.view_mut().into_dyn()));
                }
                None => {}
            }
        }
        for (k, lin) in self.decoder.linears.iter_mut().enumerate() {
            out.push((format!("decoder.lin{k}.v"), lin.v.view_mut().into_dyn()));
            out.push((format!("decoder.lin{k}.scale"), lin.scale.view_mut().into_dyn()));
            out.push((format!("decoder.lin{k}.b"), lin.b.view_mut().into_dyn()));
        }
        out
    }
}

/// Name-keyed gradient accumulator, ordered by first insertion.
#[derive(Debug, Clone)]
pub struct GradStore<T: Real> {
    order: Vec<String>,
    map: HashMap<String, ArrayD<T>>,
}

impl<T: Real> Default for GradStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> GradStore<T> {
    pub fn new() -> Self {
        GradStore {
            order: Vec::new(),
            map: HashMap::new(),
        }
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) {
        if !self.map.contains_key(name) {
            self.order.push(name.to_string());
            self.map.insert(name.to_string(), ArrayD::zeros(shape.to_vec()));
        }
    }

    pub fn accumulate(&mut self, name: &str, grad: ArrayD<T>) -> Result<()> {
        match self.map.get_mut(name) {
            Some(existing) => {
                if existing.shape() != grad.shape() {
                    return Err(Error::shape(format!("gradient shape mismatch for {name}")));
                }
                *existing += &grad;
            }
            None => {
                self.order.push(name.to_string());
                self.map.insert(name.to_string(), grad);
            }
        }
        Ok(())
    }

    fn accumulate_mixer(&mut self, layer: usize, mg: crate::spectral::MixerGrads<T>) -> Result<()> {
        match mg {
            crate::spectral::MixerGrads::Vqc(g) => {
                self.accumulate(&format!("layer{layer}.mixer.theta"), g.theta.into_dyn())?;
                self.accumulate(&format!("layer{layer}.mixer.e_w"), g.e_w.into_dyn())?;
                self.accumulate(&format!("layer{layer}.mixer.e_b"), g.e_b.into_dyn())?;
                self.accumulate(&format!("layer{layer}.mixer.d_w"), g.d_w.into_dyn())?;
                self.accumulate(&format!("layer{layer}.mixer.d_b"), g.d_b.into_dyn())?;
            }
            crate::spectral::MixerGrads::Bottleneck(g) => {
                self.accumulate(&format!("layer{layer}.mixer.in_w"), g.in_w.into_dyn())?;
                for (k, (w, bvec)) in g.hidden.into_iter().enumerate() {
                    self.accumulate(&format!("layer{layer}.mixer.hidden{k}.w"), w.into_dyn())?;
                    self.accumulate(&format!("layer{layer}.mixer.hidden{k}.b"), bvec.into_dyn())?;
                }
                self.accumulate(&format!("layer{layer}.mixer.out_w"), g.out_w.into_dyn())?;
                self.accumulate(&format!("layer{layer}.mixer.out_b"), g.out_b.into_dyn())?;
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<T>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<T>)> {
        self.order.iter().map(|n| (n.as_str(), &self.map[n]))
    }

    pub fn global_norm(&self) -> T {
        self.order
            .iter()
            .flat_map(|n| self.map[n].iter())
            .map(|&g| g * g)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    pub fn scale_all(&mut self, factor: T) {
        for n in &self.order {
            self.map.get_mut(n).unwrap().mapv_inplace(|g| g * factor);
        }
    }

    pub fn has_non_finite(&self) -> Option<&str> {
        self.order.iter().find(|&n| self.map[n].iter().any(|g| !g.is_finite())).map(|v| v as _)
    }
}

/// Parameter schema: names and shapes of every trainable tensor for a
/// configuration, without allocating any of them. Construction follows this
/// schema exactly, which is what makes formula- and enumeration-based counts
/// comparable.
pub fn param_shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    config.validate()?;
    let c = config.channels;
    let c_q = config.c_q;
    let [mx, my, mz] = config.set_modes;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    out.push(("lifting.w".into(), vec![c, config.in_channels()]));
    out.push(("lifting.b".into(), vec![c]));
    for l in 0..config.layers {
        out.push((format!("layer{l}.pointwise.w"), vec![c, c]));
        out.push((format!("layer{l}.pointwise.b"), vec![c]));
        for i in 0..4 {
            out.push((
                format!("layer{l}.spectral.corner{i}"),
                vec![c, c - c_q, mx, my, mz, 2],
            ));
        }
        match config.mixer_kind {
            MixerKind::None => {}
            MixerKind::Vqc => {
                let n_q = config.effective_n_q();
                out.push((
                    format!("layer{l}.mixer.theta"),
                    vec![3 * config.circuit_depth * (n_q - 1)],
                ));
                out.push((format!("layer{l}.mixer.e_w"), vec![n_q, 2 * c_q]));
                out.push((format!("layer{l}.mixer.e_b"), vec![n_q]));
                out.push((format!("layer{l}.mixer.d_w"), vec![2 * c_q, n_q]));
                out.push((format!("layer{l}.mixer.d_b"), vec![2 * c_q]));
            }
            MixerKind::Bottleneck => {
                let (h, depth, _) =
                    match_bottleneck_width(c_q, config.effective_n_q(), config.circuit_depth);
                out.push((format!("layer{l}.mixer.in_w"), vec![h, 2 * c_q]));
                for k in 0..depth - 1 {
                    out.push((format!("layer{l}.mixer.hidden{k}.w"), vec![h, h]));
                    out.push((format!("layer{l}.mixer.hidden{k}.b"), vec![h]));
                }
                out.push((format!("layer{l}.mixer.out_w"), vec![2 * c_q, h]));
                out.push((format!("layer{l}.mixer.out_b"), vec![2 * c_q]));
            }
        }
    }
    for k in 0..config.decoder_layers {
        let ci = if k == 0 { c } else { config.decoder_width };
        let co = if k == config.decoder_layers - 1 {
            OUTPUT_CHANNELS
        } else {
            config.decoder_width
        };
        out.push((format!("decoder.lin{k}.v"), vec![co, ci]));
        out.push((format!("decoder.lin{k}.scale"), vec![co]));
        out.push((format!("decoder.lin{k}.b"), vec![co]));
    }
    Ok(out)
}

/// Exact parameter accounting, formula- and enumeration-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    /// Dense mode-wise spectral weights per layer: 8 C (C - C_q) Nm_set.
    pub spectral_per_layer: usize,
    /// Mode-shared mixer parameters per layer (0 without a mixer).
    pub quantum_per_layer: usize,
    /// Pointwise W_l parameters summed over layers.
    pub pointwise: usize,
    pub lifting: usize,
    pub decoder: usize,
    pub total: usize,
}

pub fn count_params(config: &ModelConfig) -> Result<ParamBreakdown> {
    config.validate()?;
    let c = config.channels;
    let c_q = config.c_q;
    let n_m = config.set_modes.iter().product::<usize>();
    let spectral_per_layer = 8 * c * (c - c_q) * n_m;
    let quantum_per_layer = match config.mixer_kind {
        MixerKind::None => 0,
        MixerKind::Vqc => vqc_param_count(c_q, config.effective_n_q(), config.circuit_depth),
        MixerKind::Bottleneck => {
            match_bottleneck_width(c_q, config.effective_n_q(), config.circuit_depth).2
        }
    };
    let pointwise = config.layers * (c * c + c);
    let lifting = c * config.in_channels() + c;
    let mut decoder = 0usize;
    for k in 0..config.decoder_layers {
        let ci = if k == 0 { c } else { config.decoder_width };
        let co = if k == config.decoder_layers - 1 {
            OUTPUT_CHANNELS
        } else {
            config.decoder_width
        };
        decoder += co * ci + 2 * co;
    }
    let total =
        lifting + pointwise + config.layers * (spectral_per_layer + quantum_per_layer) + decoder;

    // Enumeration over the schema must agree exactly.
    let enumerated: usize = param_shapes(config)?
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum();
    if enumerated != total {
        return Err(Error::Internal(format!(
            "parameter accounting mismatch: formula {total} vs enumeration {enumerated}"
        )));
    }
    Ok(ParamBreakdown {
        spectral_per_layer,
        quantum_per_layer,
        pointwise,
        lifting,
        decoder,
        total,
    })
}

/// Input field assembly: enabled features in the order (x, y, z, P, V, H*),
/// coordinates normalized to [0, 1] over the grid, process values passed
/// already normalized by their reference scales.
pub fn build_input_field<T: Real>(
    features: &InputFeatures,
    dims: [usize; 3],
    process_values: [f64; 3],
) -> Array5<T> {
    let [x, y, z] = dims;
    let coord = |i: usize, n: usize| -> f64 {
        if n <= 1 {
            0.0
        } else {
            i as f64 / (n - 1) as f64
        }
    };
    enum Feature {
        CoordX,
        CoordY,
        CoordZ,
        Const(f64),
    }
    let mut channels = Vec::new();
    if features.x {
        channels.push(Feature::CoordX);
    }
    if features.y {
        channels.push(Feature::CoordY);
    }
    if features.z {
        channels.push(Feature::CoordZ);
    }
    if features.power {
        channels.push(Feature::Const(process_values[0]));
    }
    if features.v_scan {
        channels.push(Feature::Const(process_values[1]));
    }
    if features.h_star {
        channels.push(Feature::Const(process_values[2]));
    }
    Array5::from_shape_fn((1, channels.len(), x, y, z), |(_, c, xi, yi, zi)| {
        r(match channels[c] {
            Feature::CoordX => coord(xi, x),
            Feature::CoordY => coord(yi, y),
            Feature::CoordZ => coord(zi, z),
            Feature::Const(v) => v,
        })
    })
}

/// Concatenate per-sample input fields along the batch axis.
pub fn stack_batch<T: Real>(fields: &[Array5<T>]) -> Array5<T> {
    let views: Vec<_> = fields.iter().map(|f| f.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("uniform shapes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn desk_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            channels: 4,
            set_modes: [2, 2, 2],
            c_q: 1,
            n_q: None,
            circuit_depth: 1,
            padding: 2,
            mixer_kind: MixerKind::Vqc,
            features: InputFeatures::default(),
            decoder_width: 6,
            decoder_layers: 3,
        }
    }

    #[test]
    fn schema_matches_built_model() {
        for config in [
            desk_config(),
            ModelConfig {
                c_q: 0,
                mixer_kind: MixerKind::None,
                ..desk_config()
            },
            ModelConfig {
                c_q: 2,
                mixer_kind: MixerKind::Bottleneck,
                ..desk_config()
            },
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let model = HybridFno::<f64>::new(config.clone(), &mut rng).unwrap();
            let schema = param_shapes(&config).unwrap();
            let visited = model.visit_params();
            assert_eq!(schema.len(), visited.len());
            for ((sn, ss), (vn, vv)) in schema.iter().zip(&visited) {
                assert_eq!(sn, vn);
                assert_eq!(ss.as_slice(), vv.shape(), "{sn}");
            }
        }
    }

    #[test]
    fn formula_counts_equal_enumeration_over_grid() {
        for c in [4usize, 8, 32] {
            for c_q in 0..=c.min(8) {
                for d in 1..=3 {
                    for kind in [MixerKind::Vqc, MixerKind::Bottleneck] {
                        let config = ModelConfig {
                            layers: 3,
                            channels: c,
                            set_modes: [3, 2, 2],
                            c_q,
                            circuit_depth: d,
                            mixer_kind: if c_q == 0 { MixerKind::None } else { kind },
                            ..ModelConfig::default()
                        };
                        // count_params errors internally on mismatch.
                        count_params(&config).unwrap();
                    }
                }
            }
        }
    }

    #[test]
    fn paper_scale_parameter_deltas_are_exact() {
        let base = ModelConfig::default(); // L=3, C=32, modes (25,20,15), C_q=0
        let classical = count_params(&base).unwrap();
        assert_eq!(classical.spectral_per_layer, 8 * 32 * 32 * 7500);
        let spectral_plus_quantum =
            |b: &ParamBreakdown| 3 * (b.spectral_per_layer + b.quantum_per_layer);
        let mut deltas = Vec::new();
        for (c_q, expected) in [(3usize, 17_279_847usize), (5, 28_799_619), (8, 46_079_097)] {
            let cfg = ModelConfig {
                c_q,
                mixer_kind: MixerKind::Vqc,
                ..ModelConfig::default()
            };
            let hybrid = count_params(&cfg).unwrap();
            let delta = spectral_plus_quantum(&classical) - spectral_plus_quantum(&hybrid);
            assert_eq!(delta, expected, "c_q={c_q}");
            deltas.push(delta);
        }
        let _ = deltas;
    }

    #[test]
    fn forward_output_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = HybridFno::<f64>::new(desk_config(), &mut rng).unwrap();
        // Initialize scalers from one training pass.
        let input = build_input_field::<f64>(&InputFeatures::default(), [8, 8, 6], [0.5, 0.4, 0.3]);
        let _ = model.forward(input.view(), true).unwrap();
        let (out1, tr1) = model.forward(input.view(), false).unwrap();
        let (out2, _) = model.forward(input.view(), false).unwrap();
        assert_eq!(out1.dim(), (1, 2, 8, 8, 6));
        assert_eq!(out1, out2);
        assert!(out1.iter().all(|v| v.is_finite()));
        // Mixer invocations = L * 4 * Nm per sample.
        let [mx, my, mz] = tr1.stats.effective_modes;
        assert_eq!(tr1.stats.mixer_invocations, 2 * 4 * mx * my * mz);
    }

    #[test]
    fn inference_forward_keeps_scaler_state_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = HybridFno::<f64>::new(desk_config(), &mut rng).unwrap();
        let input = build_input_field::<f64>(&InputFeatures::default(), [8, 8, 6], [0.2, 0.9, 0.1]);
        model.forward(input.view(), true).unwrap();
        let snapshot = |m: &HybridFno<f64>| -> Vec<(Vec<f64>, Vec<f64>, usize)> {
            m.scalers()
                .into_iter()
                .map(|s| {
                    (
                        s.running_min.to_vec(),
                        s.running_max.to_vec(),
                        s.update_count,
                    )
                })
                .collect()
        };
        let before = snapshot(&model);
        model.forward(input.view(), false).unwrap();
        assert_eq!(before, snapshot(&model));
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = ModelConfig {
            c_q: 0,
            mixer_kind: MixerKind::None,
            ..desk_config()
        };
        let mut model = HybridFno::<f64>::new(config, &mut rng).unwrap();
        for (_, mut view) in model.visit_params_mut() {
            view.fill(0.0);
        }
        let input = build_input_field::<f64>(&InputFeatures::default(), [6, 6, 4], [0.3, 0.3, 0.3]);
        let (out, _) = model.forward(input.view(), false).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation_rejects_inconsistent_mixer() {
        let bad = ModelConfig {
            c_q: 0,
            mixer_kind: MixerKind::Vqc,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad2 = ModelConfig {
            c_q: 40,
            mixer_kind: MixerKind::Vqc,
            ..ModelConfig::default()
        };
        assert!(bad2.validate().is_err());
        let bad3 = ModelConfig {
            c_q: 3,
            mixer_kind: MixerKind::None,
            ..ModelConfig::default()
        };
        assert!(bad3.validate().is_err());
    }

    #[test]
    fn weight_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let lin = WeightNormLinear::<f64>::new(3, 2, &mut rng);
        let input = Array5::from_shape_fn((1, 3, 2, 2, 2), |_| rng.gen_range(-1.0..1.0));
        let g_out = Array5::from_shape_fn((1, 2, 2, 2, 2), |_| rng.gen_range(-1.0..1.0));
        let loss = |l: &WeightNormLinear<f64>| -> f64 {
            l.forward(input.view())
                .iter()
                .zip(g_out.iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (mut gv, mut gs, mut gb) = (
            Array2::zeros((2, 3)),
            Array1::zeros(2),
            Array1::zeros(2),
        );
        lin.backward(input.view(), g_out.view(), &mut gv, &mut gs, &mut gb);
        let h = 1e-6;
        let mut l2 = lin.clone();
        for o in 0..2 {
            for i in 0..3 {
                l2.v[(o, i)] = lin.v[(o, i)] + h;
                let lp = loss(&l2);
                l2.v[(o, i)] = lin.v[(o, i)] - h;
                let lm = loss(&l2);
                l2.v[(o, i)] = lin.v[(o, i)];
                let fd = (lp - lm) / (2.0 * h);
                assert!((gv[(o, i)] - fd).abs() < 1e-7, "v {o},{i}");
            }
            l2.scale[o] = lin.scale[o] + h;
            let lp = loss(&l2);
            l2.scale[o] = lin.scale[o] - h;
            let lm = loss(&l2);
            l2.scale[o] = lin.scale[o];
            assert!((gs[o] - (lp - lm) / (2.0 * h)).abs() < 1e-7, "scale {o}");
        }
    }

    use rand::Rng;
}
