//! Hybrid quantum-classical Fourier neural operator toolkit.
//!
//! The crate implements a 3D spectral-convolution operator network whose
//! per-mode channel mixing is partitioned between dense complex weights and a
//! compact mode-shared mixer (an exactly simulated variational quantum
//! circuit, or a parameter-matched classical bottleneck MLP), together with
//! synthetic laser-processing data, training, evaluation metrics, circuit
//! diagnostics, and a noisy-shot study.
//!
//! All numeric kernels are generic over the scalar type via [`num::Real`]
//! (`f32` or `f64`); the concrete aliases below fix the common choices.

pub mod checkpoint;
pub mod config;
pub mod diag;
pub mod error;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod noise;
pub mod num;
pub mod plot;
pub mod qsim;
pub mod spectral;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};

/// Default scalar used by the CLI and acceptance suite.
pub type F = f64;

pub type Statevector64 = qsim::Statevector<f64>;
pub type Statevector32 = qsim::Statevector<f32>;
pub type Circuit64 = qsim::CircuitSpec<f64>;
pub type Model64 = model::HybridFno<f64>;
pub type Model32 = model::HybridFno<f32>;
pub type VqcMixer64 = mixer::VqcMixer<f64>;
pub type SpectralConv64 = spectral::SpectralConv<f64>;
