//! Sideband cooling of a frequency-modulated mechanical oscillator coupled to
//! a driven optical cavity.
//!
//! Units: ν₀ = 1, ħ = 1. The laser detuning `δ` is laser minus cavity; the
//! red detuning used on scan axes is `Δ = -δ`.

pub mod bessel;
pub mod config;
pub mod experiments;
pub mod export;
pub mod fit;
pub mod gaussian;
pub mod meanfield;
pub mod model;
pub mod ode;
pub mod rates;

pub use model::{ConfigError, Drive, MatrixDetuning, MechanicalForm, ModelConfig, Waveform, NU0};
