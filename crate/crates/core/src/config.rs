//! TOML run configuration: flat physical parameters at the top level plus
//! one level of sections.
//!
//! ```toml
//! kappa = 0.05
//! coupling = 0.01
//! alpha0 = 1.0
//! red_detuning = 1.0
//!
//! [waveform]
//! shape = "sinusoidal"
//! amplitude = 0.1
//! frequency = 0.5
//!
//! [scan]
//! start = 0.2
//! stop = 2.0
//! steps = 91
//! ```

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{Axis, GridSpec, OutputMode, RunControls, ScanSpec};
use crate::model::{ConfigError, Drive, MatrixDetuning, MechanicalForm, ModelConfig, Waveform, NU0};
use crate::rates::WeightOptions;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    None,
    Sinusoidal,
    Rectangular,
    Fourier,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub shape: Shape,
    pub amplitude: f64,
    /// Modulation frequency ω.
    pub frequency: Option<f64>,
    /// Harmonics kept in the rectangular pulse.
    pub harmonics: Option<u32>,
    /// `[m, Re c_m, Im c_m]` rows for `shape = "fourier"`.
    pub coefficients: Vec<(i64, f64, f64)>,
}

impl WaveformSection {
    pub fn build(&self) -> Result<Waveform, ConfigFileError> {
        let frequency = self.frequency.unwrap_or(1.0);
        let w = match self.shape {
            Shape::None => Waveform::zero(frequency)?,
            Shape::Sinusoidal => Waveform::sinusoidal(self.amplitude, frequency)?,
            Shape::Rectangular => {
                let n = self.harmonics.ok_or_else(|| {
                    ConfigFileError::Invalid("waveform.harmonics is required for a rectangular pulse".into())
                })?;
                Waveform::rectangular(self.amplitude, frequency, n)?
            }
            Shape::Fourier => {
                Waveform::new(frequency, self.coefficients.iter().map(|&(m, re, im)| (m, Complex64::new(re, im))))?
            }
        };
        if self.shape != Shape::None && self.frequency.is_none() {
            return Err(ConfigFileError::Invalid("waveform.frequency is required".into()));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSection {
    pub truncation: Option<usize>,
    pub tolerance: f64,
    pub min_nodes: usize,
}

impl Default for WeightSection {
    fn default() -> Self {
        let d = WeightOptions::default();
        Self { truncation: d.truncation, tolerance: d.tolerance, min_nodes: d.min_nodes }
    }
}

impl From<WeightSection> for WeightOptions {
    fn from(s: WeightSection) -> Self {
        WeightOptions { truncation: s.truncation, tolerance: s.tolerance, min_nodes: s.min_nodes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self { start: 0.2, stop: 2.0, steps: 91 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub omega_start: f64,
    pub omega_stop: f64,
    pub omega_steps: usize,
    pub gamma0_start: f64,
    pub gamma0_stop: f64,
    pub gamma0_steps: usize,
    /// `γ̂ / γ₀` in every cell; omit to keep the top-level `gamma_hat`.
    pub gamma_hat_ratio: Option<f64>,
    pub window_low: f64,
    pub window_high: f64,
    pub coarse_points: usize,
    pub refine_iterations: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            omega_start: 0.2,
            omega_stop: 2.0,
            omega_steps: 10,
            gamma0_start: 1e-4,
            gamma0_stop: 1e-3,
            gamma0_steps: 10,
            gamma_hat_ratio: Some(0.2),
            window_low: 0.5,
            window_high: 1.5,
            coarse_points: 21,
            refine_iterations: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolveQuantity {
    #[default]
    Covariance,
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSection {
    pub periods: usize,
    pub samples_per_period: usize,
    pub quantity: EvolveQuantity,
}

impl Default for EvolveSection {
    fn default() -> Self {
        Self { periods: 100, samples_per_period: 32, quantity: EvolveQuantity::Covariance }
    }
}

/// On-disk layout, before resolution into a [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub kappa: Option<f64>,
    /// Laser minus cavity frequency δ.
    pub detuning: Option<f64>,
    /// `Δ = -δ`; alternative to `detuning`.
    pub red_detuning: Option<f64>,
    pub coupling: Option<f64>,
    pub alpha0: Option<f64>,
    pub pump: Option<f64>,
    /// `η = χ₀|α₀|`; alternative to `alpha0`.
    pub eta: Option<f64>,
    /// Laser detuning at which the pump is calibrated to reach `alpha0`.
    pub alpha0_reference_detuning: Option<f64>,
    pub gamma0: f64,
    pub gamma_hat: f64,
    pub nbar: f64,
    pub initial_occupation: Option<f64>,
    pub mechanical_form: MechanicalForm,
    pub matrix_detuning: MatrixDetuning,
    pub waveform: WaveformSection,
    pub run: RunControls,
    pub scan: ScanSection,
    pub grid: GridSection,
    pub weights: WeightSection,
    pub evolve: EvolveSection,
}

/// Resolved configuration shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub red_detuning: f64,
    pub controls: RunControls,
    pub scan: Axis,
    pub grid: GridSection,
    pub weights: WeightSection,
    pub evolve: EvolveSection,
}

fn required(value: Option<f64>, name: &str) -> Result<f64, ConfigFileError> {
    value.ok_or_else(|| ConfigFileError::Invalid(format!("missing required key `{name}`")))
}

impl RawConfig {
    pub fn resolve(&self) -> Result<RunConfig, ConfigFileError> {
        let kappa = required(self.kappa, "kappa")?;
        let coupling = required(self.coupling, "coupling")?;
        let detuning = match (self.detuning, self.red_detuning) {
            (Some(_), Some(_)) => {
                return Err(ConfigFileError::Invalid("give at most one of `detuning` and `red_detuning`".into()))
            }
            (Some(d), None) => d,
            (None, Some(r)) => -r,
            (None, None) => -NU0,
        };
        let drive = match (self.alpha0, self.eta, self.pump) {
            (Some(a), None, None) => Drive::Amplitude { alpha0: a, reference_detuning: self.alpha0_reference_detuning },
            (None, Some(eta), None) => {
                if coupling == 0.0 {
                    return Err(ConfigFileError::Invalid("`eta` needs a non-zero `coupling`".into()));
                }
                Drive::Amplitude { alpha0: eta / coupling, reference_detuning: self.alpha0_reference_detuning }
            }
            (None, None, Some(p)) => {
                if self.alpha0_reference_detuning.is_some() {
                    return Err(ConfigFileError::Invalid(
                        "`alpha0_reference_detuning` only applies with `alpha0` or `eta`".into(),
                    ));
                }
                Drive::Pump(p)
            }
            _ => return Err(ConfigFileError::Invalid("give exactly one of `alpha0`, `eta` and `pump`".into())),
        };
        let model = ModelConfig {
            waveform: self.waveform.build()?,
            kappa,
            detuning,
            drive,
            coupling,
            gamma0: self.gamma0,
            gamma_hat: self.gamma_hat,
            nbar: self.nbar,
            initial_occupation: self.initial_occupation,
            mechanical_form: self.mechanical_form,
            matrix_detuning: self.matrix_detuning,
        };
        model.validate()?;
        let scan = Axis::new(self.scan.start, self.scan.stop, self.scan.steps);
        scan.validate("scan").map_err(|e| ConfigFileError::Invalid(e.to_string()))?;
        if self.evolve.periods == 0 || self.evolve.samples_per_period == 0 {
            return Err(ConfigFileError::Invalid("evolve.periods and evolve.samples_per_period must be positive".into()));
        }
        let run = &self.run;
        if run.nodes == 0 || run.quasi_consecutive == 0 || run.max_periods == 0 || !(run.quasi_tol > 0.0) {
            return Err(ConfigFileError::Invalid(
                "run.nodes, run.quasi_consecutive, run.max_periods and run.quasi_tol must be positive".into(),
            ));
        }
        Ok(RunConfig {
            model,
            red_detuning: -detuning,
            controls: self.run,
            scan,
            grid: self.grid,
            weights: self.weights,
            evolve: self.evolve,
        })
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let raw: RawConfig = toml::from_str(text)?;
        raw.resolve()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn scan_spec(&self, mode: OutputMode) -> ScanSpec {
        ScanSpec { model: self.model.clone(), detuning: self.scan, controls: self.controls, mode }
    }

    pub fn grid_spec(&self, mode: OutputMode) -> GridSpec {
        let g = &self.grid;
        GridSpec {
            model: self.model.clone(),
            omega: Axis::new(g.omega_start, g.omega_stop, g.omega_steps),
            gamma0: Axis::new(g.gamma0_start, g.gamma0_stop, g.gamma0_steps),
            gamma_hat_ratio: g.gamma_hat_ratio,
            window: [g.window_low, g.window_high],
            coarse_points: g.coarse_points,
            refine_iterations: g.refine_iterations,
            controls: self.controls,
            mode,
        }
    }
}
