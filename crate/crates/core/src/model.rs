//! Physical parameters, modulation waveforms and derived constants.
//!
//! Everything is dimensionless: frequencies and rates in units of the mean
//! mechanical frequency ν₀ (fixed to 1), ħ = 1.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean mechanical frequency; the unit of every frequency in the crate.
pub const NU0: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("modulation frequency must be positive and finite, got {0}")]
    Frequency(f64),
    #[error("modulation amplitude must be non-negative and finite, got {0}")]
    Amplitude(f64),
    #[error("rectangular pulse needs at least one harmonic")]
    NoHarmonics,
    #[error("waveform coefficient for m = 0 is not allowed (zero-mean modulation)")]
    ZeroMode,
    #[error("coefficients for m = {m} and m = -{m} are not complex conjugates")]
    NotReal { m: u32 },
    #[error("non-finite waveform coefficient for m = {0}")]
    NonFiniteCoefficient(i64),
    #[error("{name} must be {requirement}, got {value}")]
    Parameter { name: &'static str, requirement: &'static str, value: f64 },
    #[error("damping modulation |gamma_hat| = {gamma_hat} exceeds gamma0 = {gamma0}; gamma(t) would go negative")]
    NegativeDamping { gamma0: f64, gamma_hat: f64 },
    #[error("mechanical frequency reaches {min_nu} <= 0 during the modulation period")]
    NonPositiveFrequency { min_nu: f64 },
    #[error("exactly one of `pump` and `alpha0` must be given")]
    DriveSpecification,
}

/// Zero-mean real periodic modulation `f(t) = Σ_m c_m e^{imωt}`.
///
/// Only coefficients with `m > 0` are stored; `c_{-m} = conj(c_m)` is implied,
/// so `f` is real by construction and `c_0` does not exist.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    frequency: f64,
    coefficients: BTreeMap<u32, Complex64>,
}

impl Waveform {
    /// Build from arbitrary integer-indexed coefficients. Both `m` and `-m` may
    /// be given, in which case they must be conjugate to 1e-12.
    pub fn new(
        frequency: f64,
        coefficients: impl IntoIterator<Item = (i64, Complex64)>,
    ) -> Result<Self, ConfigError> {
        if !(frequency > 0.0) || !frequency.is_finite() {
            return Err(ConfigError::Frequency(frequency));
        }
        let mut positive: BTreeMap<u32, Complex64> = BTreeMap::new();
        let mut negative: BTreeMap<u32, Complex64> = BTreeMap::new();
        for (m, c) in coefficients {
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(ConfigError::NonFiniteCoefficient(m));
            }
            match m {
                0 => return Err(ConfigError::ZeroMode),
                m if m > 0 => {
                    positive.insert(m as u32, c);
                }
                m => {
                    negative.insert(m.unsigned_abs() as u32, c.conj());
                }
            }
        }
        for (m, c_conj) in negative {
            match positive.get(&m) {
                Some(c) => {
                    if (c - c_conj).norm() > 1e-12 * c.norm().max(1.0) {
                        return Err(ConfigError::NotReal { m });
                    }
                }
                None => {
                    positive.insert(m, c_conj);
                }
            }
        }
        positive.retain(|_, c| c.norm() > 0.0);
        Ok(Self { frequency, coefficients: positive })
    }

    /// No modulation, but a defined base frequency (sets the period used for
    /// orbit detection and averaging).
    pub fn zero(frequency: f64) -> Result<Self, ConfigError> {
        Self::new(frequency, std::iter::empty())
    }

    /// `f(t) = amplitude · sin(frequency · t)`.
    pub fn sinusoidal(amplitude: f64, frequency: f64) -> Result<Self, ConfigError> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(ConfigError::Amplitude(amplitude));
        }
        let c1 = Complex64::new(0.0, -amplitude / 2.0);
        Self::new(frequency, [(1, c1)])
    }

    /// Truncated odd square wave of peak value `amplitude`: the first
    /// `n_harmonics` odd harmonics, `c_m = 2·amplitude / (iπm)`.
    ///
    /// The phase is sine-like, so a single harmonic is a sinusoid of amplitude
    /// `4·amplitude/π`.
    pub fn rectangular(amplitude: f64, frequency: f64, n_harmonics: u32) -> Result<Self, ConfigError> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(ConfigError::Amplitude(amplitude));
        }
        if n_harmonics == 0 {
            return Err(ConfigError::NoHarmonics);
        }
        let coeffs = (0..n_harmonics).map(|k| {
            let m = 2 * k as i64 + 1;
            (m, Complex64::new(0.0, -2.0 * amplitude / (PI * m as f64)))
        });
        Self::new(frequency, coeffs)
    }

    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.frequency
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Coefficient `c_m` for any integer `m` (zero when absent).
    pub fn coefficient(&self, m: i64) -> Complex64 {
        if m == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let c = self.coefficients.get(&(m.unsigned_abs() as u32)).copied().unwrap_or_default();
        if m > 0 {
            c
        } else {
            c.conj()
        }
    }

    /// Stored `(m, c_m)` pairs with `m > 0`.
    pub fn harmonics(&self) -> impl Iterator<Item = (u32, Complex64)> + '_ {
        self.coefficients.iter().map(|(&m, &c)| (m, c))
    }

    pub fn max_harmonic(&self) -> u32 {
        self.coefficients.keys().next_back().copied().unwrap_or(0)
    }

    /// `f(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.harmonics()
            .map(|(m, c)| 2.0 * (c * Complex64::cis(m as f64 * self.frequency * t)).re)
            .sum()
    }

    /// `df/dt`, by term-wise differentiation.
    pub fn derivative(&self, t: f64) -> f64 {
        self.harmonics()
            .map(|(m, c)| {
                let mw = m as f64 * self.frequency;
                2.0 * (Complex64::new(0.0, mw) * c * Complex64::cis(mw * t)).re
            })
            .sum()
    }

    /// Zero-mean antiderivative `F(t)` with `F' = f`.
    pub fn antiderivative(&self, t: f64) -> f64 {
        self.harmonics()
            .map(|(m, c)| {
                let mw = m as f64 * self.frequency;
                2.0 * (c / Complex64::new(0.0, mw) * Complex64::cis(mw * t)).re
            })
            .sum()
    }

    /// Number of samples per period that resolves every harmonic comfortably.
    pub fn dense_samples(&self) -> usize {
        (64 * self.max_harmonic() as usize).max(4096)
    }

    /// `(min f, max f)` over one period on a dense grid.
    pub fn range(&self) -> (f64, f64) {
        if self.is_zero() {
            return (0.0, 0.0);
        }
        let n = self.dense_samples();
        let period = self.period();
        (0..n)
            .map(|k| self.eval(period * k as f64 / n as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// Amplitude `ν̂` if this is exactly `ν̂·sin(ωt)`.
    pub fn as_sinusoid(&self) -> Option<f64> {
        if self.is_zero() {
            return Some(0.0);
        }
        if self.coefficients.len() != 1 {
            return None;
        }
        let c1 = *self.coefficients.get(&1)?;
        if c1.re.abs() > 1e-14 * c1.norm() || c1.im > 0.0 {
            return None;
        }
        Some(-2.0 * c1.im)
    }
}

#[derive(Serialize, Deserialize)]
struct WaveformRepr {
    frequency: f64,
    /// `[m, Re c_m, Im c_m]` for `m > 0`.
    coefficients: Vec<(i64, f64, f64)>,
}

impl Serialize for Waveform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        WaveformRepr {
            frequency: self.frequency,
            coefficients: self.harmonics().map(|(m, c)| (m as i64, c.re, c.im)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Waveform {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = WaveformRepr::deserialize(deserializer)?;
        Waveform::new(
            repr.frequency,
            repr.coefficients.into_iter().map(|(m, re, im)| (m, Complex64::new(re, im))),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// How the cavity drive is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    /// Pump rate Ω; held fixed when the detuning changes.
    Pump(f64),
    /// Target mean-field magnitude |α₀|.
    ///
    /// Without a reference detuning, |α₀| itself is held fixed when the
    /// detuning changes. With one, Ω is calibrated once at the reference
    /// detuning and then held fixed.
    Amplitude { alpha0: f64, reference_detuning: Option<f64> },
}

/// Which quadratic form represents the modulated mechanical Hamiltonian in
/// the covariance dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanicalForm {
    /// `ν(t)/2 · (x² + p²)`: the number-conserving form, `ν(t) b₀†b₀`.
    #[default]
    Rotating,
    /// `ν(t)²/(2ν₀) x² + ν₀/2 p²`: the full `p²/2M + Mν(t)²x²/2` expressed in
    /// the fixed ν₀ basis; contains the parametric (squeezing) terms.
    Exact,
}

/// Which cavity detuning enters the quadratic Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixDetuning {
    /// `δ'(t) = δ + 2χ₀ Re β(t)` from the mean-field orbit.
    #[default]
    Dressed,
    /// The bare laser detuning δ.
    Bare,
}

/// Complete set of physical parameters, in units of ν₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frequency modulation `f(t)`; `ν(t) = ν₀ + f(t)`.
    pub waveform: Waveform,
    /// Cavity amplitude decay rate κ.
    pub kappa: f64,
    /// Laser minus cavity frequency δ (cooling side is δ < 0).
    pub detuning: f64,
    pub drive: Drive,
    /// Single-photon coupling χ₀.
    pub coupling: f64,
    /// Mean mechanical damping γ₀.
    pub gamma0: f64,
    /// Damping modulation amplitude: `γ(t) = γ₀ + γ̂ sin(ωt)`.
    pub gamma_hat: f64,
    /// Bath occupation m̄.
    pub nbar: f64,
    /// Occupation of the initial thermal state; defaults to `nbar`.
    pub initial_occupation: Option<f64>,
    #[serde(default)]
    pub mechanical_form: MechanicalForm,
    #[serde(default)]
    pub matrix_detuning: MatrixDetuning,
}

/// Constants that follow from a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    /// Lowest-order cavity amplitude `α₀ = (Ω/2)/(δ + iκ)`.
    pub alpha0: Complex64,
    /// Pump rate Ω.
    pub pump: f64,
    /// Coupling strength `η = |α₀|χ₀/ν₀`.
    pub eta: f64,
    /// Modulation period `T = 2π/ω`.
    pub period: f64,
}

fn require(name: &'static str, requirement: &'static str, value: f64, ok: bool) -> Result<(), ConfigError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Parameter { name, requirement, value })
    }
}

impl ModelConfig {
    /// Unmodulated configuration with `|α₀|` given directly and every rate
    /// of the mechanical bath set to zero.
    pub fn unmodulated(kappa: f64, detuning: f64, coupling: f64, alpha0: f64) -> Self {
        Self {
            waveform: Waveform::zero(1.0).expect("unit frequency is valid"),
            kappa,
            detuning,
            drive: Drive::Amplitude { alpha0, reference_detuning: None },
            coupling,
            gamma0: 0.0,
            gamma_hat: 0.0,
            nbar: 0.0,
            initial_occupation: None,
            mechanical_form: MechanicalForm::default(),
            matrix_detuning: MatrixDetuning::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        require("kappa", "> 0", self.kappa, self.kappa > 0.0)?;
        require("detuning", "finite", self.detuning, true)?;
        require("coupling", ">= 0", self.coupling, self.coupling >= 0.0)?;
        require("gamma0", ">= 0", self.gamma0, self.gamma0 >= 0.0)?;
        require("gamma_hat", "finite", self.gamma_hat, true)?;
        require("nbar", ">= 0", self.nbar, self.nbar >= 0.0)?;
        if let Some(m0) = self.initial_occupation {
            require("initial_occupation", ">= 0", m0, m0 >= 0.0)?;
        }
        match self.drive {
            Drive::Pump(omega) => require("pump", ">= 0", omega, omega >= 0.0)?,
            Drive::Amplitude { alpha0, reference_detuning } => {
                require("alpha0", ">= 0", alpha0, alpha0 >= 0.0)?;
                if let Some(d) = reference_detuning {
                    require("reference_detuning", "finite", d, true)?;
                }
            }
        }
        if self.gamma_hat.abs() > self.gamma0 {
            return Err(ConfigError::NegativeDamping { gamma0: self.gamma0, gamma_hat: self.gamma_hat });
        }
        let (lo, _) = self.waveform.range();
        if NU0 + lo <= 0.0 {
            return Err(ConfigError::NonPositiveFrequency { min_nu: NU0 + lo });
        }
        Ok(())
    }

    /// Same configuration at another laser detuning δ; the drive is carried
    /// over according to its normalization mode.
    pub fn with_detuning(&self, detuning: f64) -> Self {
        Self { detuning, ..self.clone() }
    }

    pub fn period(&self) -> f64 {
        self.waveform.period()
    }

    pub fn omega(&self) -> f64 {
        self.waveform.frequency()
    }

    /// `ν(t) = ν₀ + f(t)`.
    pub fn frequency_at(&self, t: f64) -> f64 {
        NU0 + self.waveform.eval(t)
    }

    /// `dν/dt`.
    pub fn frequency_rate_at(&self, t: f64) -> f64 {
        self.waveform.derivative(t)
    }

    /// `γ(t) = γ₀ + γ̂ sin(ωt)`.
    pub fn damping_at(&self, t: f64) -> f64 {
        self.gamma0 + self.gamma_hat * (self.omega() * t).sin()
    }

    pub fn initial_occupation(&self) -> f64 {
        self.initial_occupation.unwrap_or(self.nbar)
    }

    /// Pump rate Ω at the current detuning.
    pub fn pump(&self) -> f64 {
        match self.drive {
            Drive::Pump(omega) => omega,
            Drive::Amplitude { alpha0, reference_detuning } => {
                let d = reference_detuning.unwrap_or(self.detuning);
                2.0 * alpha0 * d.hypot(self.kappa)
            }
        }
    }

    /// `α₀ = (Ω/2)/(δ + iκ)`.
    pub fn alpha0(&self) -> Complex64 {
        Complex64::new(self.pump() / 2.0, 0.0) / Complex64::new(self.detuning, self.kappa)
    }

    pub fn derive(&self) -> DerivedQuantities {
        let alpha0 = self.alpha0();
        DerivedQuantities {
            alpha0,
            pump: self.pump(),
            eta: alpha0.norm() * self.coupling / NU0,
            period: self.period(),
        }
    }
}
