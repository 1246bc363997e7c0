//! Full runs: mean-field orbit, covariance relaxation to the quasi-stationary
//! regime, exponential fits, and the analytic prediction alongside.

use nalgebra::Matrix4;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{fit_exponential, ExponentialFit};
use crate::gaussian::{
    asymmetry, min_physical_eigenvalue, monodromy_stability, phonon_number, propagate, thermal_initial_state,
    CovariancePeriodMap, GaussianError, GaussianState, PropagateOptions,
};
use crate::meanfield::{
    find_periodic_orbit, integrate_mean_field, MeanFieldError, MeanFieldOptions, MeanFieldState, Stability,
};
use crate::model::{ConfigError, ModelConfig, Waveform, NU0};
use crate::ode::Tolerances;
use crate::rates::{adiabaticity_metric, predict, sideband_weights, RateError, SidebandWeights, WeightOptions};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Rates(#[from] RateError),
    #[error("axis `{name}`: {reason}")]
    Axis { name: &'static str, reason: &'static str },
}

/// Inclusive, evenly spaced axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(start: f64, stop: f64, steps: usize) -> Self {
        Self { start, stop, steps }
    }

    pub fn single(value: f64) -> Self {
        Self { start: value, stop: value, steps: 1 }
    }

    pub fn validate(&self, name: &'static str) -> Result<(), ExperimentError> {
        if self.steps == 0 {
            return Err(ExperimentError::Axis { name, reason: "steps must be at least 1" });
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(ExperimentError::Axis { name, reason: "bounds must be finite" });
        }
        if self.steps > 1 && self.start == self.stop {
            return Err(ExperimentError::Axis { name, reason: "empty range with more than one step" });
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.start];
        }
        let h = (self.stop - self.start) / (self.steps - 1) as f64;
        (0..self.steps).map(|k| if k + 1 == self.steps { self.stop } else { self.start + h * k as f64 }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    #[default]
    Both,
    AnalyticOnly,
    NumericOnly,
}

impl OutputMode {
    pub fn analytic(self) -> bool {
        self != OutputMode::NumericOnly
    }

    pub fn numeric(self) -> bool {
        self != OutputMode::AnalyticOnly
    }
}

/// Numerical controls of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunControls {
    pub mean_field_rel_tol: f64,
    pub mean_field_abs_tol: f64,
    pub orbit_tol: f64,
    pub mean_field_periods: usize,
    pub divergence_threshold: f64,
    pub initial_alpha: [f64; 2],
    pub initial_beta: [f64; 2],
    pub covariance_rel_tol: f64,
    pub covariance_abs_tol: f64,
    /// Relative period-to-period change of the averaged `⟨m⟩` that counts as
    /// quasi-stationary.
    pub quasi_tol: f64,
    pub quasi_consecutive: usize,
    pub max_periods: usize,
    /// Intra-period nodes at which physicality is checked.
    pub nodes: usize,
    pub physicality_tol: f64,
    pub fit: bool,
}

impl Default for RunControls {
    fn default() -> Self {
        let mf = MeanFieldOptions::default();
        Self {
            mean_field_rel_tol: mf.tol.rel,
            mean_field_abs_tol: mf.tol.abs,
            orbit_tol: mf.orbit_tol,
            mean_field_periods: mf.max_periods,
            divergence_threshold: mf.divergence_threshold,
            initial_alpha: [0.0, 0.0],
            initial_beta: [0.0, 0.0],
            covariance_rel_tol: 1e-10,
            covariance_abs_tol: 1e-13,
            quasi_tol: 1e-6,
            quasi_consecutive: 3,
            max_periods: 200_000,
            nodes: 16,
            physicality_tol: 1e-6,
            fit: true,
        }
    }
}

impl RunControls {
    pub fn mean_field_options(&self) -> MeanFieldOptions {
        MeanFieldOptions {
            tol: Tolerances::new(self.mean_field_rel_tol, self.mean_field_abs_tol),
            divergence_threshold: self.divergence_threshold,
            orbit_tol: self.orbit_tol,
            max_periods: self.mean_field_periods,
            initial: (
                Complex64::new(self.initial_alpha[0], self.initial_alpha[1]),
                Complex64::new(self.initial_beta[0], self.initial_beta[1]),
            ),
            ..MeanFieldOptions::default()
        }
    }

    pub fn covariance_tol(&self) -> Tolerances {
        Tolerances::new(self.covariance_rel_tol, self.covariance_abs_tol)
    }
}

/// Outcome of one parameter point. Runs that are not stable carry no
/// numerical occupation or fit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub red_detuning: f64,
    pub omega: f64,
    pub gamma0: f64,
    pub gamma_hat: f64,
    pub eta: f64,
    /// `None` when only the analytic theory was evaluated.
    pub stability: Option<Stability>,
    pub mean_field: Option<Stability>,
    pub diverged_at: Option<f64>,
    /// Largest Floquet multiplier modulus of the mean-field orbit.
    pub monodromy_radius: Option<f64>,
    /// Spectral radius of the covariance period map.
    pub covariance_radius: Option<f64>,
    /// Covariance periods propagated.
    pub periods: Option<usize>,
    /// Time-averaged `⟨m⟩` over the final period.
    pub mean_occupation: Option<f64>,
    pub fit_rate: Option<f64>,
    pub fit_asymptote: Option<f64>,
    pub fit_residual: Option<f64>,
    pub a_minus: Option<f64>,
    pub a_plus: Option<f64>,
    pub analytic_occupation: Option<f64>,
    pub analytic_rate: Option<f64>,
    pub analytic_bath_corrected: Option<f64>,
    pub adiabaticity: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub max_asymmetry: Option<f64>,
    pub failure: Option<String>,
}

impl RunRecord {
    fn blank(cfg: &ModelConfig, red_detuning: f64) -> Self {
        Self {
            red_detuning,
            omega: cfg.omega(),
            gamma0: cfg.gamma0,
            gamma_hat: cfg.gamma_hat,
            eta: cfg.derive().eta,
            stability: None,
            mean_field: None,
            diverged_at: None,
            monodromy_radius: None,
            covariance_radius: None,
            periods: None,
            mean_occupation: None,
            fit_rate: None,
            fit_asymptote: None,
            fit_residual: None,
            a_minus: None,
            a_plus: None,
            analytic_occupation: None,
            analytic_rate: None,
            analytic_bath_corrected: None,
            adiabaticity: None,
            min_eigenvalue: None,
            max_asymmetry: None,
            failure: None,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.stability == Some(Stability::Stable)
    }

    /// The occupation the run is judged by: numeric if available, else the
    /// analytic prediction (bath-corrected when there is a bath).
    pub fn figure_of_merit(&self) -> Option<f64> {
        match self.stability {
            Some(Stability::Stable) => self.mean_occupation,
            Some(_) => None,
            None => {
                if self.gamma0 > 0.0 {
                    self.analytic_bath_corrected
                } else {
                    self.analytic_occupation
                }
            }
        }
    }
}

/// Period-averaged phonon numbers of a run, one per modulation period.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub period: f64,
    pub averages: Vec<f64>,
}

impl RunHistory {
    /// Midpoints of the averaging periods.
    pub fn times(&self) -> Vec<f64> {
        (0..self.averages.len()).map(|k| (k as f64 + 0.5) * self.period).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub history: Option<RunHistory>,
}

/// Runs parameter points that share a waveform.
#[derive(Debug, Clone)]
pub struct Runner {
    pub model: ModelConfig,
    pub weights: SidebandWeights,
    pub controls: RunControls,
    pub mode: OutputMode,
}

impl Runner {
    pub fn new(model: ModelConfig, controls: RunControls, mode: OutputMode) -> Result<Self, ExperimentError> {
        model.validate()?;
        let weights = sideband_weights(&model.waveform, WeightOptions::default())?;
        Ok(Self { model, weights, controls, mode })
    }

    pub fn run(&self, red_detuning: f64) -> RunRecord {
        self.run_with_history(red_detuning).record
    }

    /// Run at red detuning `Δ` (laser detuning `δ = -Δ`).
    pub fn run_with_history(&self, red_detuning: f64) -> RunOutput {
        let cfg = self.model.with_detuning(-red_detuning);
        let mut record = RunRecord::blank(&cfg, red_detuning);
        if self.mode.analytic() {
            let p = predict(&cfg, &self.weights, red_detuning);
            record.a_minus = Some(p.a_minus);
            record.a_plus = Some(p.a_plus);
            record.analytic_occupation = p.mean_occupation;
            record.analytic_rate = Some(p.cooling_rate);
            record.analytic_bath_corrected = p.bath_corrected;
        }
        let mut history = None;
        if self.mode.numeric() {
            match numeric_run(&cfg, &self.controls, &mut record) {
                Ok(h) => history = h,
                Err(e) => {
                    record.stability = Some(Stability::Undetermined);
                    record.mean_occupation = None;
                    record.failure = Some(e.to_string());
                }
            }
        }
        let estimate = record.mean_occupation.or(record.analytic_occupation).unwrap_or(cfg.initial_occupation());
        record.adiabaticity = Some(adiabaticity_metric(&cfg, estimate));
        RunOutput { record, history }
    }
}

/// One run at red detuning `Δ` with default weights options.
pub fn run_single(
    cfg: &ModelConfig,
    red_detuning: f64,
    controls: &RunControls,
    mode: OutputMode,
) -> Result<RunOutput, ExperimentError> {
    Ok(Runner::new(cfg.clone(), *controls, mode)?.run_with_history(red_detuning))
}

fn numeric_run(
    cfg: &ModelConfig,
    controls: &RunControls,
    record: &mut RunRecord,
) -> Result<Option<RunHistory>, ExperimentError> {
    let orbit = find_periodic_orbit(cfg, &controls.mean_field_options())?;
    record.mean_field = Some(orbit.stability);
    record.diverged_at = orbit.diverged_at;
    if orbit.periodic {
        record.monodromy_radius = Some(monodromy_stability(cfg, &orbit)?.spectral_radius());
    }
    if !orbit.is_stable() {
        record.stability = Some(orbit.stability);
        return Ok(None);
    }

    let map = CovariancePeriodMap::build(cfg, &orbit, controls.covariance_tol(), controls.nodes)?;
    let radius = map.spectral_radius();
    record.covariance_radius = Some(radius);
    if radius >= 1.0 {
        record.stability = Some(Stability::Unstable);
        return Ok(None);
    }

    let mut c: Matrix4<f64> = thermal_initial_state(cfg.initial_occupation()).c;
    let mut averages: Vec<f64> = Vec::new();
    let mut streak = 0;
    let mut min_eig = f64::INFINITY;
    let mut max_asym: f64 = 0.0;
    let mut converged = false;
    for n in 0..controls.max_periods {
        for (t, raw) in map.node_states(&c) {
            max_asym = max_asym.max(asymmetry(&raw));
            let e = min_physical_eigenvalue(&(0.5 * (raw + raw.transpose())));
            min_eig = min_eig.min(e);
            if e < -controls.physicality_tol {
                record.min_eigenvalue = Some(min_eig);
                return Err(GaussianError::PhysicalityViolation { t: n as f64 * map.period + t, min_eigenvalue: e }.into());
            }
        }
        let m = map.mean_occupation(&c);
        if let Some(&prev) = averages.last() {
            let change = (m - prev).abs();
            if change <= controls.quasi_tol * m.abs() || change == 0.0 {
                streak += 1;
            } else {
                streak = 0;
            }
        }
        averages.push(m);
        if !m.is_finite() || c.amax() > 1e12 {
            record.stability = Some(Stability::Unstable);
            return Ok(None);
        }
        if streak >= controls.quasi_consecutive {
            converged = true;
            break;
        }
        c = map.step(&c);
    }
    record.periods = Some(averages.len());
    record.min_eigenvalue = Some(min_eig);
    record.max_asymmetry = Some(max_asym);
    let history = RunHistory { period: map.period, averages };
    if !converged {
        record.stability = Some(Stability::Undetermined);
        return Ok(Some(history));
    }
    record.stability = Some(Stability::Stable);
    record.mean_occupation = history.averages.last().copied();
    if controls.fit {
        if let Ok(f) = fit_history(&history) {
            record.fit_rate = Some(f.rate);
            record.fit_asymptote = Some(f.asymptote);
            record.fit_residual = Some(f.residual);
        }
    }
    Ok(Some(history))
}

/// Exponential fit to the period averages of a run.
pub fn fit_history(history: &RunHistory) -> Result<ExponentialFit, crate::fit::FitError> {
    fit_exponential(&history.times(), &history.averages)
}

/// Analytic rate spectrum at one red detuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub red_detuning: f64,
    pub a_minus: f64,
    pub a_plus: f64,
    pub occupation: Option<f64>,
    pub cooling_rate: f64,
    pub bath_corrected: Option<f64>,
}

pub fn rate_spectrum(cfg: &ModelConfig, weights: &SidebandWeights, axis: &Axis) -> Vec<SpectrumRow> {
    axis.values()
        .into_iter()
        .map(|d| {
            let p = predict(cfg, weights, d);
            SpectrumRow {
                red_detuning: d,
                a_minus: p.a_minus,
                a_plus: p.a_plus,
                occupation: p.mean_occupation,
                cooling_rate: p.cooling_rate,
                bath_corrected: p.bath_corrected,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub model: ModelConfig,
    /// Red detuning `Δ = -δ`.
    pub detuning: Axis,
    pub controls: RunControls,
    pub mode: OutputMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub records: Vec<RunRecord>,
    pub spectrum: Vec<SpectrumRow>,
}

/// Detuning scan. Points run in parallel; results keep the axis order.
pub fn scan_detuning(spec: &ScanSpec) -> Result<ScanResult, ExperimentError> {
    spec.detuning.validate("detuning")?;
    let runner = Runner::new(spec.model.clone(), spec.controls, spec.mode)?;
    let records = spec.detuning.values().par_iter().map(|&d| runner.run(d)).collect();
    let spectrum = rate_spectrum(&spec.model, &runner.weights, &spec.detuning);
    Ok(ScanResult { records, spectrum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub model: ModelConfig,
    pub omega: Axis,
    pub gamma0: Axis,
    /// `γ̂ = ratio · γ₀` in every cell; `None` keeps the model's `γ̂`.
    pub gamma_hat_ratio: Option<f64>,
    /// Inner detuning window in units of `ν₀ + 2η²`.
    pub window: [f64; 2],
    pub coarse_points: usize,
    pub refine_iterations: usize,
    pub controls: RunControls,
    pub mode: OutputMode,
}

/// One cell of an (ω, γ₀) grid: the best record over the inner detuning
/// optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub omega: f64,
    pub gamma0: f64,
    pub best: RunRecord,
    pub evaluated: usize,
    pub stable_points: usize,
}

impl GridCell {
    pub fn is_stable(&self) -> bool {
        self.best.figure_of_merit().is_some()
    }
}

pub fn cell_model(base: &ModelConfig, omega: f64, gamma0: f64, gamma_hat_ratio: Option<f64>) -> Result<ModelConfig, ConfigError> {
    let waveform = Waveform::new(omega, base.waveform.harmonics().map(|(m, c)| (m as i64, c)))?;
    let mut cfg = ModelConfig { waveform, gamma0, ..base.clone() };
    if let Some(r) = gamma_hat_ratio {
        cfg.gamma_hat = r * gamma0;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Minimize the figure of merit over red detuning: a coarse grid, then
/// golden-section refinement around the best stable coarse point.
pub fn optimize_detuning(runner: &Runner, lo: f64, hi: f64, coarse: usize, refine: usize) -> (RunRecord, usize, usize) {
    let mut evaluated = 0;
    let mut stable = 0;
    let mut eval = |d: f64| {
        let r = runner.run(d);
        evaluated += 1;
        if r.figure_of_merit().is_some() {
            stable += 1;
        }
        r
    };
    let merit = |r: &RunRecord| r.figure_of_merit().unwrap_or(f64::INFINITY);
    let grid = Axis::new(lo, hi, coarse.max(2)).values();
    let records: Vec<RunRecord> = grid.iter().map(|&d| eval(d)).collect();
    let Some(best_k) = (0..records.len())
        .filter(|&k| merit(&records[k]).is_finite())
        .min_by(|&a, &b| merit(&records[a]).total_cmp(&merit(&records[b])))
    else {
        let mid = records[records.len() / 2].clone();
        return (mid, evaluated, stable);
    };
    let mut best = records[best_k].clone();

    let mut a = grid[best_k.saturating_sub(1)];
    let mut b = grid[(best_k + 1).min(grid.len() - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut r1 = eval(x1);
    let mut r2 = eval(x2);
    for _ in 0..refine {
        if merit(&r1) <= merit(&r2) {
            b = x2;
            x2 = x1;
            r2 = r1;
            x1 = b - inv_phi * (b - a);
            r1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            r1 = r2;
            x2 = a + inv_phi * (b - a);
            r2 = eval(x2);
        }
    }
    for r in [r1, r2] {
        if merit(&r) < merit(&best) {
            best = r;
        }
    }
    (best, evaluated, stable)
}

/// (ω, γ₀) map with the detuning optimized per cell. Cells run in
/// parallel; the result is row-major in (ω, γ₀).
pub fn grid_omega_gamma(spec: &GridSpec) -> Result<Vec<GridCell>, ExperimentError> {
    spec.omega.validate("omega")?;
    spec.gamma0.validate("gamma0")?;
    if !(spec.window[0] > 0.0 && spec.window[1] > spec.window[0]) {
        return Err(ExperimentError::Axis { name: "window", reason: "need 0 < lo < hi" });
    }
    let cells: Vec<(f64, f64)> =
        spec.omega.values().into_iter().flat_map(|w| spec.gamma0.values().into_iter().map(move |g| (w, g))).collect();
    let models: Vec<ModelConfig> = cells
        .iter()
        .map(|&(w, g)| cell_model(&spec.model, w, g, spec.gamma_hat_ratio))
        .collect::<Result<_, _>>()?;
    cells
        .par_iter()
        .zip(models.into_par_iter())
        .map(|(&(omega, gamma0), model)| {
            let eta = model.derive().eta;
            let center = NU0 + 2.0 * eta * eta;
            let runner = Runner::new(model, spec.controls, spec.mode)?;
            let (best, evaluated, stable_points) = optimize_detuning(
                &runner,
                spec.window[0] * center,
                spec.window[1] * center,
                spec.coarse_points,
                spec.refine_iterations,
            );
            Ok(GridCell { omega, gamma0, best, evaluated, stable_points })
        })
        .collect()
}

/// Time series of one run at fixed detuning.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub mean_field: Vec<MeanFieldState>,
    pub mean_field_diverged_at: Option<f64>,
    /// Covariance along the periodic orbit; `None` if the orbit is not stable.
    pub covariance: Option<Vec<GaussianState>>,
}

/// Mean-field trajectory from the configured initial condition, and the
/// covariance from the thermal state along the periodic orbit, both sampled
/// `samples_per_period` times per period over `periods` periods.
pub fn evolve(
    cfg: &ModelConfig,
    red_detuning: f64,
    controls: &RunControls,
    periods: usize,
    samples_per_period: usize,
) -> Result<Evolution, ExperimentError> {
    let cfg = cfg.with_detuning(-red_detuning);
    cfg.validate()?;
    let opts = controls.mean_field_options();
    let t_end = periods as f64 * cfg.period();
    let n = periods * samples_per_period;
    let times: Vec<f64> = (0..=n).map(|k| t_end * k as f64 / n as f64).collect();
    let start = MeanFieldState { t: 0.0, alpha: opts.initial.0, beta: opts.initial.1 };
    let traj = integrate_mean_field(&cfg, &start, t_end, &times, &opts)?;
    let orbit = find_periodic_orbit(&cfg, &opts)?;
    let covariance = if orbit.is_stable() {
        let popts = PropagateOptions {
            tol: controls.covariance_tol(),
            physicality_tol: controls.physicality_tol,
            ..PropagateOptions::default()
        };
        Some(propagate(&cfg, &orbit, &thermal_initial_state(cfg.initial_occupation()), t_end, &times, &popts)?.samples)
    } else {
        None
    };
    Ok(Evolution { mean_field: traj.samples, mean_field_diverged_at: traj.diverged_at, covariance })
}

/// `⟨m⟩` of a covariance sample.
pub fn occupation(state: &GaussianState) -> f64 {
    phonon_number(&state.c)
}
