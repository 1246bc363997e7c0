//! Adiabatic cooling theory: sideband weights, heating/cooling rates and the
//! stationary phonon number they imply.
//!
//! Detunings passed to the functions here are *red detunings* `Δ = -δ`, so the
//! main cooling resonance sits at `Δ = +ν₀`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bessel::bessel_j_orders;
use crate::model::{ModelConfig, Waveform, NU0};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("sideband truncation residual {residual:e} above tolerance {tolerance:e} (L = {truncation})")]
    Truncation { truncation: usize, residual: f64, tolerance: f64 },
    #[error("no cooling: A- = {a_minus:e} <= A+ = {a_plus:e}")]
    NoCooling { a_minus: f64, a_plus: f64 },
    #[error("instantaneous rates need a pure sinusoidal modulation")]
    NotSinusoidal,
}

/// Time-averaged sideband weights `⟨K_ℓ⟩` for `ℓ ∈ [-L, L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandWeights {
    truncation: usize,
    weights: Vec<f64>,
    residual: f64,
}

impl SidebandWeights {
    fn from_vec(truncation: usize, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), 2 * truncation + 1);
        let residual = 1.0 - weights.iter().sum::<f64>();
        Self { truncation, weights, residual }
    }

    /// Truncation order L.
    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// `1 - Σ_{|ℓ|≤L} ⟨K_ℓ⟩`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn get(&self, l: i64) -> f64 {
        let l_max = self.truncation as i64;
        if l.abs() > l_max {
            0.0
        } else {
            self.weights[(l + l_max) as usize]
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(ℓ, ⟨K_ℓ⟩)` from `-L` to `L`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let l_max = self.truncation as i64;
        self.weights.iter().enumerate().map(move |(i, &w)| (i as i64 - l_max, w))
    }
}

/// Controls for [`sideband_weights`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightOptions {
    /// Fixed truncation order; `None` picks the smallest L meeting `tolerance`.
    pub truncation: Option<usize>,
    pub tolerance: f64,
    /// Minimum number of quadrature nodes per period.
    pub min_nodes: usize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        Self { truncation: None, tolerance: 1e-10, min_nodes: 4096 }
    }
}

/// Fourier coefficients `G_ℓ`, `ℓ = -L..=L`, of the unit-modulus phase kernel
/// `g(τ) = exp[i F(τ/ω)]` with `F' = f`, by trapezoidal quadrature on `nodes`
/// equispaced points (one FFT).
fn kernel_coefficients(waveform: &Waveform, nodes: usize) -> Vec<Complex64> {
    let omega = waveform.frequency();
    let mut buf: Vec<Complex64> = (0..nodes)
        .map(|j| {
            let tau = 2.0 * PI * j as f64 / nodes as f64;
            Complex64::cis(waveform.antiderivative(tau / omega))
        })
        .collect();
    FftPlanner::new().plan_fft_forward(nodes).process(&mut buf);
    let scale = 1.0 / nodes as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

fn weights_from_fft(coeffs: &[Complex64], truncation: usize) -> Vec<f64> {
    let n = coeffs.len() as i64;
    let l = truncation as i64;
    (-l..=l).map(|k| coeffs[k.rem_euclid(n) as usize].norm_sqr()).collect()
}

/// `⟨K_ℓ⟩ = |(1/2π) ∫ e^{-iℓτ} exp[Σ_m c_m/(mω) e^{imτ}] dτ|²`.
///
/// The exponent is `i` times the zero-mean antiderivative of `f`, so the
/// kernel has unit modulus and the weights sum to one (Parseval).
pub fn sideband_weights(waveform: &Waveform, opts: WeightOptions) -> Result<SidebandWeights, RateError> {
    if waveform.is_zero() {
        let l = opts.truncation.unwrap_or(0);
        let mut w = vec![0.0; 2 * l + 1];
        w[l] = 1.0;
        return Ok(SidebandWeights::from_vec(l, w));
    }
    // Carson-style bandwidth estimate: modulation index plus harmonic content.
    let index: f64 = waveform.harmonics().map(|(m, c)| 2.0 * c.norm() / (m as f64 * waveform.frequency())).sum();
    let bandwidth = index.ceil() as usize + waveform.max_harmonic() as usize;
    let guess = opts.truncation.unwrap_or(0).max(bandwidth + 30);
    let mut nodes = opts.min_nodes.max(4 * guess).next_power_of_two();

    for _ in 0..6 {
        let coeffs = kernel_coefficients(waveform, nodes);
        let l_cap = nodes / 2 - 1;
        match opts.truncation {
            Some(l) if l <= l_cap => {
                return Ok(SidebandWeights::from_vec(l, weights_from_fft(&coeffs, l)));
            }
            Some(_) => {}
            None => {
                let mut total = coeffs[0].norm_sqr();
                for l in 0..=l_cap {
                    if l > 0 {
                        total += coeffs[l].norm_sqr() + coeffs[nodes - l].norm_sqr();
                    }
                    if 1.0 - total < opts.tolerance {
                        return Ok(SidebandWeights::from_vec(l, weights_from_fft(&coeffs, l)));
                    }
                }
            }
        }
        nodes *= 2;
    }
    let coeffs = kernel_coefficients(waveform, nodes / 2);
    let l = nodes / 4 - 1;
    let w = SidebandWeights::from_vec(l, weights_from_fft(&coeffs, l));
    Err(RateError::Truncation { truncation: l, residual: w.residual(), tolerance: opts.tolerance })
}

/// `⟨K_ℓ⟩ = J_ℓ(ν̂/ω)²` for `f(t) = ν̂ sin(ωt)`.
pub fn bessel_weights(amplitude: f64, frequency: f64, truncation: usize) -> SidebandWeights {
    let j = bessel_j_orders(truncation, amplitude / frequency);
    let l = truncation as i64;
    let w = (-l..=l).map(|k| j[k.unsigned_abs() as usize].powi(2)).collect();
    SidebandWeights::from_vec(truncation, w)
}

/// Truncation order that captures a sinusoidal modulation to ~1e-15.
pub fn sinusoidal_truncation(amplitude: f64, frequency: f64) -> usize {
    (amplitude / frequency).ceil() as usize + 25
}

/// One sideband's Lorentzian pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorentzian {
    pub sideband: i64,
    pub weight: f64,
    /// Red detuning where this term of `A₋` peaks: `ν₀ + ℓω`.
    pub center_minus: f64,
    /// Red detuning where this term of `A₊` peaks: `-(ν₀ + ℓω)`.
    pub center_plus: f64,
    pub minus: f64,
    pub plus: f64,
}

/// Cooling (`A₋`, anti-Stokes) and heating (`A₊`, Stokes) rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub a_minus: f64,
    pub a_plus: f64,
    pub lorentzians: Vec<Lorentzian>,
}

/// `A± = Σ_ℓ ⟨K_ℓ⟩ 2κχ₀²|α₀|² / ((δ ∓ [ν₀+ℓω])² + κ²)` at red detuning `Δ = -δ`.
///
/// |α₀| follows the configuration's drive normalization at `δ = -Δ`.
pub fn rates(cfg: &ModelConfig, weights: &SidebandWeights, red_detuning: f64) -> RateResult {
    let at = cfg.with_detuning(-red_detuning);
    let delta = at.detuning;
    let kappa = at.kappa;
    let g2 = (at.coupling * at.alpha0().norm()).powi(2);
    let omega = at.omega();
    let mut a_minus = 0.0;
    let mut a_plus = 0.0;
    let lorentzians = weights
        .iter()
        .map(|(l, w)| {
            let line = NU0 + l as f64 * omega;
            let minus = w * 2.0 * kappa * g2 / ((delta + line).powi(2) + kappa * kappa);
            let plus = w * 2.0 * kappa * g2 / ((delta - line).powi(2) + kappa * kappa);
            a_minus += minus;
            a_plus += plus;
            Lorentzian { sideband: l, weight: w, center_minus: line, center_plus: -line, minus, plus }
        })
        .collect();
    RateResult { a_minus, a_plus, lorentzians }
}

/// Rates before time averaging, `(A₋(t), A₊(t))`, for `f(t) = ν̂ sin(ωt)`.
///
/// Each sideband contributes `2χ₀²|α₀|² Re[K_ℓ(t)(κ + iD)]/(D² + κ²)` with
/// `K_ℓ(t) = e^{-i(ν̂/ω)cos ωt} e^{-iℓωt} i^ℓ J_ℓ(ν̂/ω)` (conjugated for `A₊`)
/// and `D = δ ± (ν₀+ℓω)`; the period average is exactly [`rates`].
pub fn instantaneous_rates(cfg: &ModelConfig, t: f64, red_detuning: f64) -> Result<(f64, f64), RateError> {
    let amplitude = cfg.waveform.as_sinusoid().ok_or(RateError::NotSinusoidal)?;
    let at = cfg.with_detuning(-red_detuning);
    let delta = at.detuning;
    let kappa = at.kappa;
    let omega = at.omega();
    let g2 = (at.coupling * at.alpha0().norm()).powi(2);
    let x = amplitude / omega;
    let truncation = sinusoidal_truncation(amplitude, omega);
    let j = bessel_j_orders(truncation, x);
    let carrier = Complex64::cis(-x * (omega * t).cos());

    let mut a_minus = 0.0;
    let mut a_plus = 0.0;
    let l_max = truncation as i64;
    for l in -l_max..=l_max {
        let jl = if l < 0 && l % 2 != 0 { -j[l.unsigned_abs() as usize] } else { j[l.unsigned_abs() as usize] };
        let i_pow = Complex64::i().powi(l.rem_euclid(4) as i32);
        let k = carrier * Complex64::cis(-(l as f64) * omega * t) * i_pow * jl;
        let line = NU0 + l as f64 * omega;
        let d_minus = delta + line;
        let d_plus = delta - line;
        a_minus += 2.0 * g2 * (k * Complex64::new(kappa, d_minus)).re / (d_minus * d_minus + kappa * kappa);
        a_plus += 2.0 * g2 * (k.conj() * Complex64::new(kappa, d_plus)).re / (d_plus * d_plus + kappa * kappa);
    }
    Ok((a_minus, a_plus))
}

/// `⟨m⟩ = A₊/(A₋ - A₊)`.
pub fn steady_occupation(rates: &RateResult) -> Result<f64, RateError> {
    if rates.a_minus > rates.a_plus {
        Ok(rates.a_plus / (rates.a_minus - rates.a_plus))
    } else {
        Err(RateError::NoCooling { a_minus: rates.a_minus, a_plus: rates.a_plus })
    }
}

/// Stationary phonon distribution `p_m = (1-q) q^m`, `q = A₊/A₋`, truncated
/// at `m_max` and renormalized.
pub fn geometric_distribution(rates: &RateResult, m_max: usize) -> Result<Vec<f64>, RateError> {
    steady_occupation(rates)?;
    let q = rates.a_plus / rates.a_minus;
    let mut p: Vec<f64> = std::iter::successors(Some(1.0 - q), |v| Some(v * q)).take(m_max + 1).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// `Γ = A₋ - A₊`; negative means net heating.
pub fn cooling_rate(rates: &RateResult) -> f64 {
    rates.a_minus - rates.a_plus
}

/// Occupation after mixing with a bath of occupation `nbar` at rate `gamma`:
/// `(⟨m⟩Γ + m̄γ)/(Γ + γ)`.
pub fn bath_corrected(occupation: f64, cooling_rate: f64, gamma: f64, nbar: f64) -> Result<f64, RateError> {
    if cooling_rate <= 0.0 {
        return Err(RateError::NoCooling { a_minus: f64::NAN, a_plus: f64::NAN });
    }
    Ok((occupation * cooling_rate + nbar * gamma) / (cooling_rate + gamma))
}

/// Everything the adiabatic theory predicts at one detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingPrediction {
    pub red_detuning: f64,
    pub a_minus: f64,
    pub a_plus: f64,
    /// `None` when `A₋ ≤ A₊`.
    pub mean_occupation: Option<f64>,
    pub cooling_rate: f64,
    /// Bath-corrected occupation using the mean damping γ₀.
    pub bath_corrected: Option<f64>,
    pub cooling: bool,
}

pub fn predict(cfg: &ModelConfig, weights: &SidebandWeights, red_detuning: f64) -> CoolingPrediction {
    let r = rates(cfg, weights, red_detuning);
    let mean_occupation = steady_occupation(&r).ok();
    let gamma_cool = cooling_rate(&r);
    let bath = mean_occupation.and_then(|m| bath_corrected(m, gamma_cool, cfg.gamma0, cfg.nbar).ok());
    CoolingPrediction {
        red_detuning,
        a_minus: r.a_minus,
        a_plus: r.a_plus,
        mean_occupation,
        cooling_rate: gamma_cool,
        bath_corrected: bath,
        cooling: r.a_minus > r.a_plus,
    }
}

/// `max_t (⟨m⟩+1)|ν̇(t)|/(4ν(t)²)` over one modulation period.
pub fn adiabaticity_metric(cfg: &ModelConfig, occupation: f64) -> f64 {
    if cfg.waveform.is_zero() {
        return 0.0;
    }
    let n = cfg.waveform.dense_samples();
    let period = cfg.period();
    (0..n)
        .map(|k| {
            let t = period * k as f64 / n as f64;
            let nu = cfg.frequency_at(t);
            (occupation + 1.0) * cfg.frequency_rate_at(t).abs() / (4.0 * nu * nu)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Drive;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Literal kernel `exp[Σ_{m≠0} c_m/(mω) e^{imτ}]`, coefficients by a plain
    /// O(N·L) quadrature sum (no FFT, no antiderivative helper).
    fn literal_weights(w: &Waveform, l_max: i64, nodes: usize) -> Vec<f64> {
        let omega = w.frequency();
        let m_max = w.max_harmonic() as i64;
        let kernel: Vec<Complex64> = (0..nodes)
            .map(|j| {
                let tau = 2.0 * PI * j as f64 / nodes as f64;
                let mut e = Complex64::new(0.0, 0.0);
                for m in (-m_max..=m_max).filter(|&m| m != 0) {
                    e += w.coefficient(m) / (m as f64 * omega) * Complex64::cis(m as f64 * tau);
                }
                e.exp()
            })
            .collect();
        (-l_max..=l_max)
            .map(|l| {
                let s: Complex64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, g)| g * Complex64::cis(-(l as f64) * 2.0 * PI * j as f64 / nodes as f64))
                    .sum();
                (s / nodes as f64).norm_sqr()
            })
            .collect()
    }

    #[test]
    fn zero_modulation_has_single_central_weight() {
        let w = sideband_weights(&Waveform::zero(0.5).unwrap(), WeightOptions::default()).unwrap();
        assert_eq!(w.get(0), 1.0);
        assert_eq!(w.get(1), 0.0);
        assert_eq!(w.get(-3), 0.0);
    }

    #[test]
    fn sinusoid_weights_are_squared_bessel() {
        let wf = Waveform::sinusoidal(0.2, 0.5).unwrap();
        let w = sideband_weights(&wf, WeightOptions::default()).unwrap();
        let b = bessel_weights(0.2, 0.5, 12);
        for l in -12..=12 {
            assert!(close(w.get(l), b.get(l), 1e-10), "l={l}");
        }
    }

    #[test]
    fn fft_route_matches_literal_kernel() {
        // Asymmetric multi-harmonic pulse: checks the sign convention as well.
        let wf = Waveform::new(
            0.4,
            [(1, Complex64::new(0.05, -0.1)), (2, Complex64::new(-0.03, 0.02)), (3, Complex64::new(0.0, 0.04))],
        )
        .unwrap();
        let w = sideband_weights(&wf, WeightOptions { truncation: Some(10), ..Default::default() }).unwrap();
        let lit = literal_weights(&wf, 10, 2048);
        for (k, l) in (-10..=10).enumerate() {
            assert!(close(w.get(l), lit[k], 1e-12), "l={l}: {} vs {}", w.get(l), lit[k]);
        }
    }

    #[test]
    fn adaptive_truncation_meets_tolerance() {
        for wf in [
            Waveform::sinusoidal(0.2, 0.05).unwrap(),
            Waveform::rectangular(0.5, 1.0 / 6.0, 10).unwrap(),
        ] {
            let w = sideband_weights(&wf, WeightOptions::default()).unwrap();
            assert!(w.residual() < 1e-10);
            assert!(w.residual() > -1e-9);
            assert!(w.iter().all(|(_, v)| v >= 0.0));
            // Smallest L: dropping the outermost pair breaks the tolerance.
            let l = w.truncation() as i64;
            let inner: f64 = w.iter().filter(|(k, _)| k.abs() < l).map(|(_, v)| v).sum();
            assert!(1.0 - inner >= 1e-10 || l == 0);
        }
    }

    #[test]
    fn fixed_truncation_reports_residual() {
        let wf = Waveform::sinusoidal(2.0, 0.5).unwrap();
        let w = sideband_weights(&wf, WeightOptions { truncation: Some(2), ..Default::default() }).unwrap();
        assert_eq!(w.truncation(), 2);
        assert!(w.residual() > 1e-3);
    }

    #[test]
    fn bessel_weight_examples() {
        let w = bessel_weights(0.0, 0.5, 5);
        assert_eq!(w.get(0), 1.0);
        assert!(w.iter().filter(|(l, _)| *l != 0).all(|(_, v)| v == 0.0));

        // J₀(0.4)² from a 4096-node quadrature of the literal kernel.
        let wf = Waveform::sinusoidal(0.2, 0.5).unwrap();
        let lit = literal_weights(&wf, 0, 4096);
        let w = bessel_weights(0.2, 0.5, 12);
        assert!(close(w.get(0), lit[0], 1e-14));
        assert!(close(w.get(0), 0.960_398_226_659_563_f64.powi(2), 1e-14));
        for l in 1..=12 {
            assert_eq!(w.get(l), w.get(-l));
        }
    }

    fn unmodulated(kappa: f64, g: f64) -> ModelConfig {
        ModelConfig::unmodulated(kappa, -1.0, 0.01, g / 0.01)
    }

    #[test]
    fn unmodulated_rates_at_resonance() {
        let cfg = unmodulated(0.05, 0.01);
        let w = sideband_weights(&cfg.waveform, WeightOptions::default()).unwrap();
        let r = rates(&cfg, &w, 1.0);
        let g2: f64 = 0.01 * 0.01;
        assert!(close(r.a_minus, 2.0 * g2 / 0.05, 1e-15));
        assert!(close(r.a_plus, 2.0 * 0.05 * g2 / (4.0 + 0.05 * 0.05), 1e-18));
        let sum_m: f64 = r.lorentzians.iter().map(|l| l.minus).sum();
        assert!(close(sum_m, r.a_minus, 1e-12 * r.a_minus));
    }

    #[test]
    fn zero_coupling_or_drive_gives_zero_rates() {
        let mut cfg = unmodulated(0.05, 0.01);
        cfg.coupling = 0.0;
        let w = bessel_weights(0.0, 1.0, 3);
        let r = rates(&cfg, &w, 1.0);
        assert_eq!((r.a_minus, r.a_plus), (0.0, 0.0));
        let mut cfg = unmodulated(0.05, 0.01);
        cfg.drive = Drive::Pump(0.0);
        let r = rates(&cfg, &w, 1.0);
        assert_eq!((r.a_minus, r.a_plus), (0.0, 0.0));
    }

    #[test]
    fn sidebands_create_local_maxima() {
        let mut cfg = unmodulated(0.05, 0.01);
        cfg.waveform = Waveform::sinusoidal(0.2, 0.5).unwrap();
        let w = bessel_weights(0.2, 0.5, 30);
        let grid: Vec<f64> = (0..=400).map(|k| -0.5 + 0.0075 * k as f64 + 0.5).collect();
        let a: Vec<f64> = grid.iter().map(|&d| rates(&cfg, &w, d).a_minus).collect();
        for center in [0.5, 1.0, 1.5] {
            let i = grid.iter().enumerate().min_by(|x, y| (x.1 - center).abs().total_cmp(&(y.1 - center).abs())).unwrap().0;
            assert!(a[i] > a[i - 1] && a[i] > a[i + 1], "no maximum near {center}");
        }
    }

    #[test]
    fn instantaneous_rates_average_to_time_averaged_rates() {
        let mut cfg = unmodulated(0.05, 0.01);
        cfg.waveform = Waveform::sinusoidal(0.2, 0.5).unwrap();
        let w = bessel_weights(0.2, 0.5, 40);
        let n = 512;
        for delta in [0.5, 0.9, 1.0, 1.25, 1.5] {
            let period = cfg.period();
            let (mut am, mut ap) = (0.0, 0.0);
            for k in 0..n {
                let (m, p) = instantaneous_rates(&cfg, period * k as f64 / n as f64, delta).unwrap();
                am += m / n as f64;
                ap += p / n as f64;
            }
            let r = rates(&cfg, &w, delta);
            assert!(close(am, r.a_minus, 1e-6 * r.a_minus), "Δ={delta}: {am} vs {}", r.a_minus);
            assert!(close(ap, r.a_plus, 1e-6 * r.a_plus));
        }
    }

    #[test]
    fn instantaneous_rates_unmodulated_are_constant_and_can_go_negative_when_modulated() {
        let mut cfg = unmodulated(0.05, 0.01);
        cfg.waveform = Waveform::sinusoidal(0.0, 0.5).unwrap();
        let w = bessel_weights(0.0, 0.5, 0);
        let r = rates(&cfg, &w, 1.0);
        for k in 0..10 {
            let (m, p) = instantaneous_rates(&cfg, 1.3 * k as f64, 1.0).unwrap();
            assert!(close(m, r.a_minus, 1e-15) && close(p, r.a_plus, 1e-18));
        }

        cfg.waveform = Waveform::sinusoidal(0.2, 0.5).unwrap();
        let mut found = false;
        for i in 0..200 {
            let delta = 0.3 + 0.007 * i as f64;
            for k in 0..64 {
                let (m, _) = instantaneous_rates(&cfg, cfg.period() * k as f64 / 64.0, delta).unwrap();
                found |= m < 0.0;
            }
        }
        assert!(found);

        cfg.waveform = Waveform::rectangular(0.2, 0.5, 3).unwrap();
        assert_eq!(instantaneous_rates(&cfg, 0.0, 1.0), Err(RateError::NotSinusoidal));
    }

    #[test]
    fn occupation_formulas() {
        let r = |am: f64, ap: f64| RateResult { a_minus: am, a_plus: ap, lorentzians: vec![] };
        assert_eq!(steady_occupation(&r(1.0, 0.0)).unwrap(), 0.0);
        assert_eq!(steady_occupation(&r(1.0, 0.5)).unwrap(), 1.0);
        assert!(matches!(steady_occupation(&r(1.0, 1.0)), Err(RateError::NoCooling { .. })));
        assert_eq!(cooling_rate(&r(2.0, 2.0)), 0.0);

        let p = geometric_distribution(&r(1.0, 0.0), 10).unwrap();
        assert_eq!(p[0], 1.0);
        let p = geometric_distribution(&r(1.0, 0.5), 200).unwrap();
        for (m, v) in p.iter().enumerate().take(40) {
            assert!(close(*v, 0.5f64.powi(m as i32 + 1), 1e-15));
        }
        for q in [0.3, 0.5, 0.9] {
            let rr = r(1.0, q);
            let m_max = (200.0 * q / (1.0 - q)).ceil() as usize;
            let p = geometric_distribution(&rr, m_max).unwrap();
            let mean: f64 = p.iter().enumerate().map(|(m, v)| m as f64 * v).sum();
            assert!(close(mean, steady_occupation(&rr).unwrap(), 1e-8), "q={q}");
        }
    }

    #[test]
    fn bath_mixing() {
        assert_eq!(bath_corrected(0.3, 0.01, 0.0, 10.0).unwrap(), 0.3);
        assert!(close(bath_corrected(0.0, 1e-3, 1e-3, 10.0).unwrap(), 5.0, 1e-12));
        assert!(close(bath_corrected(0.0, 1e-15, 1e-3, 10.0).unwrap(), 10.0, 1e-9));
        assert!(bath_corrected(0.0, 0.0, 1e-3, 10.0).is_err());
    }

    #[test]
    fn resolved_sideband_floor() {
        // Exact ratio of the two Lorentzians at δ = -ν₀.
        let kappa = 0.05;
        let cfg = unmodulated(kappa, 0.01);
        let w = bessel_weights(0.0, 1.0, 0);
        let m = steady_occupation(&rates(&cfg, &w, 1.0)).unwrap();
        let a_m = 1.0 / (kappa * kappa);
        let a_p = 1.0 / (4.0 + kappa * kappa);
        assert!(close(m, a_p / (a_m - a_p), 1e-15));
        assert!(close(m, kappa * kappa / 4.0, 1e-6));
    }

    #[test]
    fn cooling_rate_scales_with_drive() {
        let cfg = unmodulated(0.05, 0.01);
        let w = bessel_weights(0.0, 1.0, 0);
        let g1 = cooling_rate(&rates(&cfg, &w, 1.0));
        let expected = 2.0 * 0.05 * 1e-4 * (1.0 / 0.0025 - 1.0 / (4.0 + 0.0025));
        assert!(close(g1, expected, 1e-15));
        let cfg2 = unmodulated(0.05, 0.02);
        let g2 = cooling_rate(&rates(&cfg2, &w, 1.0));
        assert!(close(g2, 4.0 * g1, 1e-14));
    }

    #[test]
    fn adiabaticity() {
        let mut cfg = unmodulated(0.05, 0.01);
        assert_eq!(adiabaticity_metric(&cfg, 0.0), 0.0);
        cfg.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        // Dense independent maximization on a finer grid.
        let mut best: f64 = 0.0;
        for k in 0..200_000 {
            let t = cfg.period() * k as f64 / 200_000.0;
            let nu = 1.0 + 0.1 * (0.5 * t).sin();
            best = best.max(0.05 * (0.5 * t).cos().abs() / (4.0 * nu * nu));
        }
        let metric = adiabaticity_metric(&cfg, 0.0);
        assert!(close(metric, best, 1e-6));
        assert!(metric < 0.05);
    }
}
