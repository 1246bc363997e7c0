//! Exponential relaxation fits `m(t) = m∞ + (m₀ - m∞) e^{-Γt}`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("data contain non-finite values")]
    NonFinite,
    #[error("data do not relax exponentially")]
    NoDecay,
}

pub const MIN_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    /// Relaxation rate Γ.
    pub rate: f64,
    /// Asymptote m∞.
    pub asymptote: f64,
    /// Fitted value at the first sample time.
    pub initial: f64,
    /// RMS residual divided by the spread `|m₀ - m∞|`.
    pub residual: f64,
    /// Number of e-folds covered by the samples, `Γ (t_last - t_first)`.
    pub efolds: f64,
}

impl ExponentialFit {
    pub fn eval(&self, t: f64, t0: f64) -> f64 {
        self.asymptote + (self.initial - self.asymptote) * (-self.rate * (t - t0)).exp()
    }
}

/// Least-squares exponential fit to `(times, values)`.
///
/// Seeded by a log-linear regression on `|m - m̂∞|` with `m̂∞` taken from
/// the tail, then refined by Levenberg–Marquardt on all three parameters.
/// Works for relaxation from above or below.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<ExponentialFit, FitError> {
    if times.len() != values.len() {
        return Err(FitError::LengthMismatch { times: times.len(), values: values.len() });
    }
    if times.len() < MIN_SAMPLES {
        return Err(FitError::TooFewSamples { required: MIN_SAMPLES, got: times.len() });
    }
    if !times.iter().chain(values).all(|v| v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let first = values[0];
    let last = values[values.len() - 1];
    let spread = (first - last).abs();
    let scale = first.abs().max(last.abs()).max(f64::MIN_POSITIVE);
    if !(span > 0.0) || spread <= 1e-12 * scale {
        return Err(FitError::NoDecay);
    }

    // Work in scaled time s = (t - t0)/span so that Γ·span is O(1).
    let s: Vec<f64> = times.iter().map(|t| (t - t0) / span).collect();
    let seed = log_linear_seed(&s, values).ok_or(FitError::NoDecay)?;
    let p = levenberg_marquardt(&s, values, seed);
    let (m_inf, amp, k) = (p[0], p[1], p[2]);
    if !(k > 0.0) || !k.is_finite() {
        return Err(FitError::NoDecay);
    }
    let sse: f64 = s.iter().zip(values).map(|(s, y)| (m_inf + amp * (-k * s).exp() - y).powi(2)).sum();
    let rms = (sse / values.len() as f64).sqrt();
    Ok(ExponentialFit {
        rate: k / span,
        asymptote: m_inf,
        initial: m_inf + amp,
        residual: rms / amp.abs().max(f64::MIN_POSITIVE),
        efolds: k,
    })
}

fn log_linear_seed(s: &[f64], y: &[f64]) -> Option<Vector3<f64>> {
    let first = y[0];
    let last = y[y.len() - 1];
    let sign = (first - last).signum();
    // Place the provisional asymptote just beyond the last sample.
    let m_hat = last - sign * 1e-3 * (first - last).abs();
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &v) in s.iter().zip(y) {
        let d = sign * (v - m_hat);
        if d > 1e-2 * (first - last).abs() {
            let l = d.ln();
            n += 1.0;
            sx += x;
            sy += l;
            sxx += x * x;
            sxy += x * l;
        }
    }
    if n < 2.0 {
        return None;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let k = (-slope).max(1e-3);
    Some(Vector3::new(m_hat, sign * intercept.exp(), k))
}

fn levenberg_marquardt(s: &[f64], y: &[f64], mut p: Vector3<f64>) -> Vector3<f64> {
    let cost = |p: &Vector3<f64>| -> f64 {
        s.iter().zip(y).map(|(s, y)| (p[0] + p[1] * (-p[2] * s).exp() - y).powi(2)).sum()
    };
    let mut c = cost(&p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (&x, &v) in s.iter().zip(y) {
            let e = (-p[2] * x).exp();
            let r = p[0] + p[1] * e - v;
            let j = Vector3::new(1.0, e, -p[1] * x * e);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for i in 0..3 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let ct = cost(&trial);
            if ct.is_finite() && ct <= c {
                let done = step.norm() <= 1e-14 * (p.norm() + 1e-14) || c - ct <= 1e-30 * c.max(1e-300);
                p = trial;
                c = ct;
                lambda = (lambda * 0.3).max(1e-15);
                improved = true;
                if done {
                    return p;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || c == 0.0 {
            break;
        }
    }
    p
}
