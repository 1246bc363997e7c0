//! Classical mean-field amplitudes of the displaced frame.
//!
//! `α(t)` is the coherent cavity amplitude, `β(t)` the coherent mechanical
//! amplitude in the fixed ν₀ basis. Their equations of motion are
//!
//! ```text
//! dα/dt = {i[δ + 2χ₀ Re β] - κ} α - iΩ/2
//! dβ/dt = -{γ(t)/2 + iν₊(t)} β + iν₋(t) β* + iχ₀|α|²,   ν± = (ν₀ ± ν²/ν₀)/2
//! ```
//!
//! Internally the state is the real 4-vector `[Re α, Im α, Re β, Im β]`.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, NU0};
use crate::ode::{DenseTrajectory, Dopri5, Flow, OdeError, Tolerances};

pub type MeanFieldVector = Vector4<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeanFieldError {
    #[error("mean-field integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub t: f64,
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl MeanFieldState {
    pub fn zero(t: f64) -> Self {
        Self { t, alpha: Complex64::new(0.0, 0.0), beta: Complex64::new(0.0, 0.0) }
    }

    pub fn from_vector(t: f64, y: &MeanFieldVector) -> Self {
        Self { t, alpha: Complex64::new(y[0], y[1]), beta: Complex64::new(y[2], y[3]) }
    }

    pub fn to_vector(&self) -> MeanFieldVector {
        Vector4::new(self.alpha.re, self.alpha.im, self.beta.re, self.beta.im)
    }

    /// `δ'(t) = δ + 2χ₀ Re β(t)`.
    pub fn effective_detuning(&self, cfg: &ModelConfig) -> f64 {
        cfg.detuning + 2.0 * cfg.coupling * self.beta.re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldOptions {
    pub tol: Tolerances,
    /// Divergence threshold for |α| and |β|, in units of the drive scale
    /// `max(1, |α₀|, η|α₀|)`. Integration cost grows with |β| (the dressed
    /// detuning sets the cavity rotation rate), so this is kept moderate.
    pub divergence_threshold: f64,
    /// Relative period-to-period deviation that counts as periodic.
    pub orbit_tol: f64,
    pub max_periods: usize,
    /// First period after which Newton shooting is attempted, and the
    /// spacing of later attempts.
    pub newton_after: usize,
    pub newton_every: usize,
    pub initial: (Complex64, Complex64),
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            divergence_threshold: 1e3,
            orbit_tol: 1e-8,
            max_periods: 2000,
            newton_after: 5,
            newton_every: 50,
            initial: (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
        }
    }
}

/// Time-independent pieces of the right-hand side.
#[derive(Debug, Clone, Copy)]
struct Coefficients {
    detuning: f64,
    kappa: f64,
    coupling: f64,
    half_pump: f64,
}

impl Coefficients {
    fn new(cfg: &ModelConfig) -> Self {
        Self { detuning: cfg.detuning, kappa: cfg.kappa, coupling: cfg.coupling, half_pump: cfg.pump() / 2.0 }
    }
}

fn rhs(cfg: &ModelConfig, k: &Coefficients, t: f64, y: &MeanFieldVector) -> MeanFieldVector {
    let (ar, ai, br, bi) = (y[0], y[1], y[2], y[3]);
    let nu = cfg.frequency_at(t);
    let half_gamma = cfg.damping_at(t) / 2.0;
    let d = k.detuning + 2.0 * k.coupling * br;
    Vector4::new(
        -k.kappa * ar - d * ai,
        d * ar - k.kappa * ai - k.half_pump,
        -half_gamma * br + NU0 * bi,
        -(nu * nu / NU0) * br - half_gamma * bi + k.coupling * (ar * ar + ai * ai),
    )
}

fn jacobian(cfg: &ModelConfig, k: &Coefficients, t: f64, y: &MeanFieldVector) -> Matrix4<f64> {
    let (ar, ai, br) = (y[0], y[1], y[2]);
    let nu = cfg.frequency_at(t);
    let hg = cfg.damping_at(t) / 2.0;
    let d = k.detuning + 2.0 * k.coupling * br;
    let c = k.coupling;
    Matrix4::new(
        -k.kappa, -d, -2.0 * c * ai, 0.0,
        d, -k.kappa, 2.0 * c * ar, 0.0,
        0.0, 0.0, -hg, NU0,
        2.0 * c * ar, 2.0 * c * ai, -nu * nu / NU0, -hg,
    )
}

/// `(dα/dt, dβ/dt)` at `state`.
pub fn mean_field_rhs(cfg: &ModelConfig, state: &MeanFieldState) -> (Complex64, Complex64) {
    let d = rhs(cfg, &Coefficients::new(cfg), state.t, &state.to_vector());
    (Complex64::new(d[0], d[1]), Complex64::new(d[2], d[3]))
}

fn drive_scale(cfg: &ModelConfig) -> f64 {
    let d = cfg.derive();
    let a = d.alpha0.norm();
    1.0f64.max(a).max(d.eta * a)
}

fn diverged(y: &MeanFieldVector, limit: f64) -> bool {
    y[0].hypot(y[1]) > limit || y[2].hypot(y[3]) > limit || !y.iter().all(|v| v.is_finite())
}

/// Sampled mean-field trajectory.
#[derive(Debug, Clone)]
pub struct MeanFieldTrajectory {
    pub samples: Vec<MeanFieldState>,
    /// Time at which the divergence threshold was crossed.
    pub diverged_at: Option<f64>,
    pub last: MeanFieldState,
}

/// Integrate from `initial` over `horizon`, sampling at `sample_times`
/// (absolute, sorted). Crossing the divergence threshold stops the run and is
/// reported in the result rather than as an error.
pub fn integrate_mean_field(
    cfg: &ModelConfig,
    initial: &MeanFieldState,
    horizon: f64,
    sample_times: &[f64],
    opts: &MeanFieldOptions,
) -> Result<MeanFieldTrajectory, MeanFieldError> {
    if !(horizon > 0.0) {
        return Err(MeanFieldError::Horizon(horizon));
    }
    let k = Coefficients::new(cfg);
    let limit = opts.divergence_threshold * drive_scale(cfg);
    let t0 = initial.t;
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next = sample_times.partition_point(|&s| s < t0);
    let mut diverged_at = None;
    let (t_end, y_end) = Dopri5::new(opts.tol).solve(
        |t, y| rhs(cfg, &k, t, y),
        t0,
        initial.to_vector(),
        t0 + horizon,
        |step| {
            while next < sample_times.len() && sample_times[next] <= step.t1() {
                let t = sample_times[next];
                samples.push(MeanFieldState::from_vector(t, &step.eval(t)));
                next += 1;
            }
            if diverged(step.y_end(), limit) {
                diverged_at = Some(step.t1());
                Flow::Stop
            } else {
                Flow::Continue
            }
        },
    )?;
    Ok(MeanFieldTrajectory { samples, diverged_at, last: MeanFieldState::from_vector(t_end, &y_end) })
}

/// One modulation period of the mean-field solution, with dense output.
#[derive(Debug, Clone)]
pub struct MeanFieldOrbit {
    pub period: f64,
    pub stability: Stability,
    /// The stored period closes on itself to within `orbit_tol`.
    pub periodic: bool,
    /// Relative mismatch between the stored period's start and end.
    pub deviation: f64,
    /// Periods of forward integration spent on the search.
    pub periods_integrated: usize,
    pub diverged_at: Option<f64>,
    /// Moduli of the eigenvalues of the period map's Jacobian at the orbit.
    pub multipliers: Vec<f64>,
    start: MeanFieldVector,
    dense: DenseTrajectory<4>,
}

impl MeanFieldOrbit {
    /// Orbit state at any time, using T-periodicity.
    pub fn state_at(&self, t: f64) -> MeanFieldState {
        let phase = t.rem_euclid(self.period);
        MeanFieldState::from_vector(t, &self.dense.eval(phase))
    }

    pub fn start(&self) -> MeanFieldState {
        MeanFieldState::from_vector(0.0, &self.start)
    }

    /// `n` equispaced samples over `[0, T)`.
    pub fn samples(&self, n: usize) -> Vec<MeanFieldState> {
        (0..n).map(|k| self.state_at(self.period * k as f64 / n as f64)).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.stability == Stability::Stable
    }
}

/// `δ'(t)` along the orbit at the given times.
pub fn effective_detuning(cfg: &ModelConfig, orbit: &MeanFieldOrbit, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| orbit.state_at(t).effective_detuning(cfg)).collect()
}

struct PeriodMap<'a> {
    cfg: &'a ModelConfig,
    k: Coefficients,
    solver: Dopri5,
    period: f64,
    limit: f64,
}

impl PeriodMap<'_> {
    /// Advance one period from `y` (at a multiple of T). `None` on divergence.
    fn advance(&self, y: &MeanFieldVector) -> Result<Option<MeanFieldVector>, OdeError> {
        let mut blew_up = false;
        let (_, y_end) = self.solver.solve(
            |t, y| rhs(self.cfg, &self.k, t, y),
            0.0,
            *y,
            self.period,
            |step| {
                if diverged(step.y_end(), self.limit) {
                    blew_up = true;
                    Flow::Stop
                } else {
                    Flow::Continue
                }
            },
        )?;
        Ok(if blew_up { None } else { Some(y_end) })
    }

    /// Period map with its Jacobian (variational equations).
    fn advance_with_jacobian(&self, y: &MeanFieldVector) -> Result<Option<(MeanFieldVector, Matrix4<f64>)>, OdeError> {
        let mut blew_up = false;
        let mut z = SVector::<f64, 20>::zeros();
        z.fixed_rows_mut::<4>(0).copy_from(y);
        for i in 0..4 {
            z[4 + 5 * i] = 1.0;
        }
        let (_, z_end) = self.solver.solve(
            |t, z: &SVector<f64, 20>| {
                let y: MeanFieldVector = z.fixed_rows::<4>(0).into();
                let phi = SMatrix::<f64, 4, 4>::from_column_slice(&z.as_slice()[4..20]);
                let dphi = jacobian(self.cfg, &self.k, t, &y) * phi;
                let mut dz = SVector::<f64, 20>::zeros();
                dz.fixed_rows_mut::<4>(0).copy_from(&rhs(self.cfg, &self.k, t, &y));
                dz.as_mut_slice()[4..20].copy_from_slice(dphi.as_slice());
                dz
            },
            0.0,
            z,
            self.period,
            |step| {
                let y: MeanFieldVector = step.y_end().fixed_rows::<4>(0).into();
                if diverged(&y, self.limit) {
                    blew_up = true;
                    Flow::Stop
                } else {
                    Flow::Continue
                }
            },
        )?;
        if blew_up {
            return Ok(None);
        }
        let y_end: MeanFieldVector = z_end.fixed_rows::<4>(0).into();
        let phi = Matrix4::from_column_slice(&z_end.as_slice()[4..20]);
        Ok(Some((y_end, phi)))
    }

    /// Newton iteration on `P(y) - y = 0` with a backtracking line search on
    /// the residual norm. Returns the fixed point and the period-map Jacobian
    /// there.
    fn newton(&self, guess: &MeanFieldVector, tol: f64) -> Option<(MeanFieldVector, Matrix4<f64>)> {
        let mut y = *guess;
        let (mut py, mut phi) = self.advance_with_jacobian(&y).ok()??;
        for _ in 0..NEWTON_MAX_ITER {
            let residual = py - y;
            let r = residual.norm();
            let scale = y.norm().max(py.norm()).max(1e-300);
            if r <= tol * scale || r == 0.0 {
                return Some((y, phi));
            }
            let mut step = (phi - Matrix4::identity()).lu().solve(&(-residual))?;
            let radius = scale.max(self.limit * 1e-3);
            if step.norm() > radius {
                step *= radius / step.norm();
            }
            let mut accepted = None;
            for _ in 0..NEWTON_BACKTRACK {
                let trial = y + step;
                if trial.iter().all(|v| v.is_finite()) && !diverged(&trial, self.limit) {
                    if let Some((pt, phit)) = self.advance_with_jacobian(&trial).ok()? {
                        if (pt - trial).norm() < r {
                            accepted = Some((trial, pt, phit));
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            (y, py, phi) = accepted?;
        }
        None
    }

    fn dense_period(&self, y: &MeanFieldVector) -> Result<(DenseTrajectory<4>, MeanFieldVector), OdeError> {
        let mut dense = DenseTrajectory::new();
        let (_, y_end) = self.solver.solve(
            |t, y| rhs(self.cfg, &self.k, t, y),
            0.0,
            *y,
            self.period,
            |step| {
                dense.push(step.segment());
                Flow::Continue
            },
        )?;
        Ok((dense, y_end))
    }
}

fn relative_gap(a: &MeanFieldVector, b: &MeanFieldVector) -> f64 {
    let alpha = (a[0] - b[0]).hypot(a[1] - b[1]);
    let beta = (a[2] - b[2]).hypot(a[3] - b[3]);
    let scale = a[0].hypot(a[1]) + a[2].hypot(a[3]);
    if alpha + beta == 0.0 {
        0.0
    } else {
        (alpha + beta) / scale.max(1e-300)
    }
}

fn moduli(phi: &Matrix4<f64>) -> Vec<f64> {
    let mut m: Vec<f64> = phi.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    m
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_BACKTRACK: usize = 12;

/// Find the T-periodic mean-field solution reached from the configured
/// initial state, and classify it.
///
/// Forward integration runs period by period, watching for divergence. Newton
/// shooting on the period map is tried along the way; an attracting fixed
/// point ends the search early. A repelling one is kept as the reference orbit
/// while forward integration continues until divergence or `max_periods`.
pub fn find_periodic_orbit(cfg: &ModelConfig, opts: &MeanFieldOptions) -> Result<MeanFieldOrbit, MeanFieldError> {
    let period = cfg.period();
    let map = PeriodMap {
        cfg,
        k: Coefficients::new(cfg),
        solver: Dopri5::new(opts.tol),
        period,
        limit: opts.divergence_threshold * drive_scale(cfg),
    };
    let initial = Vector4::new(opts.initial.0.re, opts.initial.0.im, opts.initial.1.re, opts.initial.1.im);
    let newton_tol = (opts.orbit_tol * 1e-2).max(1e-13);

    let build = |y: MeanFieldVector,
                 stability: Stability,
                 periods: usize,
                 diverged_at: Option<f64>,
                 multipliers: Vec<f64>|
     -> Result<MeanFieldOrbit, MeanFieldError> {
        let (dense, y_end) = map.dense_period(&y)?;
        let deviation = relative_gap(&y, &y_end);
        Ok(MeanFieldOrbit {
            period,
            stability,
            periodic: deviation < opts.orbit_tol,
            deviation,
            periods_integrated: periods,
            diverged_at,
            multipliers,
            start: y,
            dense,
        })
    };

    let mut y = initial;
    let mut repelling: Option<(MeanFieldVector, Vec<f64>)> = None;
    for p in 1..=opts.max_periods {
        let Some(y_next) = map.advance(&y)? else {
            let t_div = p as f64 * period;
            let reference = repelling.clone().or_else(|| {
                map.newton(&initial, newton_tol).map(|(y, phi)| (y, moduli(&phi)))
            });
            return match reference {
                Some((y_ref, mult)) => build(y_ref, Stability::Unstable, p, Some(t_div), mult),
                None => build(y, Stability::Unstable, p, Some(t_div), Vec::new()),
            };
        };
        if relative_gap(&y_next, &y) < opts.orbit_tol {
            let mult = map.advance_with_jacobian(&y_next)?.map(|(_, phi)| moduli(&phi)).unwrap_or_default();
            return build(y_next, Stability::Stable, p, None, mult);
        }
        let try_newton = p == opts.newton_after
            || (p > opts.newton_after && opts.newton_every > 0 && (p - opts.newton_after) % opts.newton_every == 0);
        if try_newton && repelling.is_none() {
            if let Some((y_star, phi)) = map.newton(&y_next, newton_tol) {
                let mult = moduli(&phi);
                if mult.first().is_some_and(|&m| m < 1.0) {
                    let orbit = build(y_star, Stability::Stable, p, None, mult)?;
                    if orbit.periodic {
                        return Ok(orbit);
                    }
                } else {
                    repelling = Some((y_star, mult));
                }
            }
        }
        y = y_next;
    }
    match repelling {
        Some((y_ref, mult)) => build(y_ref, Stability::Undetermined, opts.max_periods, None, mult),
        None => build(y, Stability::Undetermined, opts.max_periods, None, Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Drive, Waveform};

    fn cfg(kappa: f64, delta: f64, coupling: f64, alpha0: f64) -> ModelConfig {
        ModelConfig::unmodulated(kappa, delta, coupling, alpha0)
    }

    #[test]
    fn rhs_fixed_points() {
        let c = cfg(0.1, -1.0, 0.0, 3.0);
        let a0 = c.alpha0();
        let (da, _) = mean_field_rhs(&c, &MeanFieldState { t: 0.3, alpha: a0, beta: Complex64::new(0.0, 0.0) });
        assert!(da.norm() < 1e-15);

        let mut c = cfg(0.1, -1.0, 0.01, 3.0);
        c.drive = Drive::Pump(0.0);
        let (da, db) = mean_field_rhs(&c, &MeanFieldState::zero(1.0));
        assert_eq!((da, db), (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn rhs_unmodulated_has_no_conjugate_term() {
        // With ν = ν₀: dβ/dt = -(γ/2 + iν₀)β + iχ₀|α|².
        let mut c = cfg(0.1, -1.0, 0.02, 3.0);
        c.gamma0 = 0.01;
        let s = MeanFieldState { t: 0.7, alpha: Complex64::new(0.3, -2.0), beta: Complex64::new(1.5, 0.4) };
        let (_, db) = mean_field_rhs(&c, &s);
        let expected = -Complex64::new(0.005, 1.0) * s.beta + Complex64::new(0.0, 0.02 * s.alpha.norm_sqr());
        assert!((db - expected).norm() < 1e-15);
    }

    #[test]
    fn rhs_matches_complex_form_when_modulated() {
        let mut c = cfg(0.07, -0.8, 0.03, 2.0);
        c.waveform = Waveform::sinusoidal(0.2, 0.5).unwrap();
        c.gamma0 = 0.02;
        c.gamma_hat = 0.01;
        let s = MeanFieldState { t: 1.1, alpha: Complex64::new(0.3, -2.0), beta: Complex64::new(1.5, 0.4) };
        let (da, db) = mean_field_rhs(&c, &s);
        let nu = c.frequency_at(s.t);
        let (nup, num) = ((1.0 + nu * nu) / 2.0, (1.0 - nu * nu) / 2.0);
        let i = Complex64::i();
        let ea = (i * (c.detuning + 2.0 * c.coupling * s.beta.re) - c.kappa) * s.alpha - i * c.pump() / 2.0;
        let eb = -(c.damping_at(s.t) / 2.0 + i * nup) * s.beta + i * s.beta.conj() * num
            + i * c.coupling * s.alpha.norm_sqr();
        assert!((da - ea).norm() < 1e-14);
        assert!((db - eb).norm() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut c = cfg(0.07, -0.8, 0.03, 2.0);
        c.waveform = Waveform::sinusoidal(0.2, 0.5).unwrap();
        c.gamma0 = 0.02;
        let k = Coefficients::new(&c);
        let y = Vector4::new(0.3, -2.0, 1.5, 0.4);
        let jac = jacobian(&c, &k, 0.9, &y);
        for j in 0..4 {
            let mut e = Vector4::zeros();
            e[j] = 1e-6;
            let fd = (rhs(&c, &k, 0.9, &(y + e)) - rhs(&c, &k, 0.9, &(y - e))) / 2e-6;
            for i in 0..4 {
                assert!((fd[i] - jac[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn decoupled_cavity_matches_closed_form() {
        // α(t) = α₀ + (α(0) - α₀) e^{(iδ-κ)t}
        let c = cfg(0.1, -1.0, 0.0, 2.0);
        let a0 = c.alpha0();
        let opts = MeanFieldOptions { tol: Tolerances::new(1e-11, 1e-13), ..Default::default() };
        let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        let traj = integrate_mean_field(&c, &MeanFieldState::zero(0.0), 100.0, &times, &opts).unwrap();
        assert!(traj.diverged_at.is_none());
        for s in &traj.samples {
            let exact = a0 - a0 * (Complex64::new(-c.kappa, c.detuning) * s.t).exp();
            assert!((s.alpha - exact).norm() < 1e-8 * a0.norm(), "t={}", s.t);
        }
        assert!((traj.last.alpha - a0).norm() < 1e-4 * a0.norm());
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        // Parametric resonance with no damping at all: β grows without bound.
        let mut c = cfg(0.1, -1.0, 0.0, 1.0);
        c.waveform = Waveform::sinusoidal(0.2, 2.0).unwrap();
        let opts = MeanFieldOptions { initial: (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)), ..Default::default() };
        let traj = integrate_mean_field(&c, &MeanFieldState { t: 0.0, alpha: Complex64::new(0.0, 0.0), beta: Complex64::new(1.0, 0.0) }, 5000.0, &[], &opts).unwrap();
        assert!(traj.diverged_at.is_some());
        assert!(integrate_mean_field(&c, &MeanFieldState::zero(0.0), 0.0, &[], &opts).is_err());
    }

    #[test]
    fn zero_drive_orbit_is_zero() {
        let mut c = cfg(0.1, -1.0, 0.01, 0.0);
        c.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        let orbit = find_periodic_orbit(&c, &MeanFieldOptions::default()).unwrap();
        assert!(orbit.is_stable() && orbit.periodic);
        for s in orbit.samples(32) {
            assert_eq!(s.alpha.norm() + s.beta.norm(), 0.0);
        }
    }

    #[test]
    fn unmodulated_orbit_is_static_fixed_point() {
        // dα = dβ = 0: α = (Ω/2)/(δ' + iκ), β real-part from the
        // static force balance; solved by fixed-point iteration on δ'.
        let mut c = cfg(0.1, -1.0, 0.001, 5.0);
        c.gamma0 = 1e-3;
        c.drive = Drive::Pump(c.pump());
        let half_pump = c.pump() / 2.0;
        let mut alpha = c.alpha0();
        let mut beta = Complex64::new(0.0, 0.0);
        for _ in 0..200 {
            let dprime = c.detuning + 2.0 * c.coupling * beta.re;
            alpha = Complex64::new(half_pump, 0.0) / Complex64::new(dprime, c.kappa);
            beta = Complex64::new(0.0, c.coupling * alpha.norm_sqr()) / Complex64::new(c.gamma0 / 2.0, 1.0);
        }
        let orbit = find_periodic_orbit(&c, &MeanFieldOptions::default()).unwrap();
        assert!(orbit.is_stable());
        for s in orbit.samples(8) {
            assert!((s.alpha - alpha).norm() < 1e-7 * alpha.norm());
            assert!((s.beta - beta).norm() < 1e-7 * beta.norm());
        }
        // Leading order: α ≈ α₀ and β ≈ iχ₀|α₀|²/(γ/2 + iν₀).
        let a0 = c.alpha0();
        let b0 = Complex64::new(0.0, c.coupling * a0.norm_sqr()) / Complex64::new(c.gamma0 / 2.0, 1.0);
        let s = orbit.state_at(0.0);
        assert!((s.alpha - a0).norm() < 1e-3 * a0.norm());
        assert!((s.beta - b0).norm() < 1e-3 * b0.norm());
    }

    #[test]
    fn modulated_orbit_is_periodic_with_harmonic_spectrum() {
        let mut c = cfg(0.05, -1.0, 0.01, 1.0);
        c.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        let orbit = find_periodic_orbit(&c, &MeanFieldOptions::default()).unwrap();
        assert!(orbit.is_stable() && orbit.periodic, "{:?}", orbit.stability);
        assert!(orbit.multipliers.iter().all(|&m| m < 1.0));

        // Fresh integration of one extra period closes on the stored orbit.
        let start = orbit.start();
        let times: Vec<f64> = (0..=64).map(|k| orbit.period * k as f64 / 64.0).collect();
        let traj =
            integrate_mean_field(&c, &start, orbit.period, &times, &MeanFieldOptions::default()).unwrap();
        let scale = start.alpha.norm() + start.beta.norm();
        for s in &traj.samples {
            let o = orbit.state_at(s.t);
            assert!(((s.alpha - o.alpha).norm() + (s.beta - o.beta).norm()) / scale < 1e-8);
        }

        // Spectrum of β over 4 periods: energy only at multiples of ω.
        let n = 1024;
        let span = 4.0 * orbit.period;
        let beta: Vec<Complex64> = (0..n).map(|k| orbit.state_at(span * k as f64 / n as f64).beta).collect();
        let power = |bin: usize| -> f64 {
            beta.iter()
                .enumerate()
                .map(|(k, b)| b * Complex64::cis(-2.0 * std::f64::consts::PI * (bin * k) as f64 / n as f64))
                .sum::<Complex64>()
                .norm_sqr()
        };
        let on: f64 = (0..n / 2).step_by(4).map(power).sum();
        let off: f64 = (0..n / 2).filter(|b| b % 4 != 0).map(power).sum();
        assert!(off < 1e-10 * on, "off-harmonic power {off:e} vs {on:e}");
    }

    #[test]
    fn effective_detuning_follows_beta() {
        let mut c = cfg(0.05, -1.0, 0.0, 1.0);
        c.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        let orbit = find_periodic_orbit(&c, &MeanFieldOptions::default()).unwrap();
        let times = [0.0, 1.0, 2.5];
        assert!(effective_detuning(&c, &orbit, &times).iter().all(|&d| d == c.detuning));

        let s = MeanFieldState { t: 0.0, alpha: Complex64::new(1.0, 0.0), beta: Complex64::new(-0.5, 0.0) };
        let c2 = cfg(0.05, -1.0, 0.01, 1.0);
        assert!(s.effective_detuning(&c2) < c2.detuning);
    }

    #[test]
    fn dressed_detuning_shift_is_second_order() {
        // |δ' - δ| ≈ 2η² ν₀ for the static displacement.
        let eta: f64 = 0.05;
        let mut c = cfg(0.05, -1.0, 0.01, eta / 0.01);
        c.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        let orbit = find_periodic_orbit(&c, &MeanFieldOptions::default()).unwrap();
        let shifts = effective_detuning(&c, &orbit, &orbit.samples(64).iter().map(|s| s.t).collect::<Vec<_>>());
        for d in shifts {
            let shift = (d - c.detuning).abs();
            assert!(shift > 0.5 * eta * eta && shift < 4.0 * eta * eta, "shift {shift}");
        }
    }

    #[test]
    fn tolerance_refinement_changes_little() {
        let mut c = cfg(0.05, -1.0, 0.01, 2.0);
        c.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        c.gamma0 = 1e-3;
        let coarse = MeanFieldOptions::default();
        let fine = MeanFieldOptions { tol: coarse.tol.scaled(0.5), ..coarse };
        let horizon = 40.0 * c.period();
        let times: Vec<f64> = (0..=32).map(|k| horizon - c.period() + c.period() * k as f64 / 32.0).collect();
        let a = integrate_mean_field(&c, &MeanFieldState::zero(0.0), horizon, &times, &coarse).unwrap();
        let b = integrate_mean_field(&c, &MeanFieldState::zero(0.0), horizon, &times, &fine).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            let scale = y.alpha.norm() + y.beta.norm();
            assert!(((x.alpha - y.alpha).norm() + (x.beta - y.beta).norm()) / scale < 1e-6);
        }
    }
}
