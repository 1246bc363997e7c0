//! Adaptive Dormand–Prince 5(4) integrator with continuous extension.
//!
//! Every ODE in the crate is small and non-stiff (4 to 40 real components), so
//! the state is a stack-allocated `SVector`. Accepted steps are handed to an
//! observer together with their dense-output polynomial, which is how callers
//! sample trajectories, detect divergence or stop early.

use nalgebra::SVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("exceeded {max_steps} steps before reaching t = {t_end}")]
    MaxSteps { max_steps: usize, t_end: f64 },
    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid integration interval [{t0}, {t_end}]")]
    InvalidInterval { t0: f64, t_end: f64 },
}

/// Relative and absolute error tolerances of the step-size controller.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rel: 1e-9, abs: 1e-12 }
    }
}

impl Tolerances {
    pub fn new(rel: f64, abs: f64) -> Self {
        Self { rel, abs }
    }

    /// Both tolerances scaled by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self { rel: self.rel * factor, abs: self.abs * factor }
    }
}

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// One accepted step: `[t0, t0 + h]` with its interpolating polynomial.
#[derive(Debug, Clone)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub h: f64,
    cont: [SVector<f64, N>; 5],
    y_new: SVector<f64, N>,
    projected: bool,
}

impl<const N: usize> Step<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn y_start(&self) -> &SVector<f64, N> {
        &self.cont[0]
    }

    pub fn y_end(&self) -> &SVector<f64, N> {
        &self.y_new
    }

    /// Fourth-order continuous extension, valid for `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = &self.cont;
        c[0] + (c[1] + (c[2] + (c[3] + c[4] * s1) * s) * s1) * s
    }

    /// Replace the end state (e.g. re-symmetrize a covariance) before the
    /// integrator continues from it.
    pub fn project(&mut self, f: impl FnOnce(&mut SVector<f64, N>)) {
        f(&mut self.y_new);
        self.projected = true;
    }

    /// Standalone dense segment for later interpolation.
    pub fn segment(&self) -> Segment<N> {
        Segment { t0: self.t0, h: self.h, cont: self.cont }
    }
}

/// Dense-output polynomial of a finished step.
#[derive(Debug, Clone)]
pub struct Segment<const N: usize> {
    pub t0: f64,
    pub h: f64,
    cont: [SVector<f64, N>; 5],
}

impl<const N: usize> Segment<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = &self.cont;
        c[0] + (c[1] + (c[2] + (c[3] + c[4] * s1) * s) * s1) * s
    }
}

/// Piecewise dense output over a contiguous time interval.
#[derive(Debug, Clone, Default)]
pub struct DenseTrajectory<const N: usize> {
    segments: Vec<Segment<N>>,
}

impl<const N: usize> DenseTrajectory<N> {
    pub fn new() -> Self {
        Self { segments: Vec::new() }
    }

    pub fn push(&mut self, segment: Segment<N>) {
        self.segments.push(segment);
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.t0)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1())
    }

    /// Evaluate at `t`, clamped to the covered interval.
    pub fn eval(&self, t: f64) -> SVector<f64, N> {
        let idx = self.segments.partition_point(|s| s.t1() < t);
        let idx = idx.min(self.segments.len() - 1);
        self.segments[idx].eval(t)
    }
}

/// Dormand–Prince 5(4) with FSAL and Hairer's continuous extension.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub tol: Tolerances,
    pub max_steps: usize,
    /// Upper bound on |h|; `f64::INFINITY` for none.
    pub h_max: f64,
    pub h_init: Option<f64>,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self { tol: Tolerances::default(), max_steps: 10_000_000, h_max: f64::INFINITY, h_init: None }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

impl Dopri5 {
    pub fn new(tol: Tolerances) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    fn error_norm<const N: usize>(
        &self,
        err: &SVector<f64, N>,
        y0: &SVector<f64, N>,
        y1: &SVector<f64, N>,
    ) -> f64 {
        let mut acc = 0.0;
        for i in 0..N {
            let sc = self.tol.abs + self.tol.rel * y0[i].abs().max(y1[i].abs());
            let r = err[i] / sc;
            acc += r * r;
        }
        (acc / N as f64).sqrt()
    }

    fn initial_step<const N: usize, F>(
        &self,
        rhs: &mut F,
        t0: f64,
        y0: &SVector<f64, N>,
        f0: &SVector<f64, N>,
        span: f64,
    ) -> f64
    where
        F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    {
        let scale = |y: &SVector<f64, N>, i: usize| self.tol.abs + self.tol.rel * y[i].abs();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sc = scale(y0, i);
            d0 += (y0[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        d0 = (d0 / N as f64).sqrt();
        d1 = (d1 / N as f64).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span).min(self.h_max);
        let y1 = y0 + f0 * h0;
        let f1 = rhs(t0 + h0, &y1);
        let mut d2 = 0.0;
        for i in 0..N {
            d2 += ((f1[i] - f0[i]) / scale(y0, i)).powi(2);
        }
        d2 = (d2 / N as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        (100.0 * h0).min(h1).min(span).min(self.h_max)
    }

    /// Integrate from `(t0, y0)` to `t_end`, calling `on_step` after every
    /// accepted step. Returns the final time and state (earlier than `t_end`
    /// if the observer stopped the run).
    pub fn solve<const N: usize, F, O>(
        &self,
        mut rhs: F,
        t0: f64,
        y0: SVector<f64, N>,
        t_end: f64,
        mut on_step: O,
    ) -> Result<(f64, SVector<f64, N>), OdeError>
    where
        F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
        O: FnMut(&mut Step<N>) -> Flow,
    {
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            if t_end == t0 {
                return Ok((t0, y0));
            }
            return Err(OdeError::InvalidInterval { t0, t_end });
        }
        let span = t_end - t0;
        let mut t = t0;
        let mut y = y0;
        let mut k1 = rhs(t, &y);
        let mut h = match self.h_init {
            Some(h) => h.min(span).min(self.h_max),
            None => self.initial_step(&mut rhs, t, &y, &k1, span),
        };
        let mut steps = 0usize;
        let mut last_rejected = false;

        while t < t_end {
            if steps >= self.max_steps {
                return Err(OdeError::MaxSteps { max_steps: self.max_steps, t_end });
            }
            steps += 1;
            let mut last = false;
            if t + h >= t_end || t + 1.01 * h >= t_end {
                h = t_end - t;
                last = true;
            }
            if h <= 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::StepSizeUnderflow { t, h });
            }

            let k2 = rhs(t + C2 * h, &(y + k1 * (A21 * h)));
            let k3 = rhs(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h));
            let k4 = rhs(t + C4 * h, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
            let k5 = rhs(t + C5 * h, &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h));
            let k6 = rhs(
                t + h,
                &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h),
            );
            let y_new = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
            let k7 = rhs(t + h, &y_new);
            let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
            let err = self.error_norm(&err_vec, &y, &y_new);

            if !err.is_finite() {
                if !y_new.iter().all(|v| v.is_finite()) && h < 1e-10 {
                    return Err(OdeError::NonFinite { t });
                }
                h *= 0.1;
                last_rejected = true;
                continue;
            }

            if err <= 1.0 {
                let ydiff = y_new - y;
                let bspl = k1 * h - ydiff;
                let cont = [
                    y,
                    ydiff,
                    bspl,
                    ydiff - k7 * h - bspl,
                    (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h,
                ];
                let mut step = Step { t0: t, h, cont, y_new, projected: false };
                let flow = on_step(&mut step);
                t = if last { t_end } else { t + h };
                y = step.y_new;
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(OdeError::NonFinite { t });
                }
                k1 = if step.projected { rhs(t, &y) } else { k7 };
                if flow == Flow::Stop {
                    return Ok((t, y));
                }
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 10.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                last_rejected = false;
                h = (h * fac).min(self.h_max);
            } else {
                let fac = (0.9 * err.powf(-0.2)).max(0.2);
                h *= fac;
                last_rejected = true;
            }
        }
        Ok((t, y))
    }

    /// Integrate and return the state at each requested time (must be sorted
    /// and inside `[t0, t_end]`), plus the final state.
    pub fn solve_sampled<const N: usize, F>(
        &self,
        rhs: F,
        t0: f64,
        y0: SVector<f64, N>,
        t_end: f64,
        sample_times: &[f64],
    ) -> Result<(Vec<SVector<f64, N>>, SVector<f64, N>), OdeError>
    where
        F: FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    {
        let mut out = Vec::with_capacity(sample_times.len());
        let mut next = 0usize;
        while next < sample_times.len() && sample_times[next] <= t0 {
            out.push(y0);
            next += 1;
        }
        let (_, y_final) = self.solve(rhs, t0, y0, t_end, |step| {
            while next < sample_times.len() && sample_times[next] <= step.t1() {
                out.push(step.eval(sample_times[next]));
                next += 1;
            }
            Flow::Continue
        })?;
        while out.len() < sample_times.len() {
            out.push(y_final);
        }
        Ok((out, y_final))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn harmonic_oscillator_matches_closed_form() {
        let solver = Dopri5::new(Tolerances::new(1e-11, 1e-13));
        let rhs = |_t: f64, y: &Vector2<f64>| Vector2::new(y[1], -y[0]);
        let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.5).collect();
        let (samples, _) = solver.solve_sampled(rhs, 0.0, Vector2::new(1.0, 0.0), 20.0, &times).unwrap();
        for (t, y) in times.iter().zip(&samples) {
            assert!((y[0] - t.cos()).abs() < 1e-8, "t={t}: {} vs {}", y[0], t.cos());
            assert!((y[1] + t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let solver = Dopri5::new(Tolerances::new(1e-10, 1e-12));
        let rhs = |_t: f64, y: &Vector2<f64>| Vector2::new(-0.5 * y[0], y[0]);
        let mut traj = DenseTrajectory::new();
        solver
            .solve(rhs, 0.0, Vector2::new(2.0, 0.0), 5.0, |s| {
                traj.push(s.segment());
                Flow::Continue
            })
            .unwrap();
        for k in 0..200 {
            let t = 5.0 * k as f64 / 199.0;
            let y = traj.eval(t);
            assert!((y[0] - 2.0 * (-0.5 * t).exp()).abs() < 1e-8);
            assert!((y[1] - 4.0 * (1.0 - (-0.5 * t).exp())).abs() < 1e-8);
        }
    }

    #[test]
    fn observer_can_stop_early() {
        let solver = Dopri5::default();
        let rhs = |_t: f64, y: &Vector2<f64>| Vector2::new(y[0], 0.0);
        let (t, y) = solver
            .solve(rhs, 0.0, Vector2::new(1.0, 0.0), 100.0, |s| {
                if s.y_end()[0] > 1e3 {
                    Flow::Stop
                } else {
                    Flow::Continue
                }
            })
            .unwrap();
        assert!(t < 100.0);
        assert!(y[0] > 1e3);
    }

    #[test]
    fn empty_interval_is_identity() {
        let solver = Dopri5::default();
        let rhs = |_t: f64, y: &Vector2<f64>| *y;
        let (t, y) = solver.solve(rhs, 1.0, Vector2::new(3.0, 4.0), 1.0, |_| Flow::Continue).unwrap();
        assert_eq!(t, 1.0);
        assert_eq!(y, Vector2::new(3.0, 4.0));
        assert!(solver.solve(rhs, 1.0, Vector2::new(3.0, 4.0), 0.0, |_| Flow::Continue).is_err());
    }
}
