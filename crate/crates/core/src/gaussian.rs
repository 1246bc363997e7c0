//! Linearized Gaussian dynamics of the fluctuations around the mean-field
//! orbit.
//!
//! Quadratures are ordered `R = (x_c, p_c, x_m, p_m)` with `[x, p] = i`.
//! `C` is the symmetrized covariance matrix `½⟨{R_j, R_k}⟩`. The drift and
//! diffusion matrices are
//!
//! ```text
//! H_eff = 2σ(Ĥ + Im Γ),   J = 2σ Re Γ σᵀ,   σ = diag([[0, 1], [-1, 0]] × 2)
//! ```
//!
//! and the moments obey `dr/dt = H_eff r`, `dC/dt = H_eff C + C H_effᵀ + J`.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use num_complex::Complex64;
use thiserror::Error;

use crate::meanfield::{MeanFieldOrbit, MeanFieldState};
use crate::model::{MatrixDetuning, MechanicalForm, ModelConfig, NU0};
use crate::ode::{Dopri5, Flow, OdeError, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("covariance integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("state became unphysical at t = {t}: min eig(C + iσ/2) = {min_eigenvalue:e}")]
    PhysicalityViolation { t: f64, min_eigenvalue: f64 },
    #[error("covariance diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("mean-field orbit is not stable")]
    UnstableOrbit,
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
}

/// First moments and covariance at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub t: f64,
    pub r: Vector4<f64>,
    pub c: Matrix4<f64>,
}

impl GaussianState {
    pub fn phonon_number(&self) -> f64 {
        phonon_number(&self.c)
    }
}

/// `C = diag(½, ½, m̄ + ½, m̄ + ½)`, `r = 0`: cavity vacuum, thermal mechanics.
pub fn thermal_initial_state(nbar: f64) -> GaussianState {
    GaussianState { t: 0.0, r: Vector4::zeros(), c: Matrix4::from_diagonal(&Vector4::new(0.5, 0.5, nbar + 0.5, nbar + 0.5)) }
}

/// `⟨m⟩ = ½(C₃₃ + C₄₄ - 1)`.
pub fn phonon_number(c: &Matrix4<f64>) -> f64 {
    0.5 * (c[(2, 2)] + c[(3, 3)] - 1.0)
}

/// Labels of [`independent_entries`], 1-based.
pub const COVARIANCE_LABELS: [&str; 10] = ["C11", "C12", "C13", "C14", "C22", "C23", "C24", "C33", "C34", "C44"];

/// Upper triangle of `C`, row by row.
pub fn independent_entries(c: &Matrix4<f64>) -> [f64; 10] {
    let mut out = [0.0; 10];
    let mut k = 0;
    for i in 0..4 {
        for j in i..4 {
            out[k] = c[(i, j)];
            k += 1;
        }
    }
    out
}

pub fn symplectic_form() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        -1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Smallest eigenvalue of the Hermitian matrix `C + iσ/2`; negative values
/// violate the uncertainty principle.
pub fn min_physical_eigenvalue(c: &Matrix4<f64>) -> f64 {
    let s = symplectic_form();
    let m = Matrix4::<Complex64>::from_fn(|i, j| Complex64::new(c[(i, j)], 0.5 * s[(i, j)]));
    m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest `|C - Cᵀ|` entry relative to the largest `|C|` entry.
pub fn asymmetry(c: &Matrix4<f64>) -> f64 {
    let scale = c.amax().max(f64::MIN_POSITIVE);
    (c - c.transpose()).amax() / scale
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMatrices {
    /// Quadratic Hamiltonian `Ĥ` (real symmetric).
    pub hamiltonian: Matrix4<f64>,
    /// Dissipation matrix `Γ` (Hermitian).
    pub dissipation: Matrix4<Complex64>,
    pub drift: Matrix4<f64>,
    pub diffusion: Matrix4<f64>,
}

/// Matrices at the orbit point `state` (time `state.t`), using the
/// configured mechanical form and cavity detuning.
pub fn assemble_matrices(cfg: &ModelConfig, state: &MeanFieldState) -> SystemMatrices {
    assemble_with(cfg, state, cfg.mechanical_form, cfg.matrix_detuning)
}

pub fn assemble_with(
    cfg: &ModelConfig,
    state: &MeanFieldState,
    form: MechanicalForm,
    detuning: MatrixDetuning,
) -> SystemMatrices {
    let t = state.t;
    let nu = cfg.frequency_at(t);
    let gamma = cfg.damping_at(t);
    let delta = match detuning {
        MatrixDetuning::Dressed => state.effective_detuning(cfg),
        MatrixDetuning::Bare => cfg.detuning,
    };
    let (hx, hp) = match form {
        MechanicalForm::Rotating => (nu / 2.0, nu / 2.0),
        MechanicalForm::Exact => (nu * nu / (2.0 * NU0), NU0 / 2.0),
    };
    let g_re = -cfg.coupling * state.alpha.re;
    let g_im = -cfg.coupling * state.alpha.im;
    let hamiltonian = Matrix4::new(
        -delta / 2.0, 0.0, g_re, 0.0,
        0.0, -delta / 2.0, g_im, 0.0,
        g_re, g_im, hx, 0.0,
        0.0, 0.0, 0.0, hp,
    );

    let k = cfg.kappa;
    let th = gamma * (2.0 * cfg.nbar + 1.0) / 2.0;
    let z = Complex64::new(0.0, 0.0);
    let re = |x: f64| Complex64::new(x, 0.0);
    let im = |x: f64| Complex64::new(0.0, x);
    let dissipation = Matrix4::new(
        re(k), im(k), z, z,
        im(-k), re(k), z, z,
        z, z, re(th), im(gamma / 2.0),
        z, z, im(-gamma / 2.0), re(th),
    ) * re(0.5);

    let s = symplectic_form();
    let drift = 2.0 * s * (hamiltonian + dissipation.map(|v| v.im));
    let diffusion = 2.0 * s * dissipation.map(|v| v.re) * s.transpose();
    SystemMatrices { hamiltonian, dissipation, drift, diffusion }
}

/// `(dr/dt, dC/dt)`.
pub fn moments_rhs(mats: &SystemMatrices, state: &GaussianState) -> (Vector4<f64>, Matrix4<f64>) {
    let h = &mats.drift;
    (h * state.r, h * state.c + state.c * h.transpose() + mats.diffusion)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagateOptions {
    pub tol: Tolerances,
    /// Propagate even if the orbit is not classified stable.
    pub allow_unstable: bool,
    /// Abort when `min eig(C + iσ/2)` drops below `-physicality_tol`.
    pub physicality_tol: f64,
    /// Abort when any `|C_jk|` exceeds this.
    pub divergence_threshold: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::new(1e-10, 1e-13),
            allow_unstable: false,
            physicality_tol: 1e-6,
            divergence_threshold: 1e12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianTrajectory {
    pub samples: Vec<GaussianState>,
    /// Largest relative asymmetry seen before each step's symmetrization.
    pub max_asymmetry: f64,
    /// Smallest `min eig(C + iσ/2)` over the samples.
    pub min_eigenvalue: f64,
    pub last: GaussianState,
}

type Packed = SVector<f64, 20>;

fn pack(r: &Vector4<f64>, c: &Matrix4<f64>) -> Packed {
    let mut z = Packed::zeros();
    z.fixed_rows_mut::<4>(0).copy_from(r);
    z.as_mut_slice()[4..].copy_from_slice(c.as_slice());
    z
}

fn unpack(t: f64, z: &Packed) -> GaussianState {
    GaussianState { t, r: z.fixed_rows::<4>(0).into(), c: Matrix4::from_column_slice(&z.as_slice()[4..]) }
}

/// Integrate the moment equations along `orbit` from `initial` over `horizon`,
/// sampling at `sample_times` (absolute, sorted). `C` is symmetrized after
/// every accepted step.
pub fn propagate(
    cfg: &ModelConfig,
    orbit: &MeanFieldOrbit,
    initial: &GaussianState,
    horizon: f64,
    sample_times: &[f64],
    opts: &PropagateOptions,
) -> Result<GaussianTrajectory, GaussianError> {
    if !(horizon > 0.0) {
        return Err(GaussianError::Horizon(horizon));
    }
    if !orbit.is_stable() && !opts.allow_unstable {
        return Err(GaussianError::UnstableOrbit);
    }
    let t0 = initial.t;
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next = sample_times.partition_point(|&s| s < t0);
    let mut max_asymmetry: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    let mut failure = None;
    let rhs = |t: f64, z: &Packed| {
        let s = unpack(t, z);
        let mats = assemble_matrices(cfg, &orbit.state_at(t));
        let (dr, dc) = moments_rhs(&mats, &s);
        pack(&dr, &dc)
    };
    let (t_end, z_end) = Dopri5::new(opts.tol).solve(rhs, t0, pack(&initial.r, &initial.c), t0 + horizon, |step| {
        let t1 = step.t1();
        step.project(|z| {
            let c = Matrix4::from_column_slice(&z.as_slice()[4..]);
            max_asymmetry = max_asymmetry.max(asymmetry(&c));
            let sym = 0.5 * (c + c.transpose());
            z.as_mut_slice()[4..].copy_from_slice(sym.as_slice());
        });
        while next < sample_times.len() && sample_times[next] <= t1 {
            let t = sample_times[next];
            let mut s = unpack(t, &step.eval(t));
            s.c = 0.5 * (s.c + s.c.transpose());
            let e = min_physical_eigenvalue(&s.c);
            min_eigenvalue = min_eigenvalue.min(e);
            if e < -opts.physicality_tol {
                failure = Some(GaussianError::PhysicalityViolation { t, min_eigenvalue: e });
                return Flow::Stop;
            }
            samples.push(s);
            next += 1;
        }
        let end = unpack(t1, step.y_end());
        if !end.c.iter().all(|v| v.is_finite()) || end.c.amax() > opts.divergence_threshold {
            failure = Some(GaussianError::Divergence { t: t1 });
            return Flow::Stop;
        }
        Flow::Continue
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(GaussianTrajectory { samples, max_asymmetry, min_eigenvalue, last: unpack(t_end, &z_end) })
}

/// Floquet data of the homogeneous system `dX/dt = H_eff(t) X` over one period.
#[derive(Debug, Clone, PartialEq)]
pub struct Monodromy {
    pub matrix: Matrix4<f64>,
    pub multipliers: Vec<Complex64>,
    /// `|multiplier|`, largest first.
    pub moduli: Vec<f64>,
    pub stable: bool,
}

impl Monodromy {
    fn from_matrix(matrix: Matrix4<f64>) -> Self {
        let multipliers: Vec<Complex64> = matrix.complex_eigenvalues().iter().copied().collect();
        let mut moduli: Vec<f64> = multipliers.iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        let stable = moduli.iter().all(|&m| m < 1.0 + 1e-6);
        Self { matrix, multipliers, moduli, stable }
    }

    pub fn spectral_radius(&self) -> f64 {
        self.moduli.first().copied().unwrap_or(0.0)
    }
}

/// Floquet stability of small deviations from the mean-field orbit.
///
/// Uses the exact mechanical form with the dressed detuning, which makes
/// `H_eff` the Jacobian of the mean-field equations: the multipliers are
/// those of the orbit itself.
pub fn monodromy_stability(cfg: &ModelConfig, orbit: &MeanFieldOrbit) -> Result<Monodromy, GaussianError> {
    monodromy(cfg, orbit, MechanicalForm::Exact, MatrixDetuning::Dressed)
}

pub fn monodromy(
    cfg: &ModelConfig,
    orbit: &MeanFieldOrbit,
    form: MechanicalForm,
    detuning: MatrixDetuning,
) -> Result<Monodromy, GaussianError> {
    let (_, x) = Dopri5::new(Tolerances::new(1e-11, 1e-14)).solve(
        |t, z: &SVector<f64, 16>| {
            let x = Matrix4::from_column_slice(z.as_slice());
            let h = assemble_with(cfg, &orbit.state_at(t), form, detuning).drift;
            SVector::<f64, 16>::from_column_slice((h * x).as_slice())
        },
        0.0,
        SVector::<f64, 16>::from_column_slice(Matrix4::<f64>::identity().as_slice()),
        orbit.period,
        |_| Flow::Continue,
    )?;
    Ok(Monodromy::from_matrix(Matrix4::from_column_slice(x.as_slice())))
}

/// Stroboscopic map of the covariance over one modulation period:
/// `C((n+1)T) = Φ C(nT) Φᵀ + Q`.
///
/// Built once from one period of integration; also carries the linear
/// functional that gives the period-averaged phonon number from `C(nT)`, and
/// the propagators to a set of intra-period nodes.
#[derive(Debug, Clone)]
pub struct CovariancePeriodMap {
    pub period: f64,
    pub phi: Matrix4<f64>,
    pub q: Matrix4<f64>,
    /// `(1/T)∫₀ᵀ X(t)ᵀ E X(t) dt` with `E` selecting the mechanical diagonal.
    occupation_weight: Matrix4<f64>,
    /// `(1/T)∫₀ᵀ tr(E Q(t)) dt`.
    occupation_offset: f64,
    nodes: Vec<(f64, Matrix4<f64>, Matrix4<f64>)>,
}

type PeriodState = SVector<f64, 49>;

impl CovariancePeriodMap {
    /// `node_count` equispaced nodes in `[0, T)` are kept for intra-period
    /// sampling.
    pub fn build(
        cfg: &ModelConfig,
        orbit: &MeanFieldOrbit,
        tol: Tolerances,
        node_count: usize,
    ) -> Result<Self, GaussianError> {
        let period = orbit.period;
        let mut z0 = PeriodState::zeros();
        z0.as_mut_slice()[..16].copy_from_slice(Matrix4::<f64>::identity().as_slice());
        let node_times: Vec<f64> = (0..node_count).map(|k| period * k as f64 / node_count as f64).collect();
        let mut nodes = Vec::with_capacity(node_count);
        let mut next = 0;
        let split = |z: &PeriodState| {
            (Matrix4::from_column_slice(&z.as_slice()[..16]), Matrix4::from_column_slice(&z.as_slice()[16..32]))
        };
        if node_count > 0 {
            nodes.push((0.0, Matrix4::identity(), Matrix4::zeros()));
            next = 1;
        }
        let (_, z_end) = Dopri5::new(tol).solve(
            |t, z: &PeriodState| {
                let (x, q) = split(z);
                let mats = assemble_matrices(cfg, &orbit.state_at(t));
                let h = mats.drift;
                let dx = h * x;
                let dq = h * q + q * h.transpose() + mats.diffusion;
                let ex = x.fixed_rows::<2>(2).into_owned();
                let dm = ex.transpose() * ex;
                let mut dz = PeriodState::zeros();
                let s = dz.as_mut_slice();
                s[..16].copy_from_slice(dx.as_slice());
                s[16..32].copy_from_slice(dq.as_slice());
                s[32..48].copy_from_slice(dm.as_slice());
                s[48] = q[(2, 2)] + q[(3, 3)];
                dz
            },
            0.0,
            z0,
            period,
            |step| {
                while next < node_times.len() && node_times[next] <= step.t1() {
                    let t = node_times[next];
                    let (x, q) = split(&step.eval(t));
                    nodes.push((t, x, 0.5 * (q + q.transpose())));
                    next += 1;
                }
                Flow::Continue
            },
        )?;
        let (phi, q) = split(&z_end);
        let m = Matrix4::from_column_slice(&z_end.as_slice()[32..48]);
        Ok(Self {
            period,
            phi,
            q: 0.5 * (q + q.transpose()),
            occupation_weight: 0.5 * (m + m.transpose()) / period,
            occupation_offset: z_end[48] / period,
            nodes,
        })
    }

    pub fn step(&self, c: &Matrix4<f64>) -> Matrix4<f64> {
        let next = self.phi * c * self.phi.transpose() + self.q;
        0.5 * (next + next.transpose())
    }

    /// Time average of `⟨m⟩` over the period that starts with covariance `c`.
    pub fn mean_occupation(&self, c: &Matrix4<f64>) -> f64 {
        0.5 * ((self.occupation_weight * c).trace() + self.occupation_offset - 1.0)
    }

    /// `(t, C(t))` at the intra-period nodes for a period starting from `c`,
    /// as computed (not symmetrized).
    pub fn node_states<'a>(&'a self, c: &'a Matrix4<f64>) -> impl Iterator<Item = (f64, Matrix4<f64>)> + 'a {
        self.nodes.iter().map(move |(t, x, q)| (*t, x * c * x.transpose() + q))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn spectral_radius(&self) -> f64 {
        Monodromy::from_matrix(self.phi).spectral_radius()
    }

    /// T-periodic covariance `C = Φ C Φᵀ + Q`, if `Φ` is contracting.
    pub fn periodic_solution(&self) -> Option<Matrix4<f64>> {
        let a = SMatrix::<f64, 16, 16>::identity() - self.phi.kronecker(&self.phi);
        let b = SVector::<f64, 16>::from_column_slice(self.q.as_slice());
        let x = a.lu().solve(&b)?;
        let c = Matrix4::from_column_slice(x.as_slice());
        Some(0.5 * (c + c.transpose()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{find_periodic_orbit, MeanFieldOptions};
    use crate::model::{Drive, Waveform};

    fn orbit_for(cfg: &ModelConfig) -> MeanFieldOrbit {
        find_periodic_orbit(cfg, &MeanFieldOptions::default()).unwrap()
    }

    /// Dense solve of `H C + C Hᵀ + J = 0`.
    fn lyapunov(h: &Matrix4<f64>, j: &Matrix4<f64>) -> Matrix4<f64> {
        let id = Matrix4::<f64>::identity();
        let a = id.kronecker(h) + h.kronecker(&id);
        let b = -SVector::<f64, 16>::from_column_slice(j.as_slice());
        let x = a.lu().solve(&b).unwrap();
        Matrix4::from_column_slice(x.as_slice())
    }

    #[test]
    fn phonon_number_formula() {
        assert_eq!(phonon_number(&thermal_initial_state(0.0).c), 0.0);
        assert_eq!(thermal_initial_state(10.0).c[(2, 2)], 10.5);
        assert_eq!(phonon_number(&thermal_initial_state(10.0).c), 10.0);
        let mut c = Matrix4::identity() * 0.5;
        c[(2, 2)] = 2.0;
        c[(3, 3)] = 0.125;
        assert_eq!(phonon_number(&c), 0.5625);
        for m in [0.0, 0.3, 7.0] {
            assert!(min_physical_eigenvalue(&thermal_initial_state(m).c) >= -1e-15);
        }
    }

    #[test]
    fn uncertainty_check_flags_oversqueezed_state() {
        let mut c = thermal_initial_state(0.0).c;
        c[(2, 2)] = 2.0;
        c[(3, 3)] = 0.1; // 2 · 0.1 < 1/4
        assert!(min_physical_eigenvalue(&c) < -0.01);
        c[(3, 3)] = 0.125;
        assert!(min_physical_eigenvalue(&c).abs() < 1e-12);
    }

    #[test]
    fn matrix_structure() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.02, 2.0);
        cfg.gamma0 = 0.01;
        cfg.nbar = 3.0;
        let s = MeanFieldState { t: 0.0, alpha: Complex64::new(1.5, -0.5), beta: Complex64::new(0.25, 0.1) };
        let m = assemble_matrices(&cfg, &s);
        let dprime = cfg.detuning + 2.0 * cfg.coupling * 0.25;
        assert_eq!(m.hamiltonian[(0, 2)], -0.02 * 1.5);
        assert_eq!(m.hamiltonian[(1, 2)], -0.02 * -0.5);
        assert_eq!(m.hamiltonian[(0, 3)], 0.0);
        assert_eq!(m.hamiltonian, m.hamiltonian.transpose());
        let h = m.drift;
        let expect_cav = [[-0.05, -dprime], [dprime, -0.05]];
        let expect_mech = [[-0.005, 1.0], [-1.0, -0.005]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[(i, j)] - expect_cav[i][j]).abs() < 1e-15);
                assert!((h[(i + 2, j + 2)] - expect_mech[i][j]).abs() < 1e-15);
            }
        }
        let j = m.diffusion;
        assert_eq!(j, Matrix4::from_diagonal(&Vector4::new(0.05, 0.05, 0.01 * 3.5, 0.01 * 3.5)));
        assert!(m.dissipation.iter().zip(m.dissipation.adjoint().iter()).all(|(a, b)| (a - b).norm() < 1e-15));

        // Real α: the (2,3) coupling vanishes.
        let real = MeanFieldState { alpha: Complex64::new(1.5, 0.0), ..s };
        let m = assemble_matrices(&cfg, &real);
        assert_eq!(m.hamiltonian[(1, 2)], 0.0);
        assert_eq!(m.hamiltonian[(2, 1)], 0.0);

        // χ₀ = 0 decouples.
        cfg.coupling = 0.0;
        let h = assemble_matrices(&cfg, &s).drift;
        for (i, k) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(h[(i, k)], 0.0);
            assert_eq!(h[(k, i)], 0.0);
        }
    }

    #[test]
    fn hamiltonian_limit_is_symplectic() {
        let mut cfg = ModelConfig::unmodulated(0.0, -0.7, 0.03, 0.0);
        cfg.waveform = Waveform::sinusoidal(0.2, 0.5).unwrap();
        let s = MeanFieldState { t: 0.4, alpha: Complex64::new(1.1, 0.3), beta: Complex64::new(-0.2, 0.0) };
        let sig = symplectic_form();
        for form in [MechanicalForm::Rotating, MechanicalForm::Exact] {
            let m = assemble_with(&cfg, &s, form, MatrixDetuning::Dressed);
            assert_eq!(m.diffusion, Matrix4::zeros());
            let err = m.drift.transpose() * sig + sig * m.drift;
            assert!(err.amax() < 1e-15, "{form:?}");
        }
    }

    #[test]
    fn exact_form_drift_is_mean_field_jacobian_structure() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.0, 0.0);
        cfg.waveform = Waveform::sinusoidal(0.3, 0.5).unwrap();
        let s = MeanFieldState { t: 0.9, ..MeanFieldState::zero(0.9) };
        let nu = cfg.frequency_at(0.9);
        let h = assemble_with(&cfg, &s, MechanicalForm::Exact, MatrixDetuning::Dressed).drift;
        assert!((h[(2, 3)] - 1.0).abs() < 1e-15);
        assert!((h[(3, 2)] + nu * nu).abs() < 1e-15);
        let h = assemble_with(&cfg, &s, MechanicalForm::Rotating, MatrixDetuning::Dressed).drift;
        assert!((h[(2, 3)] - nu).abs() < 1e-15 && (h[(3, 2)] + nu).abs() < 1e-15);
    }

    #[test]
    fn bare_detuning_switch() {
        let cfg = ModelConfig { matrix_detuning: MatrixDetuning::Bare, ..ModelConfig::unmodulated(0.05, -1.0, 0.02, 2.0) };
        let s = MeanFieldState { t: 0.0, alpha: Complex64::new(1.0, 0.0), beta: Complex64::new(3.0, 0.0) };
        assert_eq!(assemble_matrices(&cfg, &s).drift[(1, 0)], -1.0);
    }

    #[test]
    fn rhs_vanishes_at_fixed_points() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.0, 0.0);
        cfg.gamma0 = 0.01;
        cfg.nbar = 10.0;
        let m = assemble_matrices(&cfg, &MeanFieldState::zero(0.0));
        let (dr, dc) = moments_rhs(&m, &GaussianState { t: 0.0, ..thermal_initial_state(10.0) });
        assert_eq!(dr, Vector4::zeros());
        assert!(dc.amax() < 1e-15);

        // Coupled, stable: algebraic Lyapunov solution is stationary.
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.01, 1.0);
        cfg.gamma0 = 1e-3;
        cfg.nbar = 2.0;
        let s = MeanFieldState { t: 0.0, alpha: cfg.alpha0(), beta: Complex64::new(0.0, 0.0) };
        let m = assemble_matrices(&cfg, &s);
        let c = lyapunov(&m.drift, &m.diffusion);
        let (_, dc) = moments_rhs(&m, &GaussianState { t: 0.0, r: Vector4::zeros(), c });
        assert!(dc.amax() < 1e-12 * c.amax());
    }

    #[test]
    fn closed_system_conserves_phonons() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.0, 0.0);
        cfg.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        let orbit = orbit_for(&cfg);
        let times: Vec<f64> = (0..=50).map(|k| k as f64).collect();
        let tr = propagate(&cfg, &orbit, &thermal_initial_state(3.0), 50.0, &times, &PropagateOptions::default())
            .unwrap();
        assert_eq!(tr.samples.len(), times.len());
        for s in &tr.samples {
            assert!((s.phonon_number() - 3.0).abs() < 1e-8);
            assert!(s.r.norm() < 1e-8);
        }
    }

    #[test]
    fn thermalization_matches_closed_form() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.0, 0.0);
        cfg.gamma0 = 1e-3;
        cfg.nbar = 10.0;
        let orbit = orbit_for(&cfg);
        let times: Vec<f64> = (0..=20).map(|k| 100.0 * k as f64).collect();
        let tr = propagate(&cfg, &orbit, &thermal_initial_state(0.0), 2000.0, &times, &PropagateOptions::default())
            .unwrap();
        for s in &tr.samples {
            let exact = 10.0 * (1.0 - (-1e-3 * s.t).exp());
            assert!((s.phonon_number() - exact).abs() < 1e-3, "t={}", s.t);
        }
    }

    #[test]
    fn propagation_reaches_lyapunov_solution() {
        let mut cfg = ModelConfig::unmodulated(0.1, -1.0, 0.02, 2.0);
        cfg.gamma0 = 1e-3;
        cfg.nbar = 1.0;
        let orbit = orbit_for(&cfg);
        let m = assemble_matrices(&cfg, &orbit.state_at(0.0));
        let oracle = lyapunov(&m.drift, &m.diffusion);
        let tr = propagate(&cfg, &orbit, &thermal_initial_state(1.0), 3000.0, &[], &PropagateOptions::default())
            .unwrap();
        let err = (tr.last.c - oracle).norm() / oracle.norm();
        assert!(err < 1e-6, "{err:e}");
        assert!(tr.max_asymmetry < 1e-10);
    }

    #[test]
    fn unstable_orbit_is_refused() {
        let mut cfg = ModelConfig::unmodulated(0.1, -1.0, 0.0, 1.0);
        cfg.waveform = Waveform::sinusoidal(0.2, 2.0).unwrap();
        let orbit = orbit_for(&cfg);
        if !orbit.is_stable() {
            let r = propagate(&cfg, &orbit, &thermal_initial_state(0.0), 1.0, &[], &PropagateOptions::default());
            assert_eq!(r.unwrap_err(), GaussianError::UnstableOrbit);
        }
        assert!(propagate(&cfg, &orbit, &thermal_initial_state(0.0), 0.0, &[], &PropagateOptions::default()).is_err());
    }

    #[test]
    fn monodromy_of_decoupled_constant_system() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.0, 0.0);
        cfg.waveform = Waveform::zero(0.5).unwrap();
        cfg.gamma0 = 0.01;
        let orbit = orbit_for(&cfg);
        let m = monodromy_stability(&cfg, &orbit).unwrap();
        let t = cfg.period();
        let mut expected = [(-0.05 * t).exp(), (-0.05 * t).exp(), (-0.005 * t).exp(), (-0.005 * t).exp()];
        expected.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in m.moduli.iter().zip(expected) {
            assert!((a - b).abs() < 1e-8 * b, "{a} vs {b}");
        }
        assert!(m.stable);
    }

    #[test]
    fn weakly_coupled_constant_system_is_stable() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.01, 1.0);
        cfg.gamma0 = 1e-3;
        let orbit = orbit_for(&cfg);
        let h = assemble_with(&cfg, &orbit.state_at(0.0), MechanicalForm::Exact, MatrixDetuning::Dressed).drift;
        assert!(h.complex_eigenvalues().iter().all(|z| z.re < 0.0));
        assert!(monodromy_stability(&cfg, &orbit).unwrap().stable);
    }

    #[test]
    fn mathieu_resonance_is_detected_and_grows() {
        let mut cfg = ModelConfig::unmodulated(1e-9, -1.0, 0.0, 0.0);
        cfg.kappa = 1e-9;
        cfg.waveform = Waveform::sinusoidal(0.1, 2.0).unwrap();
        let orbit = orbit_for(&cfg);
        let m = monodromy_stability(&cfg, &orbit).unwrap();
        assert!(!m.stable);
        let rho = m.spectral_radius();
        assert!(rho > 1.01);

        // Long-time growth of the mechanical block matches ρ^n.
        let n = 20;
        let mut x = Matrix4::<f64>::identity();
        for _ in 0..n {
            x = m.matrix * x;
        }
        let direct = monodromy(&cfg, &orbit, MechanicalForm::Exact, MatrixDetuning::Dressed).unwrap().matrix;
        assert_eq!(direct, m.matrix);
        let growth = x.fixed_view::<2, 2>(2, 2).norm().powf(1.0 / n as f64);
        assert!((growth - rho).abs() < 0.02 * rho, "{growth} vs {rho}");

        // The number-conserving form shows no parametric resonance.
        let rot = monodromy(&cfg, &orbit, MechanicalForm::Rotating, MatrixDetuning::Dressed).unwrap();
        assert!(rot.spectral_radius() <= 1.0 + 1e-6);
        // Off resonance the exact form is neutral.
        cfg.waveform = Waveform::sinusoidal(0.1, 1.3).unwrap();
        let orbit = orbit_for(&cfg);
        assert!(monodromy_stability(&cfg, &orbit).unwrap().spectral_radius() < 1.0 + 1e-6);
    }

    #[test]
    fn monodromy_equals_mean_field_period_jacobian() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.02, 2.0);
        cfg.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        cfg.gamma0 = 1e-3;
        let orbit = orbit_for(&cfg);
        assert!(orbit.is_stable());
        let m = monodromy_stability(&cfg, &orbit).unwrap();
        for (a, b) in m.moduli.iter().zip(&orbit.multipliers) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn period_map_matches_direct_propagation() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.01, 1.0);
        cfg.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        cfg.gamma0 = 2e-3;
        cfg.gamma_hat = 1e-3;
        cfg.nbar = 2.0;
        let orbit = orbit_for(&cfg);
        let map = CovariancePeriodMap::build(&cfg, &orbit, Tolerances::new(1e-11, 1e-14), 16).unwrap();
        let t = orbit.period;
        let n = 5;
        let fine: Vec<f64> = (0..=n * 400).map(|k| t * k as f64 / 400.0).collect();
        let c0 = thermal_initial_state(3.0);
        let tr = propagate(&cfg, &orbit, &c0, n as f64 * t, &fine, &PropagateOptions::default()).unwrap();
        let mut c = c0.c;
        for p in 0..n {
            // Trapezoid average of the directly propagated samples.
            let slice = &tr.samples[p * 400..=(p + 1) * 400];
            let avg = slice.windows(2).map(|w| 0.5 * (w[0].phonon_number() + w[1].phonon_number())).sum::<f64>()
                / 400.0;
            assert!((map.mean_occupation(&c) - avg).abs() < 1e-6 * avg.abs().max(1.0), "period {p}");
            for (tn, cn) in map.node_states(&c) {
                let k = p * 400 + (tn / t * 400.0).round() as usize;
                assert!((cn - tr.samples[k].c).amax() < 1e-7 * cn.amax());
            }
            c = map.step(&c);
            assert!((c - tr.samples[(p + 1) * 400].c).amax() < 1e-7 * c.amax());
        }
    }

    #[test]
    fn period_map_fixed_point_is_stein_solution() {
        let mut cfg = ModelConfig::unmodulated(0.05, -1.0, 0.01, 1.0);
        cfg.waveform = Waveform::sinusoidal(0.1, 0.5).unwrap();
        cfg.drive = Drive::Pump(cfg.pump());
        let orbit = orbit_for(&cfg);
        let map = CovariancePeriodMap::build(&cfg, &orbit, Tolerances::new(1e-11, 1e-14), 0).unwrap();
        assert!(map.spectral_radius() < 1.0);
        let fixed = map.periodic_solution().unwrap();
        let mut c = thermal_initial_state(0.0).c;
        for _ in 0..2000 {
            c = map.step(&c);
        }
        assert!((c - fixed).norm() < 1e-8 * fixed.norm());
        assert!(min_physical_eigenvalue(&fixed) > -1e-10);
    }

    #[test]
    fn covariance_labels_match_entries() {
        let c = Matrix4::from_fn(|i, j| (10 * (i.min(j) + 1) + i.max(j) + 1) as f64);
        let e = independent_entries(&c);
        for (label, v) in COVARIANCE_LABELS.iter().zip(e) {
            assert_eq!(*label, format!("C{}", v as usize));
        }
    }
}
