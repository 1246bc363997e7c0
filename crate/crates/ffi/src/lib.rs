//! C interface to `modcool`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns a [`ModcoolStatus`]; the
//! message of the most recent failure on the calling thread is available
//! through [`modcool_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use modcool::config::RunConfig;
use modcool::experiments::{run_single, OutputMode};
use modcool::meanfield::Stability;
use modcool::rates::{predict, sideband_weights, SidebandWeights};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModcoolStatus {
    ModcoolOk = 0,
    ModcoolNullPointer = 1,
    ModcoolInvalidUtf8 = 2,
    ModcoolInvalidConfig = 3,
    ModcoolNumerical = 4,
    ModcoolBufferTooSmall = 5,
    ModcoolPanic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModcoolMode {
    ModcoolModeBoth = 0,
    ModcoolModeAnalyticOnly = 1,
    ModcoolModeNumericOnly = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModcoolStability {
    ModcoolStable = 0,
    ModcoolUnstable = 1,
    ModcoolUndetermined = 2,
    /// Numerics were not run.
    ModcoolNotRun = 3,
}

/// Opaque parsed configuration.
pub struct ModcoolConfig {
    inner: RunConfig,
}

/// Opaque sideband weights.
pub struct ModcoolWeights {
    inner: SidebandWeights,
}

/// Analytic prediction at one red detuning. Undefined quantities are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ModcoolPrediction {
    pub red_detuning: f64,
    pub a_minus: f64,
    pub a_plus: f64,
    pub occupation: f64,
    pub cooling_rate: f64,
    pub bath_corrected: f64,
}

/// Summary of a full run. Undefined quantities are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ModcoolRunSummary {
    pub stability: ModcoolStability,
    pub red_detuning: f64,
    pub mean_occupation: f64,
    pub fit_rate: f64,
    pub fit_asymptote: f64,
    pub monodromy_radius: f64,
    pub covariance_radius: f64,
    pub periods: u64,
    pub analytic_occupation: f64,
    pub analytic_rate: f64,
    pub analytic_bath_corrected: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn guard(f: impl FnOnce() -> Result<(), (ModcoolStatus, String)>) -> ModcoolStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ModcoolStatus::ModcoolOk,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            ModcoolStatus::ModcoolPanic
        }
    }
}

fn null(name: &str) -> (ModcoolStatus, String) {
    (ModcoolStatus::ModcoolNullPointer, format!("`{name}` is null"))
}

fn numerical(e: impl ToString) -> (ModcoolStatus, String) {
    (ModcoolStatus::ModcoolNumerical, e.to_string())
}

fn nan(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the length the full message needs including the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn modcool_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn modcool_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parse a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn modcool_config_from_toml(toml: *const c_char, out: *mut *mut ModcoolConfig) -> ModcoolStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (ModcoolStatus::ModcoolInvalidUtf8, e.to_string()))?;
        let inner = RunConfig::parse(text).map_err(|e| (ModcoolStatus::ModcoolInvalidConfig, e.to_string()))?;
        *out = Box::into_raw(Box::new(ModcoolConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from [`modcool_config_from_toml`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn modcool_config_free(cfg: *mut ModcoolConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Red detuning `Δ = -δ` configured in the file.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn modcool_config_red_detuning(cfg: *const ModcoolConfig, out: *mut f64) -> ModcoolStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = cfg.inner.red_detuning;
        Ok(())
    })
}

/// Sideband weights of the configured waveform.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn modcool_weights_new(cfg: *const ModcoolConfig, out: *mut *mut ModcoolWeights) -> ModcoolStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let inner = sideband_weights(&cfg.inner.model.waveform, cfg.inner.weights.into()).map_err(numerical)?;
        *out = Box::into_raw(Box::new(ModcoolWeights { inner }));
        Ok(())
    })
}

/// # Safety
/// `w` must be null or a handle from [`modcool_weights_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn modcool_weights_free(w: *mut ModcoolWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Truncation order L; the weights cover `l = -L..=L`.
///
/// # Safety
/// `w` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn modcool_weights_truncation(w: *const ModcoolWeights) -> u64 {
    w.as_ref().map_or(0, |w| w.inner.truncation() as u64)
}

/// Copy the `2L + 1` weights, ordered from `l = -L`, into `buf`.
///
/// # Safety
/// `w` must be a live handle; `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn modcool_weights_copy(w: *const ModcoolWeights, buf: *mut f64, len: usize) -> ModcoolStatus {
    guard(|| {
        let w = w.as_ref().ok_or_else(|| null("w"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = 2 * w.inner.truncation() + 1;
        if len < need {
            return Err((ModcoolStatus::ModcoolBufferTooSmall, format!("need {need} doubles, got {len}")));
        }
        for (i, (_, v)) in w.inner.iter().enumerate() {
            *buf.add(i) = v;
        }
        Ok(())
    })
}

/// Analytic rates and occupation at red detuning `red_detuning`.
///
/// # Safety
/// `cfg` and `w` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn modcool_predict(
    cfg: *const ModcoolConfig,
    w: *const ModcoolWeights,
    red_detuning: f64,
    out: *mut ModcoolPrediction,
) -> ModcoolStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let w = w.as_ref().ok_or_else(|| null("w"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !red_detuning.is_finite() {
            return Err((ModcoolStatus::ModcoolInvalidConfig, "red_detuning must be finite".into()));
        }
        let p = predict(&cfg.inner.model, &w.inner, red_detuning);
        *out = ModcoolPrediction {
            red_detuning,
            a_minus: p.a_minus,
            a_plus: p.a_plus,
            occupation: nan(p.mean_occupation),
            cooling_rate: p.cooling_rate,
            bath_corrected: nan(p.bath_corrected),
        };
        Ok(())
    })
}

/// Full run at red detuning `red_detuning` with the configured controls.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn modcool_run(
    cfg: *const ModcoolConfig,
    red_detuning: f64,
    mode: ModcoolMode,
    out: *mut ModcoolRunSummary,
) -> ModcoolStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !red_detuning.is_finite() {
            return Err((ModcoolStatus::ModcoolInvalidConfig, "red_detuning must be finite".into()));
        }
        let mode = match mode {
            ModcoolMode::ModcoolModeBoth => OutputMode::Both,
            ModcoolMode::ModcoolModeAnalyticOnly => OutputMode::AnalyticOnly,
            ModcoolMode::ModcoolModeNumericOnly => OutputMode::NumericOnly,
        };
        let r = run_single(&cfg.inner.model, red_detuning, &cfg.inner.controls, mode).map_err(numerical)?.record;
        *out = ModcoolRunSummary {
            stability: match r.stability {
                Some(Stability::Stable) => ModcoolStability::ModcoolStable,
                Some(Stability::Unstable) => ModcoolStability::ModcoolUnstable,
                Some(Stability::Undetermined) => ModcoolStability::ModcoolUndetermined,
                None => ModcoolStability::ModcoolNotRun,
            },
            red_detuning,
            mean_occupation: nan(r.mean_occupation),
            fit_rate: nan(r.fit_rate),
            fit_asymptote: nan(r.fit_asymptote),
            monodromy_radius: nan(r.monodromy_radius),
            covariance_radius: nan(r.covariance_radius),
            periods: r.periods.unwrap_or(0) as u64,
            analytic_occupation: nan(r.analytic_occupation),
            analytic_rate: nan(r.analytic_rate),
            analytic_bath_corrected: nan(r.analytic_bath_corrected),
        };
        if let Some(f) = r.failure {
            set_error(f);
        }
        Ok(())
    })
}
