#ifndef MODCOOL_H
#define MODCOOL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum ModcoolStatus {
  MODCOOL_OK = 0,
  MODCOOL_NULL_POINTER = 1,
  MODCOOL_INVALID_UTF8 = 2,
  MODCOOL_INVALID_CONFIG = 3,
  MODCOOL_NUMERICAL = 4,
  MODCOOL_BUFFER_TOO_SMALL = 5,
  MODCOOL_PANIC = 6,
} ModcoolStatus;

typedef enum ModcoolMode {
  MODCOOL_MODE_BOTH = 0,
  MODCOOL_MODE_ANALYTIC_ONLY = 1,
  MODCOOL_MODE_NUMERIC_ONLY = 2,
} ModcoolMode;

typedef enum ModcoolStability {
  MODCOOL_STABLE = 0,
  MODCOOL_UNSTABLE = 1,
  MODCOOL_UNDETERMINED = 2,
  // Numerics were not run.
  MODCOOL_NOT_RUN = 3,
} ModcoolStability;

// Opaque parsed configuration.
typedef struct ModcoolConfig ModcoolConfig;

// Opaque sideband weights.
typedef struct ModcoolWeights ModcoolWeights;

// Analytic prediction at one red detuning. Undefined quantities are NaN.
typedef struct ModcoolPrediction {
  double red_detuning;
  double a_minus;
  double a_plus;
  double occupation;
  double cooling_rate;
  double bath_corrected;
} ModcoolPrediction;

// Summary of a full run. Undefined quantities are NaN.
typedef struct ModcoolRunSummary {
  enum ModcoolStability stability;
  double red_detuning;
  double mean_occupation;
  double fit_rate;
  double fit_asymptote;
  double monodromy_radius;
  double covariance_radius;
  uint64_t periods;
  double analytic_occupation;
  double analytic_rate;
  double analytic_bath_corrected;
} ModcoolRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message into `buf` (NUL-terminated, truncated to
// `len`). Returns the length the full message needs including the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t modcool_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *modcool_version(void);

// Parse a TOML configuration.
//
// # Safety
// `toml` must be a NUL-terminated string; `out` must be valid for writes.
enum ModcoolStatus modcool_config_from_toml(const char *toml, struct ModcoolConfig **out);

// # Safety
// `cfg` must be null or a handle from [`modcool_config_from_toml`] not yet freed.
void modcool_config_free(struct ModcoolConfig *cfg);

// Red detuning `Δ = -δ` configured in the file.
//
// # Safety
// `cfg` must be a live handle; `out` must be valid for writes.
enum ModcoolStatus modcool_config_red_detuning(const struct ModcoolConfig *cfg, double *out);

// Sideband weights of the configured waveform.
//
// # Safety
// `cfg` must be a live handle; `out` must be valid for writes.
enum ModcoolStatus modcool_weights_new(const struct ModcoolConfig *cfg,
                                       struct ModcoolWeights **out);

// # Safety
// `w` must be null or a handle from [`modcool_weights_new`] not yet freed.
void modcool_weights_free(struct ModcoolWeights *w);

// Truncation order L; the weights cover `l = -L..=L`.
//
// # Safety
// `w` must be a live handle or null (returns 0).
uint64_t modcool_weights_truncation(const struct ModcoolWeights *w);

// Copy the `2L + 1` weights, ordered from `l = -L`, into `buf`.
//
// # Safety
// `w` must be a live handle; `buf` must be valid for `len` doubles.
enum ModcoolStatus modcool_weights_copy(const struct ModcoolWeights *w, double *buf, size_t len);

// Analytic rates and occupation at red detuning `red_detuning`.
//
// # Safety
// `cfg` and `w` must be live handles; `out` must be valid for writes.
enum ModcoolStatus modcool_predict(const struct ModcoolConfig *cfg,
                                   const struct ModcoolWeights *w,
                                   double red_detuning,
                                   struct ModcoolPrediction *out);

// Full run at red detuning `red_detuning` with the configured controls.
//
// # Safety
// `cfg` must be a live handle; `out` must be valid for writes.
enum ModcoolStatus modcool_run(const struct ModcoolConfig *cfg,
                               double red_detuning,
                               enum ModcoolMode mode,
                               struct ModcoolRunSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODCOOL_H */
