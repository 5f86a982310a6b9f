#ifndef GAT_H
#define GAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result codes of every fallible call.
typedef enum GatStatus {
  GAT_STATUS_OK = 0,
  // A required pointer argument was null.
  GAT_STATUS_NULL_POINTER = 1,
  // An argument is out of range or inconsistent.
  GAT_STATUS_INVALID_INPUT = 2,
  // The query lies outside the solution's domain or grid.
  GAT_STATUS_DOMAIN = 3,
  // A grid could not be built or grids are incompatible.
  GAT_STATUS_GRID = 4,
  // A numerical method did not reach its accuracy target.
  GAT_STATUS_NUMERICAL = 5,
  // Too few paths for the requested estimator.
  GAT_STATUS_INSUFFICIENT_DATA = 6,
  // Reading or writing a file failed.
  GAT_STATUS_IO = 7,
  // A file is not in the expected format.
  GAT_STATUS_FORMAT = 8,
  // The output buffer is too small; the required length was reported.
  GAT_STATUS_BUFFER_TOO_SMALL = 9,
  // An internal panic was caught.
  GAT_STATUS_PANIC = 10,
} GatStatus;

// Opaque Monte Carlo ensemble.
typedef struct GatEnsemble GatEnsemble;

// Opaque finite-difference solution.
typedef struct GatPde GatPde;

// Opaque perturbation-series solution.
typedef struct GatPerturbation GatPerturbation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len - 1` bytes) and returns the full message
// length in bytes, excluding the terminator. Pass a null `buf` to query the
// length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t gat_last_error_message(char *buf, uintptr_t len);

// Library version as a static NUL-terminated string.
const char *gat_version(void);

// Black-Scholes call price `C(s, k, τ, σ, r)`; NaN for invalid inputs.
double gat_bs_call(double s, double k, double tau, double sigma, double r);

// Zero-curvature residual `‖P_perp(α + r)‖` of one coefficient set.
//
// # Safety
// `alpha` and `r` point to `n_assets` values, `sigma` to
// `n_assets * n_factors` values (row-major); `out` is writable.
enum GatStatus gat_zc_residual(const double *alpha,
                               const double *sigma,
                               const double *r,
                               uintptr_t n_assets,
                               uintptr_t n_factors,
                               double *out);

// Arbitrage measure `ρ = J†(α + r)` in the canonical kernel basis. Its
// length (the kernel dimension) is written to `out_len`; when it exceeds
// `capacity`, nothing is copied and `BufferTooSmall` is returned.
//
// # Safety
// As [`gat_zc_residual`]; `out_rho` points to `capacity` writable values
// (may be null when `capacity` is 0) and `out_len` is writable.
enum GatStatus gat_rho(const double *alpha,
                       const double *sigma,
                       const double *r,
                       uintptr_t n_assets,
                       uintptr_t n_factors,
                       double *out_rho,
                       uintptr_t capacity,
                       uintptr_t *out_len);

// Builds the second-order perturbation solution for a call with strike
// `k`, maturity `maturity`, volatility `sigma`, arbitrage measure `rho` and
// rate `r` on the default transform grid.
//
// # Safety
// `out` must be writable; on success it receives a handle to free with
// [`gat_perturbation_free`].
enum GatStatus gat_perturbation_new(double k,
                                    double maturity,
                                    double sigma,
                                    double rho,
                                    double r,
                                    struct GatPerturbation **out);

// Discounted price `Φ(t, X)`.
//
// # Safety
// `h` is a live handle; `out` is writable.
enum GatStatus gat_perturbation_price(const struct GatPerturbation *h,
                                      double x,
                                      double t,
                                      double *out);

// Undiscounted price `Ψ(t, S)` at the rate given at construction.
//
// # Safety
// `h` is a live handle; `out` is writable.
enum GatStatus gat_perturbation_price_undiscounted(const struct GatPerturbation *h,
                                                   double s,
                                                   double t,
                                                   double *out);

// Releases a perturbation handle; null is ignored.
//
// # Safety
// `h` is null or a handle not yet freed.
void gat_perturbation_free(struct GatPerturbation *h);

// Solves the pricing PDE on a centred `nx × nt` grid, for the discounted
// price (`undiscounted = false`) or the undiscounted price at rate `r`.
//
// # Safety
// `out` must be writable; on success it receives a handle to free with
// [`gat_pde_free`].
enum GatStatus gat_pde_solve(double k,
                             double maturity,
                             double sigma,
                             double rho,
                             double r,
                             uintptr_t nx,
                             uintptr_t nt,
                             bool undiscounted,
                             struct GatPde **out);

// Price at `(x, t)`; `t` must be a time node of the grid.
//
// # Safety
// `h` is a live handle; `out` is writable.
enum GatStatus gat_pde_value(const struct GatPde *h, double x, double t, double *out);

// Releases a finite-difference handle; null is ignored.
//
// # Safety
// `h` is null or a handle not yet freed.
void gat_pde_free(struct GatPde *h);

// Simulates `paths` paths of the constant-coefficient model on
// `[0, horizon]` with step `dt` and master seed `seed`.
//
// # Safety
// Market pointers as in [`gat_zc_residual`]; `s0` points to `n_assets`
// values; `out` is writable and receives a handle to free with
// [`gat_ensemble_free`].
enum GatStatus gat_ensemble_simulate(const double *alpha,
                                     const double *sigma,
                                     const double *r,
                                     uintptr_t n_assets,
                                     uintptr_t n_factors,
                                     const double *s0,
                                     uintptr_t paths,
                                     double dt,
                                     double horizon,
                                     uint64_t seed,
                                     struct GatEnsemble **out);

// Path, step, asset and factor counts of an ensemble.
//
// # Safety
// `h` is a live handle; every out-pointer is writable.
enum GatStatus gat_ensemble_dims(const struct GatEnsemble *h,
                                 uintptr_t *paths,
                                 uintptr_t *steps,
                                 uintptr_t *assets,
                                 uintptr_t *factors);

// Asset value `Ŝ^asset` on path `path` at step `step`.
//
// # Safety
// `h` is a live handle; `out` is writable.
enum GatStatus gat_ensemble_price(const struct GatEnsemble *h,
                                  uintptr_t path,
                                  uintptr_t step,
                                  uintptr_t asset,
                                  double *out);

// Bucket-averaged empirical arbitrage measure over `[t_lo, t_hi]` with the
// default estimator settings, for the constant-coefficient model the
// ensemble was simulated from. Writes the kernel dimension to `out_len`
// and, when it fits in `capacity`, the estimates and standard errors.
//
// # Safety
// `h` is a live handle; market pointers as in [`gat_zc_residual`];
// `out_rho` and `out_se` point to `capacity` writable values (may be null
// when `capacity` is 0); `out_len` is writable.
enum GatStatus gat_ensemble_empirical_rho(const struct GatEnsemble *h,
                                          const double *alpha,
                                          const double *sigma,
                                          const double *r,
                                          double t_lo,
                                          double t_hi,
                                          double *out_rho,
                                          double *out_se,
                                          uintptr_t capacity,
                                          uintptr_t *out_len);

// Writes the ensemble to a binary file.
//
// # Safety
// `h` is a live handle; `path` is a NUL-terminated UTF-8 string.
enum GatStatus gat_ensemble_write(const struct GatEnsemble *h, const char *path);

// Reads an ensemble from a binary file.
//
// # Safety
// `path` is a NUL-terminated UTF-8 string; `out` is writable and receives a
// handle to free with [`gat_ensemble_free`].
enum GatStatus gat_ensemble_read(const char *path, struct GatEnsemble **out);

// Releases an ensemble handle; null is ignored.
//
// # Safety
// `h` is null or a handle not yet freed.
void gat_ensemble_free(struct GatEnsemble *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAT_H */
