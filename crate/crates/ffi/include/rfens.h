#ifndef RFENS_H
#define RFENS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RfensStatus {
  RFENS_STATUS_OK = 0,
  RFENS_STATUS_NULL_POINTER = 1,
  RFENS_STATUS_INVALID_PARAMETER = 2,
  RFENS_STATUS_DOMAIN = 3,
  RFENS_STATUS_SHAPE = 4,
  RFENS_STATUS_SOLVER = 5,
  RFENS_STATUS_INFEASIBLE = 6,
  RFENS_STATUS_INSTABILITY = 7,
  RFENS_STATUS_REGIME = 8,
  RFENS_STATUS_DEGENERATE = 9,
  RFENS_STATUS_SINGULAR = 10,
  RFENS_STATUS_FIT = 11,
  RFENS_STATUS_IO = 12,
  RFENS_STATUS_FORMAT = 13,
  RFENS_STATUS_PANIC = 14,
  RFENS_STATUS_OTHER = 15,
} RfensStatus;

// Opaque task eigenstructure.
typedef struct RfensSpectrum RfensSpectrum;

// Risk estimate and its components.
typedef struct RfensRisk {
  double kappa2;
  double rho;
  double gamma1;
  double gamma2;
  double bias_sq;
  double var_single;
  double risk;
  // Non-zero when the estimate is close to the interpolation peak.
  uint8_t near_interpolation;
} RfensRisk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Failure message of the previous call on this thread, empty after success. The
// pointer stays valid until the next call into this library on the thread.
const char *rfens_last_error_message(void);

// Builds a spectrum from `len` eigenvalues (non-increasing) and target
// weights.
//
// # Safety
// `eta` and `wbar` must point to `len` readable doubles; `out` must be
// writable.
enum RfensStatus rfens_spectrum_new(const double *eta,
                                    const double *wbar,
                                    size_t len,
                                    double noise_var,
                                    struct RfensSpectrum **out);

// Power-law spectrum with `len` modes.
//
// # Safety
// `out` must be writable.
enum RfensStatus rfens_spectrum_power_law(double alpha,
                                          double r,
                                          size_t len,
                                          double noise_var,
                                          struct RfensSpectrum **out);

// Loads a spectrum CSV.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RfensStatus rfens_spectrum_load(const char *path,
                                     double noise_var,
                                     struct RfensSpectrum **out);

// Number of modes, or 0 for a null handle.
//
// # Safety
// `spec` must be null or a live handle.
size_t rfens_spectrum_len(const struct RfensSpectrum *spec);

// Releases a spectrum. Null is ignored.
//
// # Safety
// `spec` must be null or a handle not yet freed.
void rfens_spectrum_free(struct RfensSpectrum *spec);

// Renormalized ridge `kappa_2` at `(P, N, lambda)`.
//
// # Safety
// `spec` must be a live handle; `out_kappa` must be writable.
enum RfensStatus rfens_solve_kappa2(const struct RfensSpectrum *spec,
                                    double p,
                                    double n,
                                    double lambda,
                                    double *out_kappa);

// Ensemble risk estimate at `(P, N, K, lambda)`.
//
// # Safety
// `spec` must be a live handle; `out` must be writable.
enum RfensStatus rfens_risk_ensemble(const struct RfensSpectrum *spec,
                                     uint64_t p,
                                     uint64_t n,
                                     uint64_t k,
                                     double lambda,
                                     struct RfensRisk *out);

// Risk-minimizing ridge with the default search.
//
// # Safety
// `spec` must be a live handle; `out_lambda` and `out` must be writable.
enum RfensStatus rfens_optimal_ridge(const struct RfensSpectrum *spec,
                                     uint64_t p,
                                     uint64_t n,
                                     uint64_t k,
                                     double *out_lambda,
                                     struct RfensRisk *out);

// Bias, variance and overall scaling exponents at growth exponent `ell`.
//
// # Safety
// The three outputs must be writable.
enum RfensStatus rfens_theoretical_exponent(double alpha,
                                            double r,
                                            double ell,
                                            double *out_s_bias,
                                            double *out_s_var,
                                            double *out_s);

// Least-squares fit of `y ~ C x^(-slope)` over all points.
//
// # Safety
// `xs` and `ys` must point to `len` readable doubles; outputs writable.
enum RfensStatus rfens_fit_power_law(const double *xs,
                                     const double *ys,
                                     size_t len,
                                     double *out_slope,
                                     double *out_intercept);

// Score-average and majority-vote error rates. `scores` is `k x q`
// row-major (one row per member); `labels` holds `q` values of +1 or -1.
//
// # Safety
// `scores` must point to `k * q` doubles, `labels` to `q`; outputs writable.
enum RfensStatus rfens_classification_losses(const double *scores,
                                             size_t k,
                                             size_t q,
                                             const double *labels,
                                             double *out_sa,
                                             double *out_mv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFENS_H */
