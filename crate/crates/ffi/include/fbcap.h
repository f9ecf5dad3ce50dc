#ifndef FBCAP_H
#define FBCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FbcapStatus {
  FBCAP_STATUS_OK = 0,
  FBCAP_STATUS_NULL_POINTER = 1,
  FBCAP_STATUS_INVALID_ARGUMENT = 2,
  FBCAP_STATUS_PARSE_ERROR = 3,
  FBCAP_STATUS_NOT_DETECTABLE = 4,
  FBCAP_STATUS_NUMERICAL = 5,
  FBCAP_STATUS_PANIC = 6,
} FbcapStatus;

/**
 * Opaque channel model handle.
 */
typedef struct FbcapModel FbcapModel;

/**
 * Summary of a stationary capacity solve.
 */
typedef struct FbcapCapacity {
  double rate_nats;
  double rate_bits;
  double kkt_residual;
  double min_lmi_eig;
  bool closed_loop_detectable;
} FbcapCapacity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *fbcap_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fbcap_version(void);

/**
 * Parse a model from its JSON description.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum FbcapStatus fbcap_model_from_json(const char *json, struct FbcapModel **out);

/**
 * AR(1) noise channel `y_i = x_i + z_i`, `z_i = beta z_{i-1} + w_i`.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum FbcapStatus fbcap_model_ar1(double beta, struct FbcapModel **out);

/**
 * Memoryless AWGN channel `y = sqrt(snr) x + v` with unit noise variance.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum FbcapStatus fbcap_model_awgn(double snr, struct FbcapModel **out);

/**
 * Copy of `model` with the feedback delayed by `delay` steps.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum FbcapStatus fbcap_model_delayed(const struct FbcapModel *model,
                                     size_t delay,
                                     struct FbcapModel **out);

/**
 * State, input and output dimensions of `model`.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
enum FbcapStatus fbcap_model_dims(const struct FbcapModel *model, size_t *n, size_t *m, size_t *p);

/**
 * Serialize `model` to JSON. Free the result with `fbcap_string_free`.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum FbcapStatus fbcap_model_to_json(const struct FbcapModel *model, char **out);

/**
 * # Safety
 * `model` must be NULL or a handle returned by this library, freed once.
 */
void fbcap_model_free(struct FbcapModel *model);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void fbcap_string_free(char *s);

/**
 * Stationary feedback capacity under average power `power`.
 * A non-positive `tol` selects the default solver tolerance.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum FbcapStatus fbcap_stationary_capacity(const struct FbcapModel *model,
                                           double power,
                                           double tol,
                                           struct FbcapCapacity *out);

/**
 * Normalized n-step feedback rate `C_n / n` in bits.
 *
 * # Safety
 * `model` must be a live handle and `out_bits` a writable pointer.
 */
enum FbcapStatus fbcap_finite_horizon_capacity(const struct FbcapModel *model,
                                               double power,
                                               size_t n,
                                               double tol,
                                               double *out_bits);

/**
 * Closed-form feedback capacity of the unit-gain AR(1) channel, in bits.
 *
 * # Safety
 * `out_bits` must be a writable pointer.
 */
enum FbcapStatus fbcap_ar1_oracle(double beta, double power, double *out_bits);

/**
 * Water-filling capacity without feedback for AR(1) noise, in bits.
 *
 * # Safety
 * `out_bits` must be a writable pointer.
 */
enum FbcapStatus fbcap_waterfill_nofb(double beta, double power, size_t grid, double *out_bits);

/**
 * Detectability of `(A, C)` with `A` n-by-n and `C` q-by-n, both row-major.
 * Writes the PBH and LMI verdicts separately.
 *
 * # Safety
 * `a` must point to `n*n` doubles, `c` to `q*n` doubles, and the out
 * pointers must be writable.
 */
enum FbcapStatus fbcap_detectable(const double *a,
                                  size_t n,
                                  const double *c,
                                  size_t q,
                                  bool *out_pbh,
                                  bool *out_lmi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBCAP_H */
