#ifndef U1QA_H
#define U1QA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Configuration and invariant failures match the exit
// codes of the command line driver.
typedef enum U1qaStatus {
  U1QA_STATUS_OK = 0,
  U1QA_STATUS_CONFIG = 2,
  U1QA_STATUS_INVARIANT = 3,
  U1QA_STATUS_DOMAIN = 4,
  U1QA_STATUS_FIT = 5,
  U1QA_STATUS_PARSE = 6,
  U1QA_STATUS_IO = 7,
  U1QA_STATUS_NULL_ARGUMENT = 8,
  U1QA_STATUS_OUT_OF_RANGE = 9,
  U1QA_STATUS_PANIC = 10,
} U1qaStatus;

// One validated experiment point together with its observable.
typedef struct U1qaConfig U1qaConfig;

// The series produced by one run; correlation runs hold one per offset.
typedef struct U1qaSeries U1qaSeries;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *u1qa_last_error(void);

// Library version, including the git description at build time.
const char *u1qa_version(void);

// Number of sweep points of a TOML manifest for the named observable.
//
// # Safety
// `manifest` and `observable` are nul-terminated strings; `n_points` is
// writable.
enum U1qaStatus u1qa_manifest_points(const char *manifest,
                                     const char *observable,
                                     size_t *n_points);

// Build the validated config of sweep point `index` of a TOML manifest.
//
// # Safety
// String arguments are nul-terminated; `out` is writable. The handle is
// released with [`u1qa_config_free`].
enum U1qaStatus u1qa_config_from_toml(const char *manifest,
                                      const char *observable,
                                      size_t index,
                                      struct U1qaConfig **out);

// Replace the seed of a config.
//
// # Safety
// `config` is a live handle.
enum U1qaStatus u1qa_config_set_seed(struct U1qaConfig *config, uint64_t seed);

// # Safety
// `config` is null or a handle not yet freed.
void u1qa_config_free(struct U1qaConfig *config);

// Run the estimator of `config` on the calling thread's pool.
//
// # Safety
// `config` is a live handle; `out` is writable. The result is released
// with [`u1qa_series_free`].
enum U1qaStatus u1qa_run(const struct U1qaConfig *config, struct U1qaSeries **out);

// # Safety
// `series` is null or a handle not yet freed.
void u1qa_series_free(struct U1qaSeries *series);

// Number of series in a result (one per correlation offset, else 1).
//
// # Safety
// `series` is a live handle; `count` is writable.
enum U1qaStatus u1qa_series_count(const struct U1qaSeries *series, size_t *count);

// Number of recorded times of series `k`, and its correlation offset
// (0 for other observables). `offset` may be null.
//
// # Safety
// `series` is a live handle; `len` is writable.
enum U1qaStatus u1qa_series_len(const struct U1qaSeries *series,
                                size_t k,
                                size_t *len,
                                int64_t *offset);

// Copy series `k` into caller buffers of `capacity` entries each. Any
// buffer may be null. Masked points carry NaN in `mean` and `stderr`.
//
// # Safety
// Non-null buffers hold at least `capacity` elements.
enum U1qaStatus u1qa_series_copy(const struct U1qaSeries *series,
                                 size_t k,
                                 uint64_t *times,
                                 double *mean,
                                 double *stderr,
                                 uint64_t *n_valid,
                                 size_t capacity);

// Series `k` in the CSV format of the command line driver. The string is
// released with [`u1qa_string_free`].
//
// # Safety
// `series` is a live handle; `out` is writable.
enum U1qaStatus u1qa_series_csv(const struct U1qaSeries *series, size_t k, char **out);

// # Safety
// `s` is null or a string returned by this library and not yet freed.
void u1qa_string_free(char *s);

// `ln C(n, k)`.
//
// # Safety
// `out` is writable.
enum U1qaStatus u1qa_ln_binomial(uint64_t n, uint64_t k, double *out);

// Exact and approximate value of `−2 ln[C(L−2Δl, νL) / C(L, νL)]`.
//
// # Safety
// `exact` and `approx` are writable.
enum U1qaStatus u1qa_psapprox(uint64_t l, uint64_t dl, double nu, double *exact, double *approx);

// Run the cross-engine equivalence suite and report the largest purity
// deviation.
//
// # Safety
// `max_deviation` is writable.
enum U1qaStatus u1qa_oracle_check(size_t mixed_l,
                                  size_t fixed_l,
                                  size_t realizations,
                                  size_t t_max,
                                  uint64_t seed,
                                  double *max_deviation);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* U1QA_H */
