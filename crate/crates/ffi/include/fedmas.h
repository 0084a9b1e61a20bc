#ifndef FEDMAS_H
#define FEDMAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status code returned by every fallible function.
 */
typedef enum FedmasStatus {
  FEDMAS_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  FEDMAS_STATUS_NULL_POINTER = 1,
  /*
   An argument was out of range, not UTF-8, or of inconsistent length.
   */
  FEDMAS_STATUS_INVALID_ARGUMENT = 2,
  /*
   The configuration is invalid; the message lists every bad field.
   */
  FEDMAS_STATUS_CONFIG = 3,
  /*
   Training produced a non-finite value or a degenerate embedding.
   */
  FEDMAS_STATUS_NUMERIC_FAULT = 4,
  /*
   Input data or an embeddings file is malformed or inconsistent.
   */
  FEDMAS_STATUS_DATA = 5,
  FEDMAS_STATUS_IO = 6,
  /*
   The output buffer is shorter than the reported required length.
   */
  FEDMAS_STATUS_BUFFER_TOO_SMALL = 7,
  /*
   A panic was caught at the boundary.
   */
  FEDMAS_STATUS_PANIC = 8,
  FEDMAS_STATUS_INTERNAL = 9,
} FedmasStatus;

/*
 Experiment configuration handle.
 */
typedef struct FedmasConfig FedmasConfig;

/*
 Handle to a finished in-memory run.
 */
typedef struct FedmasRun FedmasRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *fedmas_version(void);

/*
 Creates a configuration holding the defaults.

 # Safety
 `out` must be valid for a pointer write.
 */
enum FedmasStatus fedmas_config_new(struct FedmasConfig **out);

/*
 Reads a `key = value` configuration file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be valid for a pointer write.
 */
enum FedmasStatus fedmas_config_from_file(const char *path, struct FedmasConfig **out);

/*
 Releases a configuration. Null is ignored.

 # Safety
 `cfg` must come from this library and not be used afterwards.
 */
void fedmas_config_free(struct FedmasConfig *cfg);

/*
 Sets one field; keys accept CLI spelling (`--lambda-f`) or `lambda_f`.

 # Safety
 `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum FedmasStatus fedmas_config_set(struct FedmasConfig *cfg, const char *key, const char *value);

/*
 Writes a field's textual value to `out`; free it with `fedmas_string_free`.

 # Safety
 `cfg` must be a live handle; `key` a NUL-terminated string; `out` valid for a pointer write.
 */
enum FedmasStatus fedmas_config_get(const struct FedmasConfig *cfg, const char *key, char **out);

/*
 Checks every field, reporting all problems in one message.

 # Safety
 `cfg` must be a live handle.
 */
enum FedmasStatus fedmas_config_validate(const struct FedmasConfig *cfg);

/*
 Runs the experiment in memory. `threads` caps the client fan-out;
 0 uses the `FEDMAS_THREADS` environment variable or the global pool.

 # Safety
 `cfg` must be a live handle; `out` valid for a pointer write.
 */
enum FedmasStatus fedmas_run(const struct FedmasConfig *cfg,
                             uintptr_t threads,
                             struct FedmasRun **out);

/*
 Writes manifest, config, per-round and diagnostic files into `dir`.

 # Safety
 `run` must be a live handle; `dir` a NUL-terminated string.
 */
enum FedmasStatus fedmas_run_write_artifacts(const struct FedmasRun *run, const char *dir);

/*
 Releases a run. Null is ignored.

 # Safety
 `run` must come from this library and not be used afterwards.
 */
void fedmas_run_free(struct FedmasRun *run);

/*
 Completed rounds, clients and flat parameter count.

 # Safety
 `run` must be a live handle; each out-pointer may be null to skip it.
 */
enum FedmasStatus fedmas_run_shape(const struct FedmasRun *run,
                                   uintptr_t *rounds,
                                   uintptr_t *clients,
                                   uintptr_t *params);

/*
 Final metric by name: `balanced_acc`, `overall_acc`, `head_acc`,
 `medium_acc`, `tail_acc` or `all_avg`. An empty shot group yields NaN.

 # Safety
 `run` must be a live handle; `name` a NUL-terminated string; `out` valid for a write.
 */
enum FedmasStatus fedmas_run_metric(const struct FedmasRun *run, const char *name, double *out);

/*
 Copies the final global parameter vector.

 # Safety
 `run` must be a live handle; `buf` valid for `len` writes; `needed` null or valid.
 */
enum FedmasStatus fedmas_run_params(const struct FedmasRun *run,
                                    double *buf,
                                    uintptr_t len,
                                    uintptr_t *needed);

/*
 Aggregation weights applied in a 0-based round, one per client.

 # Safety
 As for [`fedmas_run_params`].
 */
enum FedmasStatus fedmas_run_round_weights(const struct FedmasRun *run,
                                           uintptr_t round,
                                           double *buf,
                                           uintptr_t len,
                                           uintptr_t *needed);

/*
 Rescue factors reported in a 0-based round, one per client.

 # Safety
 As for [`fedmas_run_params`].
 */
enum FedmasStatus fedmas_run_round_rescue_factors(const struct FedmasRun *run,
                                                  uintptr_t round,
                                                  double *buf,
                                                  uintptr_t len,
                                                  uintptr_t *needed);

/*
 The run's `rounds.csv` content; free it with `fedmas_string_free`.

 # Safety
 `run` must be a live handle; `out` valid for a pointer write.
 */
enum FedmasStatus fedmas_run_rounds_csv(const struct FedmasRun *run, char **out);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void fedmas_string_free(char *s);

/*
 Rescue-factor weighted average of `num_clients` row-major parameter
 vectors of length `num_params`, written to `out`.

 # Safety
 `params` valid for `num_clients * num_params` reads, `rfs` for
 `num_clients` reads, `out` for `num_params` writes.
 */
enum FedmasStatus fedmas_mas_aggregate(const double *params,
                                       uintptr_t num_clients,
                                       uintptr_t num_params,
                                       const double *rfs,
                                       double *out);

/*
 `Σ_k w_k·ŵ_k` over classes present in both vectors; NaN marks an absent class.

 # Safety
 `w` and `w_hat` valid for `num_classes` reads; `out` valid for a write.
 */
enum FedmasStatus fedmas_rescue_factor(const double *w,
                                       const double *w_hat,
                                       uintptr_t num_classes,
                                       double *out);

/*
 Message of the most recent failure on the calling thread, or an empty
 string. The pointer stays valid until the next failing call on this thread.
 */
const char *fedmas_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDMAS_H */
