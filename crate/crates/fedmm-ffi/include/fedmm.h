/* C interface to fedmm: federated multimodal learning with retrieval-based augmentation. */

#ifndef FEDMM_H
#define FEDMM_H

/* Generated from the fedmm-ffi crate by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Per-round scalar metrics exposed through [`fedmm_run_round_metric`].
 */
typedef enum FedmmMetric {
  FEDMM_METRIC_VAL_AUC = 0,
  FEDMM_METRIC_TEST_AUC = 1,
  FEDMM_METRIC_IMG_WEIGHT_SHARE = 2,
  FEDMM_METRIC_TXT_WEIGHT_SHARE = 3,
} FedmmMetric;

/**
 * Result of every fallible call in this interface.
 */
typedef enum FedmmStatus {
  /**
   * The call succeeded.
   */
  FEDMM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FEDMM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FEDMM_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration is invalid; see `fedmm_last_error`.
   */
  FEDMM_STATUS_INVALID_CONFIG = 3,
  /**
   * The operation failed at runtime; see `fedmm_last_error`.
   */
  FEDMM_STATUS_RUNTIME_ERROR = 4,
  /**
   * The provided buffer is too small for the result.
   */
  FEDMM_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * An index argument is out of range.
   */
  FEDMM_STATUS_OUT_OF_RANGE = 6,
} FedmmStatus;

/**
 * Opaque experiment configuration handle.
 */
typedef struct FedmmConfig FedmmConfig;

/**
 * Opaque handle to one finished seeded run.
 */
typedef struct FedmmRun FedmmRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Interface revision; bump on any ABI-breaking change.
 */
uint32_t fedmm_abi_version(void);

/**
 * Copies the thread's last error message (NUL-terminated) into `buf` and
 * returns the length the message needs, including the terminator; returns
 * 0 when no error is recorded. A null or short buffer leaves the message
 * retrievable by a later call.
 *
 * # Safety
 * `buf` must be null or valid for `cap` writable bytes.
 */
size_t fedmm_last_error(char *buf, size_t cap);

/**
 * Returns a fresh configuration with default values. Never fails.
 */
struct FedmmConfig *fedmm_config_default(void);

/**
 * Parses a `key = value` configuration text. Returns null on invalid
 * input with the field-level message in `fedmm_last_error`.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string.
 */
struct FedmmConfig *fedmm_config_parse(const char *text);

/**
 * Applies one `key = value` assignment to the config. Cross-field
 * constraints are checked by `fedmm_config_validate` and `fedmm_run`.
 *
 * # Safety
 * `config` must be a live pointer from this interface; `key` and `value`
 * must be valid NUL-terminated strings.
 */
enum FedmmStatus fedmm_config_set(struct FedmmConfig *config, const char *key, const char *value);

/**
 * Checks every cross-field constraint of the config.
 *
 * # Safety
 * `config` must be null or a live pointer from this interface.
 */
enum FedmmStatus fedmm_config_validate(const struct FedmmConfig *config);

/**
 * Writes the config's canonical `key = value` form (two-call pattern).
 *
 * # Safety
 * `config` must be a live pointer; `buf` null or valid for `cap` bytes;
 * `written` null or valid for one `usize`.
 */
enum FedmmStatus fedmm_config_normal_form(const struct FedmmConfig *config,
                                          char *buf,
                                          size_t cap,
                                          size_t *written);

/**
 * Writes the 64-hex-character configuration hash plus NUL terminator.
 *
 * # Safety
 * `config` must be a live pointer; `buf` must hold at least 65 bytes.
 */
enum FedmmStatus fedmm_config_hash(const struct FedmmConfig *config, char *buf, size_t cap);

/**
 * Releases a config handle. Null is a no-op.
 *
 * # Safety
 * `config` must be null or an owned pointer not yet freed.
 */
void fedmm_config_free(struct FedmmConfig *config);

/**
 * Runs the configured experiment for one seed. Blocks until done; returns
 * null on failure with the reason in `fedmm_last_error`.
 *
 * # Safety
 * `config` must be null or a live pointer from this interface.
 */
struct FedmmRun *fedmm_run(const struct FedmmConfig *config, uint64_t seed);

/**
 * Best validation macro AUC across rounds.
 *
 * # Safety
 * `run` must be a live pointer; `out` must be writable.
 */
enum FedmmStatus fedmm_run_best_val_auc(const struct FedmmRun *run, double *out);

/**
 * Test macro AUC of the round selected on validation.
 *
 * # Safety
 * `run` must be a live pointer; `out` must be writable.
 */
enum FedmmStatus fedmm_run_best_test_auc(const struct FedmmRun *run, double *out);

/**
 * Round whose model scored the best validation AUC.
 *
 * # Safety
 * `run` must be a live pointer; `out` must be writable.
 */
enum FedmmStatus fedmm_run_best_round(const struct FedmmRun *run, uint64_t *out);

/**
 * Number of recorded reports: the initial model plus one per round.
 *
 * # Safety
 * `run` must be a live pointer; `out` must be writable.
 */
enum FedmmStatus fedmm_run_rounds(const struct FedmmRun *run, uint64_t *out);

/**
 * One scalar from the report at `index` (0 = initial model).
 *
 * # Safety
 * `run` must be a live pointer; `out` must be writable.
 */
enum FedmmStatus fedmm_run_round_metric(const struct FedmmRun *run,
                                        uint64_t index,
                                        enum FedmmMetric metric,
                                        double *out);

/**
 * Writes the run's full history CSV (two-call pattern), byte-identical to
 * what the CLI writes for the same config and seed.
 *
 * # Safety
 * `run` must be a live pointer; `buf` null or valid for `cap` bytes;
 * `written` null or valid for one `usize`.
 */
enum FedmmStatus fedmm_run_history_csv(const struct FedmmRun *run,
                                       char *buf,
                                       size_t cap,
                                       size_t *written);

/**
 * Releases a run handle. Null is a no-op.
 *
 * # Safety
 * `run` must be null or an owned pointer not yet freed.
 */
void fedmm_run_free(struct FedmmRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDMM_H */
