#ifndef MAGNET_H
#define MAGNET_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MAGNET_FORM_LOG_RATIO 0

#define MAGNET_FORM_AS_PRINTED 1

typedef enum MagnetStatus {
  MAGNET_STATUS_OK = 0,
  MAGNET_STATUS_NULL_POINTER = 1,
  MAGNET_STATUS_INVALID_UTF8 = 2,
  MAGNET_STATUS_IO = 3,
  MAGNET_STATUS_PARSE = 4,
  MAGNET_STATUS_VALIDATION = 5,
  MAGNET_STATUS_PRECONDITION = 6,
  MAGNET_STATUS_CONFIG = 7,
  MAGNET_STATUS_BACKEND = 8,
  MAGNET_STATUS_PANIC = 9,
} MagnetStatus;

/**
 * Opaque handle to a loaded function pool.
 */
typedef struct MagnetPool MagnetPool;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null after a success.
 * Valid until the next call on the same thread.
 */
const char *magnet_last_error(void);

/**
 * Library version as a static string.
 */
const char *magnet_version(void);

/**
 * # Safety
 * `s` is null or came from this library and was not freed yet.
 */
void magnet_string_free(char *s);

/**
 * Load a pool from a JSON or JSON-lines file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum MagnetStatus magnet_pool_load(const char *path, struct MagnetPool **out);

/**
 * Parse a pool from JSON text.
 *
 * # Safety
 * `json` is a NUL-terminated string; `out` is writable.
 */
enum MagnetStatus magnet_pool_parse(const char *json, struct MagnetPool **out);

/**
 * # Safety
 * `pool` is null or a live handle.
 */
size_t magnet_pool_len(const struct MagnetPool *pool);

/**
 * # Safety
 * `pool` is null or a handle that was not freed yet.
 */
void magnet_pool_free(struct MagnetPool *pool);

/**
 * Parse a call list and write its canonical form and call count.
 *
 * # Safety
 * `text` is a NUL-terminated string; `out` and `count` are writable.
 */
enum MagnetStatus magnet_fc_normalize(const char *text, char **out, size_t *count);

/**
 * Validate every call of a list against the pool. Writes a JSON array of
 * reports, one per call.
 *
 * # Safety
 * `pool` is a live handle, `text` a NUL-terminated string, `out` writable.
 */
enum MagnetStatus magnet_fc_validate(const struct MagnetPool *pool, const char *text, char **out);

/**
 * Exact-match and n-gram overlap percentages of two FSP JSON-lines corpora.
 *
 * # Safety
 * `train` and `test` are NUL-terminated strings; `exact_pct` and
 * `ngram_pct` are writable.
 */
enum MagnetStatus magnet_contamination(const char *train,
                                       const char *test,
                                       size_t n,
                                       double *exact_pct,
                                       double *ngram_pct);

/**
 * Irrelevance share of a mixture, in percent.
 *
 * # Safety
 * `pct` is writable.
 */
enum MagnetStatus magnet_irrelevance_ratio(size_t single_turn,
                                           size_t multi_turn,
                                           size_t irrelevance,
                                           double *pct);

/**
 * Evaluate a toy loss instance. Writes the per-pair reports as JSON and the
 * largest finite-difference relative error.
 *
 * # Safety
 * `toy_json` is a NUL-terminated string; `out` and `max_fd_error` are writable.
 */
enum MagnetStatus magnet_loss_check(const char *toy_json,
                                    double lambda,
                                    double eta,
                                    int form,
                                    double step,
                                    char **out,
                                    double *max_fd_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAGNET_H */
