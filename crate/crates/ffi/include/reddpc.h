#ifndef REDDPC_H
#define REDDPC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ReddpcStatus {
  REDDPC_STATUS_OK = 0,
  REDDPC_STATUS_NULL_POINTER = 1,
  REDDPC_STATUS_INVALID_UTF8 = 2,
  REDDPC_STATUS_IO = 3,
  REDDPC_STATUS_FORMAT = 4,
  REDDPC_STATUS_CHECKSUM = 5,
  REDDPC_STATUS_VERSION = 6,
  REDDPC_STATUS_DIMENSION = 7,
  REDDPC_STATUS_NO_REGION = 8,
  REDDPC_STATUS_PANIC = 9,
} ReddpcStatus;

/**
 * Opaque explicit control law.
 */
typedef struct ReddpcLaw ReddpcLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a law from a JSON file. On success `*out` owns a handle that must be
 * released with [`reddpc_law_free`]; on failure it is set to null.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum ReddpcStatus reddpc_law_load(const char *path, struct ReddpcLaw **out);

/**
 * Load a law from JSON text held in memory.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum ReddpcStatus reddpc_law_from_json(const char *json, struct ReddpcLaw **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `law` must come from a load function and not be used afterwards.
 */
void reddpc_law_free(struct ReddpcLaw *law);

/**
 * Number of control inputs, or 0 for a null handle.
 *
 * # Safety
 * `law` must be null or a live handle.
 */
size_t reddpc_law_input_dim(const struct ReddpcLaw *law);

/**
 * Length of the parameter vector, or 0 for a null handle.
 *
 * # Safety
 * `law` must be null or a live handle.
 */
size_t reddpc_law_param_dim(const struct ReddpcLaw *law);

/**
 * Number of regions, or 0 for a null handle.
 *
 * # Safety
 * `law` must be null or a live handle.
 */
size_t reddpc_law_region_count(const struct ReddpcLaw *law);

/**
 * Evaluate the law at `chi` (length `n_chi`) and write `n_u` inputs to `u`.
 * The index of the matching region goes to `region` when it is non-null.
 *
 * # Safety
 * `chi` and `u` must point to at least `n_chi` and `n_u` doubles.
 */
enum ReddpcStatus reddpc_law_evaluate(const struct ReddpcLaw *law,
                                      const double *chi,
                                      size_t n_chi,
                                      double *u,
                                      size_t n_u,
                                      size_t *region);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *reddpc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *reddpc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REDDPC_H */
