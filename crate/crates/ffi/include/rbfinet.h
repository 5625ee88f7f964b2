#ifndef RBFINET_H
#define RBFINET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Inspect rbfi_last_error_message for
 * details on anything other than OK.
 */
typedef enum {
  RBFI_STATUS_OK = 0,
  RBFI_STATUS_NULL_ARGUMENT = 1,
  RBFI_STATUS_INVALID_UTF8 = 2,
  RBFI_STATUS_PARSE = 3,
  RBFI_STATUS_CONFIG = 4,
  RBFI_STATUS_FORMAT = 5,
  RBFI_STATUS_INTEGRITY = 6,
  RBFI_STATUS_USAGE = 7,
  RBFI_STATUS_DIMENSION = 8,
  RBFI_STATUS_IO = 9,
  RBFI_STATUS_PANIC = 10,
} RbfiStatus;

/**
 * Opaque handle to a network.
 */
typedef struct RbfiNetwork RbfiNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rbfi_last_error_message(void);

/**
 * Create a freshly initialized network from a geometry string such as
 * "R(128,128,10|mixed,mixed,or)". Pass u_max <= 0 for the default (3.0).
 *
 * # Safety
 * `geometry` must be NUL-terminated; `out` must point to writable storage.
 */
RbfiStatus rbfi_network_new(const char *geometry, double u_max, uint64_t seed, RbfiNetwork **out);

/**
 * Load a checkpoint written by rbfi_network_save or the CLI.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must point to writable storage.
 */
RbfiStatus rbfi_network_load(const char *path, RbfiNetwork **out);

/**
 * # Safety
 * `net` must be a live handle; `path` must be NUL-terminated.
 */
RbfiStatus rbfi_network_save(const RbfiNetwork *net, const char *path);

/**
 * Release a handle. Null is a no-op; anything else must have come from
 * this library and must not be used afterwards.
 *
 * # Safety
 * `net` must be null or a live handle from this library.
 */
void rbfi_network_free(RbfiNetwork *net);

/**
 * Number of input features; 0 if the handle is null.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
uintptr_t rbfi_network_input_dim(const RbfiNetwork *net);

/**
 * Number of outputs; 0 if the handle is null.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
uintptr_t rbfi_network_output_dim(const RbfiNetwork *net);

/**
 * Evaluate one example: x has input_dim entries, out receives output_dim.
 *
 * # Safety
 * `net` must be live; `x` and `out` must point to buffers of the given
 * lengths.
 */
RbfiStatus rbfi_network_forward(const RbfiNetwork *net,
                                const double *x,
                                uintptr_t x_len,
                                double *out,
                                uintptr_t out_len);

/**
 * Predicted class of one example (argmax, lowest index on ties).
 *
 * # Safety
 * `net` must be live; `x` must have x_len entries; `out_class` writable.
 */
RbfiStatus rbfi_network_classify(const RbfiNetwork *net,
                                 const double *x,
                                 uintptr_t x_len,
                                 uintptr_t *out_class);

/**
 * The network's closed-form sensitivity bound: a guaranteed ceiling on
 * |output change| per unit of infinity-norm input change.
 *
 * # Safety
 * `net` must be live; `out` writable.
 */
RbfiStatus rbfi_network_sensitivity_bound(const RbfiNetwork *net, double *out);

/**
 * One FGSM attack step against a single example: writes the adversarial
 * input (within epsilon of x, inside [0,1]) to out. pseudo selects the
 * pseudogradient backward rules; pass false for true gradients.
 *
 * # Safety
 * `net` must be live; `x` and `out` must have x_len == out_len entries.
 */
RbfiStatus rbfi_network_fgsm(const RbfiNetwork *net,
                             const double *x,
                             uintptr_t x_len,
                             uint32_t label,
                             double epsilon,
                             bool pseudo,
                             double *out,
                             uintptr_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBFINET_H */
