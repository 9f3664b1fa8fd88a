#ifndef CTAGD_H
#define CTAGD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtagdStatus {
  CTAGD_STATUS_OK = 0,
  CTAGD_STATUS_NULL_POINTER = 1,
  CTAGD_STATUS_CONFIG = 2,
  CTAGD_STATUS_USAGE = 3,
  CTAGD_STATUS_NON_FINITE = 4,
  CTAGD_STATUS_IO = 5,
  CTAGD_STATUS_PANIC = 6,
} CtagdStatus;

typedef enum CtagdBackbone {
  CTAGD_BACKBONE_SGD = 0,
  CTAGD_BACKBONE_MOMENTUM_SGD = 1,
  CTAGD_BACKBONE_ADAM = 2,
  CTAGD_BACKBONE_YOGI = 3,
} CtagdBackbone;

// Opaque landscape sequence.
typedef struct CtagdLandscape CtagdLandscape;

// Opaque optimizer: a first-order backbone plus the curvature-tuned state.
typedef struct CtagdOptimizer CtagdOptimizer;

typedef struct CtagdMetrics {
  double train;
  double test;
  double gap;
} CtagdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into this library from the same thread.
const char *ctagd_last_error(void);

// Builds the landscape sequence for `seed`. `config_json` is a (possibly
// partial) bench config; only its `testbed.landscape` and `stationary`
// fields are read.
//
// # Safety
// `config_json` must be null or a nul-terminated string; `out` must be a
// valid pointer to write the handle to.
enum CtagdStatus ctagd_landscape_new(const char *config_json,
                                     uint64_t seed,
                                     struct CtagdLandscape **out);

// Builds a landscape sequence with the default generator settings.
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum CtagdStatus ctagd_landscape_default(uint64_t seed, struct CtagdLandscape **out);

// # Safety
// `handle` must be null or come from a `ctagd_landscape_*` constructor and
// not have been freed.
void ctagd_landscape_free(struct CtagdLandscape *handle);

// Value and gradient of the current train snapshot at `theta[2]`, then
// advances to the next snapshot.
//
// # Safety
// `handle` must be live; `theta` and `grad_out` must point to two doubles and
// `value_out` to one.
enum CtagdStatus ctagd_landscape_observe(struct CtagdLandscape *handle,
                                         const double *theta,
                                         double *value_out,
                                         double *grad_out);

// Gradient of the current train snapshot at `theta[2]` without advancing.
//
// # Safety
// `handle` must be live; `theta` and `grad_out` must point to two doubles.
enum CtagdStatus ctagd_landscape_gradient(const struct CtagdLandscape *handle,
                                          const double *theta,
                                          double *grad_out);

// Averaged train and test objectives at `theta[2]`.
//
// # Safety
// `handle` must be live; `theta` must point to two doubles and `out` to a
// `CtagdMetrics`.
enum CtagdStatus ctagd_landscape_metrics(const struct CtagdLandscape *handle,
                                         const double *theta,
                                         struct CtagdMetrics *out);

// Creates an optimizer over `n_tensors` parameter tensors of the given
// sizes, laid out back to back. `config_json` is a (possibly partial) bench
// config; its `ctagd` section and the backbone's section (`sgd` or `adam`)
// are read.
//
// # Safety
// `sizes` must point to `n_tensors` values; `config_json` must be null or a
// nul-terminated string; `out` must be a valid pointer.
enum CtagdStatus ctagd_optimizer_new(enum CtagdBackbone backbone,
                                     const size_t *sizes,
                                     size_t n_tensors,
                                     const char *config_json,
                                     uint64_t seed,
                                     struct CtagdOptimizer **out);

// # Safety
// `handle` must be null or come from [`ctagd_optimizer_new`] and not have
// been freed.
void ctagd_optimizer_free(struct CtagdOptimizer *handle);

// Total parameter count of the optimizer's layout; 0 for a null handle.
//
// # Safety
// `handle` must be null or live.
size_t ctagd_optimizer_dim(const struct CtagdOptimizer *handle);

// One inner step of an epoch of `t_total` steps, updating `theta` in place
// with the mini-batch gradient `grad`.
//
// # Safety
// `handle` must be live; `theta` and `grad` must point to `len` doubles.
enum CtagdStatus ctagd_optimizer_step(struct CtagdOptimizer *handle,
                                      double *theta,
                                      const double *grad,
                                      size_t len,
                                      size_t t_total);

// Closes the epoch: takes the boundary step on `theta` and stores the next
// epoch's per-tensor scales.
//
// # Safety
// `handle` must be live; `theta` must point to `len` doubles.
enum CtagdStatus ctagd_optimizer_end_epoch(struct CtagdOptimizer *handle,
                                           double *theta,
                                           size_t len);

// Writes the clamped diagonal curvature estimate accumulated so far in the
// current epoch.
//
// # Safety
// `handle` must be live; `out` must point to `len` doubles.
enum CtagdStatus ctagd_optimizer_hessian(const struct CtagdOptimizer *handle,
                                         double *out,
                                         size_t len);

// Per-tensor scales that seed the current epoch's divisor, one per tensor.
//
// # Safety
// `handle` must be live; `out` must point to `n_tensors` doubles.
enum CtagdStatus ctagd_optimizer_gammas(const struct CtagdOptimizer *handle,
                                        double *out,
                                        size_t n_tensors);

// Number of completed epochs; 0 for a null handle.
//
// # Safety
// `handle` must be null or live.
size_t ctagd_optimizer_epoch(const struct CtagdOptimizer *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTAGD_H */
