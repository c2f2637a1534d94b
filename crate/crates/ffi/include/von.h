#ifndef VON_H
#define VON_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VonStatus {
  VON_STATUS_OK = 0,
  VON_STATUS_NULL_POINTER = 1,
  VON_STATUS_INVALID_ARGUMENT = 2,
  VON_STATUS_UNKNOWN_METRIC = 3,
  VON_STATUS_DEGENERATE_METRIC = 4,
  VON_STATUS_DIMENSION_MISMATCH = 5,
  VON_STATUS_METRIC_MISMATCH = 6,
  VON_STATUS_CHECKPOINT = 7,
  VON_STATUS_IO = 8,
  VON_STATUS_TIMEOUT = 9,
  VON_STATUS_BUFFER_TOO_SMALL = 10,
  VON_STATUS_PANIC = 11,
  VON_STATUS_OTHER = 12,
} VonStatus;

// A trained model and the metric it was trained on.
typedef struct VonModel VonModel;

// A point set: `n` rows of `dim` coordinates.
typedef struct VonPointSet VonPointSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The library version as a static NUL-terminated string.
const char *von_version(void);

// Message for the last failed call on this thread, or null after a success.
// Valid until the next `von_*` call on the same thread.
const char *von_last_error_message(void);

// Copies `n * dim` row-major coordinates into a new point set.
//
// # Safety
// `coords` must point to `n * dim` readable doubles; `out` must be writable.
enum VonStatus von_point_set_new(const double *coords,
                                 size_t n,
                                 size_t dim,
                                 struct VonPointSet **out);

// # Safety
// `ps` must come from [`von_point_set_new`] and not be used afterwards. Null is ignored.
void von_point_set_free(struct VonPointSet *ps);

// # Safety
// `ps` must be a live point set; `n` and `dim` writable or null.
enum VonStatus von_point_set_shape(const struct VonPointSet *ps, size_t *n, size_t *dim);

// Loads a checkpoint written by `von train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum VonStatus von_model_load(const char *path, struct VonModel **out);

// # Safety
// `model` must come from [`von_model_load`] and not be used afterwards. Null is ignored.
void von_model_free(struct VonModel *model);

// # Safety
// `model` must be live; `out` writable.
enum VonStatus von_model_input_dim(const struct VonModel *model, size_t *out);

// Copies the training metric's key, NUL-terminated, into `buf`.
//
// # Safety
// `model` must be live; `buf` must hold `capacity` bytes.
enum VonStatus von_model_metric(const struct VonModel *model, char *buf, size_t capacity);

// Greedy ordering of `points`; writes `n` indices and the loss under the
// checkpoint's metric.
//
// # Safety
// Handles must be live; `out_order` must hold `capacity` entries; `out_loss` writable or null.
enum VonStatus von_model_order(const struct VonModel *model,
                               const struct VonPointSet *points,
                               size_t *out_order,
                               size_t capacity,
                               double *out_loss);

// Orders `points` with a classical method (`sa`, `sa-tuned`, `nn`, `sm`, `rs`, `brute`).
//
// # Safety
// Strings NUL-terminated; `points` live; `out_order` holds `capacity` entries; `out_loss` writable or null.
enum VonStatus von_baseline_order(const char *method,
                                  const char *metric,
                                  const struct VonPointSet *points,
                                  uint64_t seed,
                                  size_t *out_order,
                                  size_t capacity,
                                  double *out_loss);

// Native score of `order` over `points` under `metric`.
//
// # Safety
// `metric` NUL-terminated; `points` live; `order` holds `len` entries; `out_score` writable.
enum VonStatus von_metric_score(const char *metric,
                                const struct VonPointSet *points,
                                const size_t *order,
                                size_t len,
                                double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VON_H */
