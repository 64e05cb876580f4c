#ifndef AWGUNET_H
#define AWGUNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum AwguStatus {
  AWGU_STATUS_OK = 0,
  AWGU_STATUS_NULL_POINTER = 1,
  AWGU_STATUS_INVALID_ARGUMENT = 2,
  AWGU_STATUS_SHAPE = 3,
  AWGU_STATUS_CONFIG = 4,
  AWGU_STATUS_IO = 5,
  AWGU_STATUS_CHECKPOINT = 6,
  AWGU_STATUS_NUMERIC = 7,
  AWGU_STATUS_PANIC = 8,
} AwguStatus;

// Opaque model handle: network structure plus parameters.
typedef struct AwguModel AwguModel;

// The four overlap metrics, each in `[0, 1]`.
typedef struct AwguMetrics {
  double dice;
  double iou;
  double precision;
  double recall;
} AwguMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds a freshly initialised model from `key = value` config text. Keys
// not given take the full-size (512x512) defaults.
//
// # Safety
// `config_text` must be a NUL-terminated string; `out` must be writable.
enum AwguStatus awgu_model_from_config(const char *config_text, struct AwguModel **out);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum AwguStatus awgu_model_load(const char *path, struct AwguModel **out);

// Saves weights (without optimizer state) as a checkpoint file.
//
// # Safety
// `model` must come from this library; `path` must be a NUL-terminated string.
enum AwguStatus awgu_model_save(const struct AwguModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void awgu_model_free(struct AwguModel *model);

// Expected input channels, height and width.
//
// # Safety
// `model` must come from this library; the out pointers must be writable.
enum AwguStatus awgu_model_input_size(const struct AwguModel *model,
                                      size_t *channels,
                                      size_t *height,
                                      size_t *width);

// Number of scalar parameters.
//
// # Safety
// `model` must come from this library; `out` must be writable.
enum AwguStatus awgu_model_param_count(const struct AwguModel *model, size_t *out);

// Foreground probabilities for `n` images of the model's input size.
// `out_prob` receives `n * h * w` values.
//
// # Safety
// `image` must hold `n * c * h * w` floats and `out_prob` `out_len` floats.
enum AwguStatus awgu_model_predict(const struct AwguModel *model,
                                   const float *image,
                                   size_t n,
                                   size_t c,
                                   size_t h,
                                   size_t w,
                                   float *out_prob,
                                   size_t out_len);

// Metrics of one prediction against one binary target (`> 0.5` is
// foreground); predictions `>= threshold` are foreground.
//
// # Safety
// `pred` and `target` must each hold `len` floats; `out` must be writable.
enum AwguStatus awgu_metrics_evaluate(const float *pred,
                                      const float *target,
                                      size_t len,
                                      double threshold,
                                      struct AwguMetrics *out);

// Orthonormal single-level Haar transform. Output is `(n, 4c, h/2, w/2)`
// with subbands LL, LH, HL, HH each occupying `c` channels; `h` and `w`
// must be even.
//
// # Safety
// `x` must hold `n * c * h * w` floats and `out` `out_len` floats.
enum AwguStatus awgu_haar_forward(const float *x,
                                  size_t n,
                                  size_t c,
                                  size_t h,
                                  size_t w,
                                  float *out,
                                  size_t out_len);

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *awgu_last_error_message(void);

// Library version, e.g. `"0.1.0"`. Static storage.
const char *awgu_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AWGUNET_H */
