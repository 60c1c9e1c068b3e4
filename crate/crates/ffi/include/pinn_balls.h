#ifndef PINN_BALLS_H
#define PINN_BALLS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible entry point.
 */
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_ARGUMENT = 2,
  PB_STATUS_DIMENSION_MISMATCH = 3,
  PB_STATUS_UNCOVERED_POINT = 4,
  PB_STATUS_IO = 5,
  PB_STATUS_CHECKPOINT = 6,
  PB_STATUS_CONFIG = 7,
  PB_STATUS_TRAINING_ABORTED = 8,
  PB_STATUS_NUMERICAL = 9,
  PB_STATUS_PANIC = 10,
} PbStatus;

/**
 * Opaque trained or loaded model.
 */
typedef struct PbModel PbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len` bytes) and returns the full message length without the
 * terminator. Pass a null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes of writes.
 */
size_t pb_last_error_message(char *buf, size_t len);

/**
 * Loads a checkpoint written by `pb_model_save` or the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum PbStatus pb_model_load(const char *path, struct PbModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum PbStatus pb_model_save(const struct PbModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pb_model_free(struct PbModel *model);

/**
 * Spatial dimension of the inputs, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pb_model_input_dim(const struct PbModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pb_model_output_dim(const struct PbModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pb_model_num_params(const struct PbModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pb_model_num_balls(const struct PbModel *model);

/**
 * Evaluates the model at `n_points` row-major points of `input_dim`
 * coordinates, writing `n_points × output_dim` values to `out`.
 *
 * # Safety
 * `points` and `out` must be valid for the stated lengths.
 */
enum PbStatus pb_model_predict(const struct PbModel *model,
                               const double *points,
                               size_t n_points,
                               double *out);

/**
 * Value, gradient and Hessian at one point. Buffers hold `output_dim`,
 * `output_dim × input_dim` and `output_dim × input_dim²` doubles, row-major.
 * `grad` and `hess` may be null when not needed.
 *
 * # Safety
 * Non-null buffers must be valid for the stated lengths.
 */
enum PbStatus pb_model_predict_bundle(const struct PbModel *model,
                                      const double *x,
                                      double *value,
                                      double *grad,
                                      double *hess);

/**
 * Gate weights of every ball at `x`, zero where a ball is inactive.
 *
 * # Safety
 * `x` holds `input_dim` doubles and `lambda` has room for `num_balls`.
 */
enum PbStatus pb_model_gate(const struct PbModel *model, const double *x, double *lambda);

/**
 * `‖pred − reference‖₂ / ‖reference‖₂` over `n` values.
 *
 * # Safety
 * Both arrays hold `n` doubles; `out` is valid for a write.
 */
enum PbStatus pb_relative_l2(const double *pred, const double *reference, size_t n, double *out);

/**
 * Trains a model from configuration text in the `key = value` format of the
 * CLI. On success `*out` receives the model and, when `rel_l2` is non-null,
 * the final relative L2 error on the evaluation grid.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` valid for a write;
 * `rel_l2` null or valid for a write.
 */
enum PbStatus pb_train(const char *config, struct PbModel **out, double *rel_l2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PINN_BALLS_H */
