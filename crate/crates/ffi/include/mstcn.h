#ifndef MSTCN_H
#define MSTCN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum MstcnStatus {
  MSTCN_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  MSTCN_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument or configuration.
   */
  MSTCN_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File system failure.
   */
  MSTCN_STATUS_IO = 3,
  /**
   * Malformed or incompatible file.
   */
  MSTCN_STATUS_FORMAT = 4,
  /**
   * Any other runtime failure.
   */
  MSTCN_STATUS_RUNTIME = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  MSTCN_STATUS_PANIC = 6,
} MstcnStatus;

/**
 * Trained classifier.
 */
typedef struct MstcnModel MstcnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call into this library.
 */
const char *mstcn_last_error(void);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MstcnStatus mstcn_model_load(const char *path, struct MstcnModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`mstcn_model_load`] and not be used afterwards.
 */
void mstcn_model_free(struct MstcnModel *model);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t mstcn_model_num_classes(const struct MstcnModel *model);

/**
 * Scores a batch of grayscale clips.
 *
 * `frames` holds `batch x steps x height x width` values in `[0, 1]`,
 * already cropped to the model's input size. `lengths` (nullable) gives
 * the number of real frames per clip; frames past a clip's length are
 * ignored. `logits` receives `batch x num_classes` scores.
 *
 * # Safety
 * All pointers must be valid for the sizes given.
 */
enum MstcnStatus mstcn_model_predict(const struct MstcnModel *model,
                                     const float *frames,
                                     size_t batch,
                                     size_t steps,
                                     size_t height,
                                     size_t width,
                                     const size_t *lengths,
                                     float *logits);

/**
 * Writes a synthetic dataset to `out_dir`. `config_json` (nullable) is a
 * run configuration; its `data` section controls generation.
 *
 * # Safety
 * String arguments must be NUL-terminated or null where allowed.
 */
enum MstcnStatus mstcn_generate_dataset(const char *config_json,
                                        uint64_t seed,
                                        const char *out_dir,
                                        int force);

/**
 * Cosine-annealed learning rate at progress `t` in `[0, 1]`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MstcnStatus mstcn_cosine_lr(double t, double lr_max, double lr_min, double *out);

/**
 * Receptive field in frames of a single-branch stack of `blocks` blocks
 * with kernel size `kernel`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum MstcnStatus mstcn_receptive_field(size_t kernel, size_t blocks, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSTCN_H */
