#ifndef PRDL_H
#define PRDL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bit for `min` in a function mask.
 */
#define PRDL_FN_MIN 1

/**
 * Bit for `max` in a function mask.
 */
#define PRDL_FN_MAX 2

/**
 * Bit for `ave` in a function mask.
 */
#define PRDL_FN_AVE 4

typedef enum PrdlStatus {
  PRDL_STATUS_OK = 0,
  PRDL_STATUS_NULL_POINTER = 1,
  PRDL_STATUS_INVALID_ARGUMENT = 2,
  PRDL_STATUS_EMPTY_SET = 3,
  PRDL_STATUS_FORMAT = 4,
  PRDL_STATUS_PROJECTION = 5,
  PRDL_STATUS_ANNOTATION = 6,
  PRDL_STATUS_NOTHING_TO_FIT = 7,
  PRDL_STATUS_NUMERICAL_ABORT = 8,
  PRDL_STATUS_IO = 9,
  PRDL_STATUS_PANIC = 10,
} PrdlStatus;

/**
 * Anchor set handle.
 */
typedef struct PrdlAnchors PrdlAnchors;

/**
 * Blendshape model handle.
 */
typedef struct PrdlModel PrdlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on this thread.
 */
const char *prdl_last_error(void);

/**
 * Loads a model container file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PrdlStatus prdl_model_load(const char *path, struct PrdlModel **out);

/**
 * Builds the deterministic toy model. When `truth` is not null it receives
 * the sampled ground truth as `k_id + k_exp + 6` values (identity,
 * expression, three angles, translation).
 *
 * # Safety
 * `out` must be valid; `truth`, if not null, must hold the stated count.
 */
enum PrdlStatus prdl_model_toy(uint64_t seed,
                               size_t n_vertices,
                               size_t k_id,
                               size_t k_exp,
                               struct PrdlModel **out,
                               double *truth);

/**
 * # Safety
 * `model` must come from this library (or be null) and not be used again.
 */
void prdl_model_free(struct PrdlModel *model);

/**
 * Vertex count and basis sizes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum PrdlStatus prdl_model_dims(const struct PrdlModel *model,
                                size_t *n_vertices,
                                size_t *k_id,
                                size_t *k_exp);

/**
 * Every pixel centre of a `width` x `height` image, row-major.
 *
 * # Safety
 * `out` must be valid.
 */
enum PrdlStatus prdl_anchors_lattice(size_t width, size_t height, struct PrdlAnchors **out);

/**
 * Farthest-point subsample of `k` anchors starting from `start_index`.
 *
 * # Safety
 * `anchors` and `out` must be valid.
 */
enum PrdlStatus prdl_anchors_subsample(const struct PrdlAnchors *anchors,
                                       size_t k,
                                       size_t start_index,
                                       struct PrdlAnchors **out);

/**
 * # Safety
 * `anchors` must be valid; `len` must be valid.
 */
enum PrdlStatus prdl_anchors_len(const struct PrdlAnchors *anchors, size_t *len);

/**
 * # Safety
 * `anchors` must come from this library (or be null) and not be used again.
 */
void prdl_anchors_free(struct PrdlAnchors *anchors);

/**
 * Descriptor of `n` points: `anchors_len * popcount(fn_mask)` values,
 * anchor-major, functions in min, max, ave order.
 *
 * # Safety
 * `xy` holds `2n` values; `out` has room for `out_len` values.
 */
enum PrdlStatus prdl_descriptor(const double *xy,
                                size_t n,
                                const struct PrdlAnchors *anchors,
                                uint32_t fn_mask,
                                double *out,
                                size_t out_len);

/**
 * Single-part PRDL loss of `n` predicted points against a target
 * descriptor laid out as [`prdl_descriptor`] writes it, normalized by
 * `height * width`. `grad` (nullable) receives `2n` values.
 *
 * # Safety
 * Array lengths must match the stated counts.
 */
enum PrdlStatus prdl_loss(const double *xy,
                          size_t n,
                          const double *target,
                          const struct PrdlAnchors *anchors,
                          uint32_t fn_mask,
                          size_t height,
                          size_t width,
                          double *loss,
                          double *grad);

/**
 * IoU of two `width * height` byte masks (non-zero = set).
 *
 * # Safety
 * Both masks hold `width * height` bytes.
 */
enum PrdlStatus prdl_part_iou(const uint8_t *pred,
                              const uint8_t *gt,
                              size_t width,
                              size_t height,
                              double *iou);

/**
 * Fits `model` to a label-map file. `config_path` (nullable) is a run
 * config TOML; its camera, weights, fit and preprocess sections apply. On
 * success `report_json` receives the JSON report, to be released with
 * [`prdl_string_free`].
 *
 * # Safety
 * Strings must be NUL-terminated; `report_json` must be valid.
 */
enum PrdlStatus prdl_fit_label_map(const struct PrdlModel *model,
                                   const char *label_map_path,
                                   const char *config_path,
                                   char **report_json);

/**
 * # Safety
 * `s` must come from this library (or be null) and not be used again.
 */
void prdl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRDL_H */
