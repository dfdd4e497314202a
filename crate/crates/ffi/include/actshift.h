#ifndef ACTSHIFT_H
#define ACTSHIFT_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ActStatus {
  ACT_STATUS_OK = 0,
  ACT_STATUS_NULL_POINTER = 1,
  ACT_STATUS_INVALID_ARGUMENT = 2,
  ACT_STATUS_DIMENSION = 3,
  ACT_STATUS_INSUFFICIENT_DATA = 4,
  ACT_STATUS_PANIC = 5,
} ActStatus;

/**
 * Fitted ratio predictor.
 */
typedef struct ActPredictor ActPredictor;

/**
 * Objects-per-image search settings. A non-positive or NaN `n_o_cap`
 * selects the automatic cap.
 */
typedef struct ActParams {
  double tau;
  double delta_n_o;
  double reliable_fraction;
  double n_o_cap;
} ActParams;

/**
 * Predicted class ratios, each of `n_classes` values.
 */
typedef struct ActPredictionBuffers {
  double *absolute;
  double *relative;
  double *merged;
  double *squared;
} ActPredictionBuffers;

/**
 * One detection. `bbox` is `(x1, y1, x2, y2)`.
 */
typedef struct ActDetection {
  uint64_t image;
  uint32_t class_id;
  double score;
  double bbox[4];
} ActDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *act_last_error(void);

struct ActParams act_default_params(void);

/**
 * KL divergence `D(p || q)` in nats, with ε-smoothing.
 *
 * # Safety
 * `p` and `q` must point to `n` readable doubles; `out` must be writable.
 */
enum ActStatus act_kl_divergence(const double *p, const double *q, size_t n, double *out);

/**
 * Normalized geometric mean of the absolute and relative predictions.
 *
 * # Safety
 * All pointers must reference `n` doubles.
 */
enum ActStatus act_merge(const double *r_a, const double *r_r, size_t n, double *out);

/**
 * Shift-corrected prediction `r_l · (merge / r_l)^exponent`, normalized.
 * An exponent of 2 is the squared prediction.
 *
 * # Safety
 * All pointers must reference `n` doubles.
 */
enum ActStatus act_shift_prediction(const double *r_label,
                                    const double *r_a,
                                    const double *r_r,
                                    size_t n,
                                    double exponent,
                                    double *out);

/**
 * Fits absolute and relative count models. `similarities` holds
 * `n_images × n_classes` values, `counts` the matching object counts.
 * On success `*out` owns a predictor to release with [`act_predictor_free`].
 *
 * # Safety
 * Input arrays must hold `n_images * n_classes` elements; `out` must be writable.
 */
enum ActStatus act_predictor_fit(const double *similarities,
                                 const uint32_t *counts,
                                 size_t n_images,
                                 size_t n_classes,
                                 struct ActPredictor **out);

/**
 * Number of classes of a fitted predictor; 0 for null.
 *
 * # Safety
 * `predictor` must be null or come from [`act_predictor_fit`].
 */
size_t act_predictor_n_classes(const struct ActPredictor *predictor);

/**
 * Predicts the class ratio of an unlabelled set. Any null buffer in `out`
 * is skipped.
 *
 * # Safety
 * `similarities` must hold `n_images * n_classes` values for the predictor's
 * class count; each non-null buffer must hold `n_classes` doubles.
 */
enum ActStatus act_predictor_predict(const struct ActPredictor *predictor,
                                     const double *similarities,
                                     size_t n_images,
                                     double shift_exponent,
                                     struct ActPredictionBuffers out);

/**
 * Releases a predictor. Null is ignored.
 *
 * # Safety
 * `predictor` must be null or come from [`act_predictor_fit`] and not be
 * freed twice.
 */
void act_predictor_free(struct ActPredictor *predictor);

/**
 * Per-class thresholds selecting the top `counts[c]` detections of class
 * `c`. Classes with a zero quota or no detections get a threshold above
 * every score.
 *
 * # Safety
 * `detections` must hold `n_detections` records; `counts` and
 * `out_thresholds` must hold `n_classes` elements.
 */
enum ActStatus act_select_thresholds(const struct ActDetection *detections,
                                     size_t n_detections,
                                     const size_t *counts,
                                     size_t n_classes,
                                     double *out_thresholds);

/**
 * Objects-per-image budget whose pseudo-labels keep a mean confidence of at
 * least `params.tau`. `params` may be null for the defaults.
 *
 * # Safety
 * `detections` must hold `n_detections` records and `ratio_values` `n_classes`
 * doubles; `params` must be null or valid; `out_n_o` must be writable.
 */
enum ActStatus act_dynamic_objects_per_image(const struct ActDetection *detections,
                                             size_t n_detections,
                                             const double *ratio_values,
                                             size_t n_classes,
                                             size_t n_unlabelled,
                                             const struct ActParams *params,
                                             double *out_n_o);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACTSHIFT_H */
