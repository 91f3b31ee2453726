#ifndef SUM_H
#define SUM_H

#include <stddef.h>
#include <stdint.h>

/*
 Result codes shared by all functions.
 */
typedef enum SumStatus {
  SUM_STATUS_OK = 0,
  SUM_STATUS_NULL_POINTER = 1,
  SUM_STATUS_INVALID_ARGUMENT = 2,
  SUM_STATUS_IO = 3,
  SUM_STATUS_PARSE = 4,
  SUM_STATUS_CHECKPOINT = 5,
  SUM_STATUS_SHAPE = 6,
  SUM_STATUS_LABEL = 7,
  SUM_STATUS_NUMERIC = 8,
  SUM_STATUS_UNDEFINED_METRIC = 9,
  SUM_STATUS_PANIC = 10,
  SUM_STATUS_INTERNAL = 11,
} SumStatus;

/*
 Opaque model handle.
 */
typedef struct SumModelHandle SumModelHandle;

/*
 Metric values for one prediction. A metric that is undefined for the
 inputs is NaN and its bit in `undefined_mask` is set
 (cc=1, kld=2, auc=4, sim=8, nss=16).
 */
typedef struct SumMetrics {
  double cc;
  double kld;
  double auc;
  double sim;
  double nss;
  uint32_t undefined_mask;
} SumMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL after a
 successful call. The pointer stays valid until the next call on the
 same thread.
 */
const char *sum_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sum_version(void);

/*
 Loads a checkpoint written by `sum train`.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 On success `*out` owns a handle that must be released with
 [`sum_model_free`].
 */
enum SumStatus sum_model_load(const char *path, struct SumModelHandle **out);

/*
 Releases a handle. NULL is ignored.

 # Safety
 `model` must come from [`sum_model_load`] and not have been freed.
 */
void sum_model_free(struct SumModelHandle *model);

/*
 Side length S the model runs at.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum SumStatus sum_model_input_size(const struct SumModelHandle *model, size_t *out);

/*
 Number of learnable scalars.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum SumStatus sum_model_num_parameters(const struct SumModelHandle *model, size_t *out);

/*
 Predicts a saliency map for an RGB image.

 `image` holds `height * width * 3` values in [0, 1], row-major with
 interleaved channels. `domain` is the label code (0 natural-mouse,
 1 natural-eye, 2 e-commerce, 3 UI). Images of another size are resized
 to the model input and the prediction is resized back, so `out_map`
 receives `height * width` values in (0, 1).

 # Safety
 `image` must point to `height * width * 3` readable doubles and `out_map`
 to `height * width` writable doubles.
 */
enum SumStatus sum_model_predict(const struct SumModelHandle *model,
                                 const double *image,
                                 size_t height,
                                 size_t width,
                                 uint32_t domain,
                                 double *out_map);

/*
 Scores a prediction against a ground-truth map and a fixation map
 (nonzero = fixated), all of length `len`. Undefined metrics are flagged
 in `undefined_mask` rather than reported as an error.

 # Safety
 The three arrays must hold `len` readable doubles and `out` be writable.
 */
enum SumStatus sum_metrics(const double *pred,
                           const double *gt_map,
                           const double *fixations,
                           size_t len,
                           struct SumMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SUM_H */
