#ifndef TELEMAFUSE_H
#define TELEMAFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every call. Codes 2-4 match the command-line exit codes.
 */
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  TF_STATUS_CONFIG_ERROR = 2,
  TF_STATUS_DATA_ERROR = 3,
  TF_STATUS_NUMERIC_ERROR = 4,
  TF_STATUS_NULL_POINTER = 10,
  TF_STATUS_INVALID_ARGUMENT = 11,
  TF_STATUS_PANIC = 12,
} TfStatus;

/*
 A loaded model. Opaque to C callers.
 */
typedef struct TfModel TfModel;

/*
 Fused prediction for one row.
 */
typedef struct TfPrediction {
  /*
   0 = male, 1 = female.
   */
  int32_t label;
  /*
   `c1 / (c0 + c1)`, the class-1 score in [0, 1].
   */
  double score;
  double c0;
  double c1;
  /*
   Label predicted by each of the three member forests.
   */
  int32_t member_labels[3];
} TfPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *tf_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *tf_version(void);

/*
 Loads and verifies a model artifact. On success `*out` owns a handle.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TfStatus tf_model_load(const char *path, struct TfModel **out);

/*
 Releases a handle from [`tf_model_load`]. Null is ignored.

 # Safety
 `model` must be null or a live handle not used afterwards.
 */
void tf_model_free(struct TfModel *model);

/*
 Number of input features, the length expected by [`tf_model_predict`].

 # Safety
 `model` must be null or a live handle.
 */
size_t tf_model_feature_count(const struct TfModel *model);

/*
 Name of input feature `index`, borrowed from the handle.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum TfStatus tf_model_feature_name(const struct TfModel *model, size_t index, const char **out);

/*
 Fuses one row given in feature order.

 # Safety
 `values` must point to `n_values` doubles; `out` must be writable.
 */
enum TfStatus tf_model_predict(const struct TfModel *model,
                               const double *values,
                               size_t n_values,
                               struct TfPrediction *out);

/*
 Sugeno λ for the given densities, each in (0, 1).

 # Safety
 `densities` must point to `n` doubles; `out_lambda` must be writable.
 */
enum TfStatus tf_solve_lambda(const double *densities, size_t n, double *out_lambda);

/*
 Choquet integral of `values` under the λ-measure built from `densities`.

 # Safety
 Both arrays must hold `n` doubles; `out` must be writable.
 */
enum TfStatus tf_choquet(const double *values, const double *densities, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TELEMAFUSE_H */
