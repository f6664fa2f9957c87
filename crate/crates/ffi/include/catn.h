#ifndef CATN_H
#define CATN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Prior slot code for [`catn_external_cost`] meaning background.
 */
#define CATN_PRIOR_BACKGROUND -1

/*
 Prior slot code for [`catn_external_cost`] meaning the empty slot.
 */
#define CATN_PRIOR_NONE -2

#define CATN_NMS_HARD 0

#define CATN_NMS_SOFT 1

/*
 Status codes. The numeric values of `Io`, `Validation` and `Infeasible`
 match the CLI exit codes.
 */
typedef enum CatnStatus {
  CATN_STATUS_OK = 0,
  CATN_STATUS_IO = 1,
  CATN_STATUS_VALIDATION = 2,
  CATN_STATUS_INFEASIBLE = 3,
  CATN_STATUS_NULL_POINTER = 4,
  CATN_STATUS_INVALID_UTF8 = 5,
  CATN_STATUS_PANIC = 6,
} CatnStatus;

/*
 Opaque model handle.
 */
typedef struct CatnModel CatnModel;

/*
 Single-verb detection in normalized corner coordinates.
 */
typedef struct CatnTriplet {
  double human_box[4];
  double object_box[4];
  uint32_t object_category;
  uint32_t verb;
  double score;
} CatnTriplet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *catn_version(void);

/*
 Message of the last failed call on this thread, or null after a success.
 Valid until the next call into the library on the same thread.
 */
const char *catn_last_error_message(void);

/*
 Frees a string returned by this library. Null is a no-op.

 # Safety
 `s` must come from this library and not have been freed.
 */
void catn_string_free(char *s);

/*
 Initializes model parameters from a model config JSON (null for the
 default config) and a seed.

 # Safety
 `config_json` must be null or a NUL-terminated string; `out` must be writable.
 */
enum CatnStatus catn_model_init(const char *config_json, uint64_t seed, struct CatnModel **out);

/*
 Loads a model from the JSON written by `catn synth --model-out`.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CatnStatus catn_model_from_json(const char *json, struct CatnModel **out);

/*
 Serializes a model to canonical JSON. Free the result with [`catn_string_free`].

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum CatnStatus catn_model_to_json(const struct CatnModel *model, char **out);

/*
 Frees a model handle. Null is a no-op.

 # Safety
 `model` must come from this library and not have been freed.
 */
void catn_model_free(struct CatnModel *model);

/*
 Runs the full pipeline on one scene and writes the prediction document as
 canonical JSON. `run_config_json` may be null, which uses the default run
 settings with the model's own config; otherwise its `model` field must
 match the model.

 # Safety
 String arguments must be NUL-terminated (or null where allowed), `model`
 a live handle, and `out` writable.
 */
enum CatnStatus catn_run(const struct CatnModel *model,
                         const char *scene_json,
                         const char *table_json,
                         const char *run_config_json,
                         char **out);

/*
 Minimum-cost assignment of `n_gt` rows to distinct columns of the
 row-major `n_gt x n_q` matrix `cost`. Writes the column of each row to
 `out_query` (length `n_gt`) and the summed cost to `out_total`.
 Returns `Infeasible` when `n_gt > n_q`.

 # Safety
 `cost` must hold `n_gt * n_q` values and `out_query` `n_gt` slots.
 */
enum CatnStatus catn_hungarian(const double *cost,
                               size_t n_gt,
                               size_t n_q,
                               size_t *out_query,
                               double *out_total);

/*
 Category-consistency penalty matrix, row-major `n_gt x n_q`. Each query's
 prior is a category id, [`CATN_PRIOR_BACKGROUND`] or [`CATN_PRIOR_NONE`].

 # Safety
 `prior_of_query` must hold `n_q` values, `gt_categories` `n_gt`, and
 `out` `n_gt * n_q` slots.
 */
enum CatnStatus catn_external_cost(const int64_t *prior_of_query,
                                   size_t n_q,
                                   const uint32_t *gt_categories,
                                   size_t n_gt,
                                   double v,
                                   double *out);

/*
 HOI-NMS ([`CATN_NMS_HARD`]) or HOI-SoftNMS ([`CATN_NMS_SOFT`]) over `n`
 triplets. Survivors are written to `out` in selection order (`out` needs
 room for `n`) and their count to `out_len`. `sigma` is ignored in hard mode.

 # Safety
 `triplets` must hold `n` values and `out` room for `n`; `out_len` must be writable.
 */
enum CatnStatus catn_nms(const struct CatnTriplet *triplets,
                         size_t n,
                         uint32_t mode,
                         double t_iou,
                         double sigma,
                         struct CatnTriplet *out,
                         size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CATN_H */
