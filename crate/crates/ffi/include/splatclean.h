#ifndef SPLATCLEAN_H
#define SPLATCLEAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_UTF8 = 2,
  SC_STATUS_IO = 3,
  SC_STATUS_PARSE = 4,
  SC_STATUS_FORMAT = 5,
  SC_STATUS_SHAPE = 6,
  SC_STATUS_INDEX = 7,
  SC_STATUS_INVALID_ARGUMENT = 8,
  SC_STATUS_NON_FINITE = 9,
  SC_STATUS_CONFIG = 10,
  SC_STATUS_JSON = 11,
  SC_STATUS_PANIC = 12,
} ScStatus;

/**
 * A Gaussian cloud.
 */
typedef struct ScCloud ScCloud;

/**
 * Per-Gaussian evidence sidecar.
 */
typedef struct ScEvidence ScEvidence;

/**
 * Result of a pruning pass.
 */
typedef struct ScReport ScReport;

/**
 * Cameras and targets of a scene bundle directory.
 */
typedef struct ScScene ScScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sc_version(void);

/**
 * Loads a 3DGS PLY file. Files without an `importance` property get
 * `default_importance_logit`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ScStatus sc_cloud_load_ply(const char *path,
                                double default_importance_logit,
                                struct ScCloud **out);

/**
 * # Safety
 * `cloud` must be a live handle and `path` a NUL-terminated string.
 */
enum ScStatus sc_cloud_save_ply(const struct ScCloud *cloud, const char *path);

/**
 * # Safety
 * `cloud` must be a live handle and `out_len` a valid pointer.
 */
enum ScStatus sc_cloud_len(const struct ScCloud *cloud, size_t *out_len);

/**
 * Copies the centers as `x, y, z` triples into `out`, which must hold
 * `3 * capacity` doubles. Fails with `SC_STATUS_SHAPE` when `capacity` is
 * smaller than the cloud.
 *
 * # Safety
 * `out` must point to at least `3 * capacity` writable doubles.
 */
enum ScStatus sc_cloud_centers(const struct ScCloud *cloud, double *out, size_t capacity);

/**
 * # Safety
 * `cloud` must be null or a handle that has not been freed.
 */
void sc_cloud_free(struct ScCloud *cloud);

/**
 * Loads an evidence sidecar written by training.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ScStatus sc_evidence_load(const char *path, struct ScEvidence **out);

/**
 * # Safety
 * `evidence` must be null or a handle that has not been freed.
 */
void sc_evidence_free(struct ScEvidence *evidence);

/**
 * Loads the cameras, targets and depth priors of a bundle directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ScStatus sc_scene_load(const char *dir, struct ScScene **out);

/**
 * # Safety
 * `scene` must be a live handle and `out_count` a valid pointer.
 */
enum ScStatus sc_scene_view_count(const struct ScScene *scene, size_t *out_count);

/**
 * # Safety
 * `scene` must be null or a handle that has not been freed.
 */
void sc_scene_free(struct ScScene *scene);

/**
 * Runs one pruning pass on `cloud` in place.
 *
 * With `evidence` the sidecar drives the visibility, gradient and age
 * tests; it must match the cloud length and is compacted alongside the
 * cloud. Without evidence, `scene` supplies the cameras for offline
 * visibility counting. `config_json` is an optional JSON object with the
 * fields of the prune section (null for defaults).
 *
 * # Safety
 * Handles must be live or null where allowed; `config_json` must be null or
 * a NUL-terminated string; `out_report` must be a valid pointer.
 */
enum ScStatus sc_prune(struct ScCloud *cloud,
                       struct ScEvidence *evidence,
                       const struct ScScene *scene,
                       const char *config_json,
                       struct ScReport **out_report);

/**
 * Number of removed Gaussians.
 *
 * # Safety
 * `report` must be a live handle and `out_count` a valid pointer.
 */
enum ScStatus sc_report_removed_count(const struct ScReport *report, size_t *out_count);

/**
 * Copies the removed indices (into the cloud as it was before the pass,
 * ascending) into `out`. Fails with `SC_STATUS_SHAPE` if `capacity` is too
 * small.
 *
 * # Safety
 * `out` must point to at least `capacity` writable elements.
 */
enum ScStatus sc_report_removed_indices(const struct ScReport *report,
                                        size_t *out,
                                        size_t capacity);

/**
 * Full report as JSON. The string is owned by the report handle.
 *
 * # Safety
 * `report` must be null or a live handle.
 */
const char *sc_report_json(const struct ScReport *report);

/**
 * # Safety
 * `report` must be null or a handle that has not been freed.
 */
void sc_report_free(struct ScReport *report);

/**
 * Mean distance from each of `count` points (packed `x, y, z`) to its `k`
 * nearest other points, written to `out`.
 *
 * # Safety
 * `points` must hold `3 * count` doubles and `out` room for `count`.
 */
enum ScStatus sc_knn_mean_distance(const double *points, size_t count, size_t k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLATCLEAN_H */
