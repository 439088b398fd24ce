#ifndef DOMCLUST_H
#define DOMCLUST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Non-negative values are not errors.
 */
typedef enum dc_status {
  DC_STATUS_OK = 0,
  /**
   * The reader has no more records.
   */
  DC_STATUS_END = 1,
  DC_STATUS_ERR_NULL = -1,
  DC_STATUS_ERR_IO = -2,
  DC_STATUS_ERR_FORMAT = -3,
  DC_STATUS_ERR_DIM_MISMATCH = -4,
  DC_STATUS_ERR_INVALID = -5,
  DC_STATUS_ERR_UNMAPPED = -6,
  DC_STATUS_ERR_PANIC = -7,
  DC_STATUS_ERR_INTERNAL = -8,
} dc_status;

/**
 * A fitted k-means model.
 */
typedef struct dc_model dc_model;

/**
 * Streaming reader over an embedding file.
 */
typedef struct dc_reader dc_reader;

/**
 * A model plus its cluster -> model-id table.
 */
typedef struct dc_router dc_router;

/**
 * Identifiers of one embedding record; the vector goes to a caller buffer.
 */
typedef struct dc_record {
  uint64_t sentence_id;
  uint64_t doc_id;
  int32_t domain_id;
} dc_record;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *dc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dc_version(void);

/**
 * Loads a `model.json` written by `kmeans-fit`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t dc_model_load(const char *path, struct dc_model **out);

/**
 * # Safety
 * `model` must come from `dc_model_load` and not be used afterwards. Null is ignored.
 */
void dc_model_free(struct dc_model *model);

/**
 * Vector dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dc_model_dim(const struct dc_model *model);

/**
 * Number of clusters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dc_model_k(const struct dc_model *model);

/**
 * Nearest centroid of `vector[0..len]`. `sqdist` may be null.
 *
 * # Safety
 * `vector` must hold `len` floats; `cluster` must be writable.
 */
int32_t dc_model_assign(const struct dc_model *model,
                        const float *vector,
                        size_t len,
                        size_t *cluster,
                        double *sqdist);

/**
 * Loads a model and its routing table; every cluster must resolve to a model id.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `out` must be writable.
 */
int32_t dc_router_load(const char *model_path, const char *routing_path, struct dc_router **out);

/**
 * # Safety
 * `router` must come from `dc_router_load` and not be used afterwards. Null is ignored.
 */
void dc_router_free(struct dc_router *router);

/**
 * Routes one vector. `*model_id` points into the router and lives as long as it.
 *
 * # Safety
 * `vector` must hold `len` floats; `cluster` and `model_id` must be writable.
 */
int32_t dc_router_route(const struct dc_router *router,
                        const float *vector,
                        size_t len,
                        size_t *cluster,
                        const char **model_id);

/**
 * Routes a document given as `n` row-major sentence vectors of `dim` floats,
 * by their mean.
 *
 * # Safety
 * `vectors` must hold `n * dim` floats; `cluster` and `model_id` must be writable.
 */
int32_t dc_router_route_document(const struct dc_router *router,
                                 const float *vectors,
                                 size_t n,
                                 size_t dim,
                                 size_t *cluster,
                                 const char **model_id);

/**
 * Opens an embedding file for streaming. The file length is checked against
 * the header up front.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t dc_reader_open(const char *path, struct dc_reader **out);

/**
 * # Safety
 * `reader` must be null or a live handle.
 */
size_t dc_reader_dim(const struct dc_reader *reader);

/**
 * Record count from the header.
 *
 * # Safety
 * `reader` must be null or a live handle.
 */
uint64_t dc_reader_count(const struct dc_reader *reader);

/**
 * Reads the next record into `record` and `buf[0..dim]`. Returns `DC_STATUS_END`
 * after the last record. `buf_len` must be at least the file's dimension.
 *
 * # Safety
 * `record` must be writable; `buf` must have room for `buf_len` floats.
 */
int32_t dc_reader_next(struct dc_reader *reader,
                       struct dc_record *record,
                       float *buf,
                       size_t buf_len);

/**
 * # Safety
 * `reader` must come from `dc_reader_open` and not be used afterwards. Null is ignored.
 */
void dc_reader_free(struct dc_reader *reader);

/**
 * Full check of an embedding file and its sidecar. `dim` and `count` may be null.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
int32_t dc_validate(const char *path, uint32_t *dim, uint64_t *count);

/**
 * Majority and matched purity of a row-major `k x d` cluster-by-domain count table.
 *
 * # Safety
 * `counts` must hold `k * d` values; `majority` and `matched` must be writable.
 */
int32_t dc_purity(const uint64_t *counts, size_t k, size_t d, double *majority, double *matched);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOMCLUST_H */
