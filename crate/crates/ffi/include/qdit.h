#ifndef QDIT_H
#define QDIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum QditAlgorithm {
  QDIT_ALGORITHM_GREEDY = 0,
  QDIT_ALGORITHM_LAZY = 1,
  QDIT_ALGORITHM_STOCHASTIC = 2,
  QDIT_ALGORITHM_STOCHASTIC_LAZY = 3,
  QDIT_ALGORITHM_CLUSTER = 4,
  QDIT_ALGORITHM_THRESHOLD = 5,
} QditAlgorithm;

// Status codes returned by every fallible call.
typedef enum QditStatus {
  QDIT_STATUS_OK = 0,
  QDIT_STATUS_NULL_ARGUMENT = 1,
  QDIT_STATUS_INVALID_ARGUMENT = 2,
  QDIT_STATUS_IO = 3,
  QDIT_STATUS_PARSE = 4,
  QDIT_STATUS_INVALID_DATA = 5,
  QDIT_STATUS_OUT_OF_RANGE = 6,
  QDIT_STATUS_PANIC = 7,
} QditStatus;

// Opaque dataset handle.
typedef struct QditDataset QditDataset;

// Opaque selection result handle.
typedef struct QditResult QditResult;

// Selection parameters. Start from [`qdit_select_options_default`].
// `epsilon`, `tau` and `n_clusters` are read only by the algorithm they
// belong to.
typedef struct QditSelectOptions {
  double alpha;
  size_t k;
  enum QditAlgorithm algorithm;
  double epsilon;
  double tau;
  size_t n_clusters;
  uint64_t seed;
  // Datasets up to this size use a precomputed similarity matrix.
  size_t dense_cap;
} QditSelectOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failed call on this thread, or null. The
// pointer stays valid until the next call into this library on the same thread.
const char *qdit_last_error_message(void);

// Static description of a status code.
const char *qdit_status_string(enum QditStatus status);

// Loads a JSONL dataset. `embeddings_path` may be null when every record
// carries an inline embedding.
//
// # Safety
// Paths must be null or NUL-terminated strings; `out` must be writable.
enum QditStatus qdit_dataset_load(const char *jsonl_path,
                                  const char *embeddings_path,
                                  struct QditDataset **out);

// Builds a dataset from an `n × dim` row-major embedding matrix and `n`
// raw quality scores. Point ids are the decimal row numbers.
//
// # Safety
// `embeddings` must point to `n * dim` doubles, `quality` to `n` doubles,
// and `out` must be writable.
enum QditStatus qdit_dataset_from_arrays(const double *embeddings,
                                         const double *quality,
                                         size_t n,
                                         size_t dim,
                                         struct QditDataset **out);

// Number of points, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t qdit_dataset_len(const struct QditDataset *ds);

// Embedding dimension, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t qdit_dataset_dim(const struct QditDataset *ds);

// # Safety
// `ds` must be null or a handle not yet freed.
void qdit_dataset_free(struct QditDataset *ds);

// Lazy greedy, `alpha = 0.7`, `k = 10`, seed 0, default variant parameters.
struct QditSelectOptions qdit_select_options_default(void);

// Runs a selection.
//
// # Safety
// `ds` must be a live handle, `options` readable, `out` writable.
enum QditStatus qdit_select(const struct QditDataset *ds,
                            const struct QditSelectOptions *options,
                            struct QditResult **out);

// Number of selected points, or 0 for a null handle.
//
// # Safety
// `r` must be null or a live handle.
size_t qdit_result_len(const struct QditResult *r);

// Selected indices in selection order; `qdit_result_len` entries, valid
// until the handle is freed. Null for a null handle.
//
// # Safety
// `r` must be null or a live handle.
const size_t *qdit_result_indices(const struct QditResult *r);

// Per-pick objective values, same length and lifetime as the indices.
//
// # Safety
// `r` must be null or a live handle.
const double *qdit_result_trace(const struct QditResult *r);

// Normalized facility-location score of the selection; NaN for null.
//
// # Safety
// `r` must be null or a live handle.
double qdit_result_diversity(const struct QditResult *r);

// Mean normalized quality of the selection; NaN for null.
//
// # Safety
// `r` must be null or a live handle.
double qdit_result_mean_quality(const struct QditResult *r);

// True when threshold selection stopped short of `k`.
//
// # Safety
// `r` must be null or a live handle.
bool qdit_result_truncated(const struct QditResult *r);

// Writes the result JSON, resolving ids through `ds`.
//
// # Safety
// Handles must be live; `path` must be a NUL-terminated string.
enum QditStatus qdit_result_write_json(const struct QditResult *r,
                                       const struct QditDataset *ds,
                                       const char *path);

// # Safety
// `r` must be null or a handle not yet freed.
void qdit_result_free(struct QditResult *r);

// Diversity and mean quality of an arbitrary subset.
//
// # Safety
// `ds` must be a live handle; `indices` must point to `len` values (may be
// null when `len` is 0); the output pointers must be writable.
enum QditStatus qdit_score(const struct QditDataset *ds,
                           const size_t *indices,
                           size_t len,
                           double *diversity,
                           double *mean_quality);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDIT_H */
