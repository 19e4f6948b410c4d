#ifndef DYNTRACK_H
#define DYNTRACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DtStatus {
  DT_STATUS_OK = 0,
  DT_STATUS_NULL_POINTER = 1,
  DT_STATUS_INVALID_ARGUMENT = 2,
  DT_STATUS_IO = 3,
  DT_STATUS_DATA = 4,
  DT_STATUS_BUFFER_TOO_SMALL = 5,
  DT_STATUS_PANIC = 6,
} DtStatus;

// Opaque network handle.
typedef struct DtModel DtModel;

// Opaque per-sequence tracker handle.
typedef struct DtTracker DtTracker;

// One tracked box in input pixels.
typedef struct DtBox {
  uint64_t id;
  double left;
  double top;
  double width;
  double height;
  double score;
} DtBox;

typedef struct DtMetrics {
  double mota;
  double idf1;
  double hota;
  double deta;
  double assa;
  uint64_t idsw;
  uint64_t false_positives;
  uint64_t false_negatives;
  uint64_t num_gt;
  uint64_t num_pred;
} DtMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the next failing call.
const char *dt_last_error(void);

// Creates a freshly initialized default model.
//
// # Safety
// `out` must be a valid pointer.
enum DtStatus dt_model_new(uint64_t seed, struct DtModel **out);

// Loads an `STCK` checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DtStatus dt_model_load(const char *path, struct DtModel **out);

// # Safety
// `model` must come from this library; `path` must be a NUL-terminated string.
enum DtStatus dt_model_save(const struct DtModel *model, const char *path);

// # Safety
// `model` must be null or come from this library, and not be used afterwards.
void dt_model_free(struct DtModel *model);

// Starts a tracker over `model`. The tracker keeps the model alive on its own.
//
// # Safety
// `model` must come from this library and `out` must be a valid pointer.
enum DtStatus dt_tracker_new(const struct DtModel *model, bool use_motion, struct DtTracker **out);

// Feeds the next frame (interleaved 8-bit RGB, row-major) and writes the live boxes.
//
// `*count` receives the number of boxes. When it exceeds `capacity` the call
// fails with `BufferTooSmall` and the tracker state is unchanged.
//
// # Safety
// `rgb` must hold `3·width·height` bytes, `boxes` room for `capacity` entries
// (or be null when `capacity` is 0), and `count` must be valid.
enum DtStatus dt_tracker_step(struct DtTracker *tracker,
                              const uint8_t *rgb,
                              size_t width,
                              size_t height,
                              struct DtBox *boxes,
                              size_t capacity,
                              size_t *count);

// # Safety
// `tracker` must be null or come from this library, and not be used afterwards.
void dt_tracker_free(struct DtTracker *tracker);

// Min-cost assignment on a row-major `rows×cols` matrix; infinite cells are forbidden.
//
// Writes up to `min(rows, cols)` pairs into `out_rows`/`out_cols` and their number into `*count`.
//
// # Safety
// `cost` must hold `rows·cols` doubles; `out_rows` and `out_cols` room for `min(rows, cols)` entries.
enum DtStatus dt_hungarian(const double *cost,
                           size_t rows,
                           size_t cols,
                           size_t *out_rows,
                           size_t *out_cols,
                           size_t *count);

// Scores a MOTChallenge results file against a ground-truth file.
//
// # Safety
// Paths must be NUL-terminated strings and `out` a valid pointer.
enum DtStatus dt_evaluate(const char *gt_path,
                          const char *results_path,
                          double iou_threshold,
                          struct DtMetrics *out);

// Generates a preset scene (`random`, `crossing`, `static`, `uniform-crossing`) into `out_dir`.
//
// # Safety
// Both strings must be NUL-terminated.
enum DtStatus dt_generate(const char *preset, uint64_t seed, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNTRACK_H */
