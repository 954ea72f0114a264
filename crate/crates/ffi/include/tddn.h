/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef TDDN_H
#define TDDN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TddnStatus {
  TDDN_STATUS_OK = 0,
  TDDN_STATUS_NULL_POINTER = 1,
  TDDN_STATUS_INVALID_ARGUMENT = 2,
  TDDN_STATUS_IO = 3,
  TDDN_STATUS_PARSE = 4,
  TDDN_STATUS_SHAPE = 5,
  TDDN_STATUS_CHECKPOINT = 6,
  TDDN_STATUS_TRAINING = 7,
  TDDN_STATUS_PANIC = 8,
} TddnStatus;

/**
 * Loaded C-MAPSS subset (train, test and RUL files).
 */
typedef struct TddnDataset TddnDataset;

/**
 * Trained network together with its preprocessing.
 */
typedef struct TddnModel TddnModel;

/**
 * Training settings. Start from [`tddn_train_options_default`].
 */
typedef struct TddnTrainOptions {
  size_t window;
  /**
   * Number of conv/pool stages.
   */
  size_t depth;
  size_t epochs;
  size_t batch_size;
  double lr;
  size_t patience;
  double r_max;
  uint64_t seed;
  bool include_sensor_14;
} TddnTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *tddn_last_error_message(void);

struct TddnTrainOptions tddn_train_options_default(void);

/**
 * Loads `train_FDxxx.txt`, `test_FDxxx.txt` and `RUL_FDxxx.txt` from `dir`.
 * `subset` is e.g. "FD001".
 */
enum TddnStatus tddn_dataset_load(const char *dir, const char *subset, struct TddnDataset **out);

/**
 * Generates a synthetic fleet with `engines` engines per split.
 */
enum TddnStatus tddn_dataset_synthetic(const char *subset,
                                       size_t engines,
                                       uint64_t seed,
                                       struct TddnDataset **out);

enum TddnStatus tddn_dataset_counts(const struct TddnDataset *dataset,
                                    size_t *train_engines,
                                    size_t *test_engines);

void tddn_dataset_free(struct TddnDataset *dataset);

/**
 * Trains on the dataset's training split. `options` may be null for defaults.
 */
enum TddnStatus tddn_model_train(const struct TddnDataset *dataset,
                                 const struct TddnTrainOptions *options,
                                 struct TddnModel **out);

enum TddnStatus tddn_model_save(const struct TddnModel *model, const char *path);

enum TddnStatus tddn_model_load(const char *path, struct TddnModel **out);

void tddn_model_free(struct TddnModel *model);

/**
 * Window length `w` and columns per cycle `m` expected by
 * [`tddn_model_predict_window`].
 */
enum TddnStatus tddn_model_shape(const struct TddnModel *model, size_t *window, size_t *columns);

/**
 * RUL prediction, clamped to `[0, R_max]`, for one already-scaled window of
 * `w * m` values in row-major (cycle, column) order.
 */
enum TddnStatus tddn_model_predict_window(const struct TddnModel *model,
                                          const double *values,
                                          size_t len,
                                          double *out);

/**
 * Clamped prediction from the last-cycle window of test engine `unit_id`.
 */
enum TddnStatus tddn_model_predict_test_engine(const struct TddnModel *model,
                                               const struct TddnDataset *dataset,
                                               uint32_t unit_id,
                                               double *out);

/**
 * Test-split RMSE and score from each engine's last-cycle window.
 */
enum TddnStatus tddn_model_evaluate(const struct TddnModel *model,
                                    const struct TddnDataset *dataset,
                                    bool cap_true_rul,
                                    double *rmse,
                                    double *score);

/**
 * Root mean squared error of `len` errors (prediction minus truth).
 */
enum TddnStatus tddn_rmse(const double *errors, size_t len, double *out);

/**
 * Asymmetric score: late predictions are penalized more than early ones.
 */
enum TddnStatus tddn_nasa_score(const double *errors, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TDDN_H */
