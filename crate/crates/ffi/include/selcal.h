#ifndef SELCAL_H
#define SELCAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SelcalStatus {
  SELCAL_STATUS_OK = 0,
  SELCAL_STATUS_NULL_POINTER = 1,
  SELCAL_STATUS_INVALID_UTF8 = 2,
  SELCAL_STATUS_IO = 3,
  SELCAL_STATUS_FORMAT = 4,
  SELCAL_STATUS_CORRUPTION = 5,
  SELCAL_STATUS_VALIDATION = 6,
  SELCAL_STATUS_CONFIG = 7,
  SELCAL_STATUS_SHAPE = 8,
  SELCAL_STATUS_DOMAIN = 9,
  SELCAL_STATUS_NUMERIC = 10,
  SELCAL_STATUS_BUFFER_TOO_SMALL = 11,
  SELCAL_STATUS_PANIC = 12,
} SelcalStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SelcalDataset SelcalDataset;

/**
 * Opaque model handle.
 */
typedef struct SelcalModel SelcalModel;

/**
 * Scalar part of a selective evaluation.
 */
typedef struct SelcalEvalSummary {
  double beta_target;
  double coverage_achieved;
  double tau;
  double ece1;
  double ece2;
  double brier;
  double selective_accuracy;
  uint64_t n_accepted;
  uint64_t n_total;
  uint64_t bins_used;
  /**
   * Set when ties at the threshold pushed coverage above the target.
   */
  bool degenerate_threshold;
} SelcalEvalSummary;

typedef struct SelcalCoverageBound {
  double beta_tilde;
  double epsilon;
  double delta;
  uint64_t n_u;
  double lower;
  double upper;
} SelcalCoverageBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *selcal_version(void);

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next selcal call on the same thread.
 */
const char *selcal_last_error(void);

/**
 * Loads a `.selc` dataset. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SelcalStatus selcal_dataset_load(const char *path, struct SelcalDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a handle from `selcal_dataset_load` not yet freed.
 */
void selcal_dataset_free(struct SelcalDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; the out pointers may be NULL to skip a value.
 */
enum SelcalStatus selcal_dataset_dims(const struct SelcalDataset *ds,
                                      size_t *n,
                                      size_t *embed_dim,
                                      size_t *num_classes);

/**
 * Loads a JSON model file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SelcalStatus selcal_model_load(const char *path, struct SelcalModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from `selcal_model_load` not yet freed.
 */
void selcal_model_free(struct SelcalModel *model);

/**
 * Writes the soft selector score of every row into `out[0..n)`.
 * `capacity` must be at least the dataset's row count.
 *
 * # Safety
 * Handles must be live and `out` must hold `capacity` doubles.
 */
enum SelcalStatus selcal_model_scores(const struct SelcalModel *model,
                                      const struct SelcalDataset *ds,
                                      double *out,
                                      size_t capacity);

/**
 * Selective evaluation at coverage `beta` with `bins` equal-mass bins; the
 * threshold is chosen on the dataset's own scores.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum SelcalStatus selcal_selective_eval(const struct SelcalModel *model,
                                        const struct SelcalDataset *ds,
                                        double beta,
                                        size_t bins,
                                        struct SelcalEvalSummary *out);

/**
 * ECE_q over `m` equal-mass bins. `correct[i]` is nonzero for a correct
 * prediction.
 *
 * # Safety
 * `conf` and `correct` must each hold `n` elements; `out` must be valid.
 */
enum SelcalStatus selcal_ece(const double *conf,
                             const uint8_t *correct,
                             size_t n,
                             uint32_t q,
                             size_t m,
                             double *out);

/**
 * Threshold accepting at least a `beta` fraction of `scores`; ties at the
 * threshold are accepted.
 *
 * # Safety
 * `scores` must hold `n` doubles; `out_tau` must be valid.
 */
enum SelcalStatus selcal_choose_threshold(const double *scores,
                                          size_t n,
                                          double beta,
                                          double *out_tau);

/**
 * Hoeffding interval of radius sqrt(ln(2/δ)/(2·n_u)) around `beta_tilde`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SelcalStatus selcal_coverage_bound(double beta_tilde,
                                        uint64_t n_u,
                                        double delta,
                                        struct SelcalCoverageBound *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELCAL_H */
