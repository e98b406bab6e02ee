#ifndef SBMCA_H
#define SBMCA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbmcaStatus {
  SBMCA_STATUS_OK = 0,
  SBMCA_STATUS_NULL_POINTER = 1,
  SBMCA_STATUS_INVALID_ARGUMENT = 2,
  SBMCA_STATUS_NUMERIC_FAILURE = 3,
  SBMCA_STATUS_IO_ERROR = 4,
  SBMCA_STATUS_PANIC = 5,
} SbmcaStatus;

/**
 * Which signal of a dataset to copy out.
 */
typedef enum SbmcaSignal {
  SBMCA_SIGNAL_MIXTURE = 0,
  SBMCA_SIGNAL_KNOWN = 1,
  SBMCA_SIGNAL_BACKGROUND = 2,
  SBMCA_SIGNAL_NOISE = 3,
} SbmcaSignal;

/**
 * Initialisation of the known-component codes in SBMCA.
 */
typedef enum SbmcaInit {
  SBMCA_INIT_LASSO_D1 = 0,
  SBMCA_INIT_MCA_DCT_OMP = 1,
} SbmcaInit;

typedef struct SbmcaDataset SbmcaDataset;

typedef struct SbmcaDictionary SbmcaDictionary;

typedef struct SbmcaResult SbmcaResult;

/**
 * SBMCA settings. Fill with [`sbmca_params_default`] before changing fields.
 * The three penalties have no defaults and must always be set.
 */
typedef struct SbmcaSettings {
  double lambda1;
  double lambda2;
  double lambda3;
  size_t num_atoms;
  size_t inner_iters;
  size_t max_outer_iters;
  double outer_tol;
  uint64_t seed;
  enum SbmcaInit init;
} SbmcaSettings;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *sbmca_last_error_message(void);

/**
 * Generates the default synthetic mixture. `n = 0` keeps the default length.
 */
enum SbmcaStatus sbmca_dataset_generate(uint64_t seed,
                                        double sigma,
                                        size_t n,
                                        struct SbmcaDataset **out);

size_t sbmca_dataset_len(const struct SbmcaDataset *ds);

double sbmca_dataset_fs(const struct SbmcaDataset *ds);

size_t sbmca_dataset_block_len(const struct SbmcaDataset *ds);

/**
 * Copies one signal into `buf`, which must hold exactly `sbmca_dataset_len` values.
 */
enum SbmcaStatus sbmca_dataset_copy_signal(const struct SbmcaDataset *ds,
                                           enum SbmcaSignal which,
                                           double *buf,
                                           size_t len);

/**
 * Known dictionary of a dataset: its two prototypes at circular shifts `-r..=r`.
 */
enum SbmcaStatus sbmca_dataset_known_dictionary(const struct SbmcaDataset *ds,
                                                int64_t shift_range,
                                                struct SbmcaDictionary **out);

void sbmca_dataset_free(struct SbmcaDataset *ds);

/**
 * Pulse dictionary from `num_prototypes` column-major prototypes of length
 * `m` and `num_shifts` circular shifts.
 */
enum SbmcaStatus sbmca_dictionary_pulse(const double *prototypes,
                                        size_t m,
                                        size_t num_prototypes,
                                        const int64_t *shifts,
                                        size_t num_shifts,
                                        struct SbmcaDictionary **out);

enum SbmcaStatus sbmca_dictionary_dct(size_t m, struct SbmcaDictionary **out);

enum SbmcaStatus sbmca_dictionary_identity(size_t m, struct SbmcaDictionary **out);

enum SbmcaStatus sbmca_dictionary_load(const char *path, struct SbmcaDictionary **out);

enum SbmcaStatus sbmca_dictionary_save(const struct SbmcaDictionary *dict, const char *path);

size_t sbmca_dictionary_rows(const struct SbmcaDictionary *dict);

size_t sbmca_dictionary_atoms(const struct SbmcaDictionary *dict);

/**
 * Copies the `rows x atoms` matrix, column-major, into `buf`.
 */
enum SbmcaStatus sbmca_dictionary_copy(const struct SbmcaDictionary *dict, double *buf, size_t len);

void sbmca_dictionary_free(struct SbmcaDictionary *dict);

/**
 * Default iteration settings. The penalties are set to NaN, which
 * `sbmca_separate_sbmca` rejects until the caller chooses them.
 */
enum SbmcaStatus sbmca_params_default(struct SbmcaSettings *out);

/**
 * MCA with two fixed dictionaries and a single penalty.
 */
enum SbmcaStatus sbmca_separate_mca(const double *x,
                                    size_t n,
                                    size_t block_len,
                                    const struct SbmcaDictionary *d1,
                                    const struct SbmcaDictionary *d2,
                                    double lambda,
                                    struct SbmcaResult **out);

/**
 * SBMCA with known dictionary `d1`; the background dictionary is learned.
 */
enum SbmcaStatus sbmca_separate_sbmca(const double *x,
                                      size_t n,
                                      size_t block_len,
                                      const struct SbmcaDictionary *d1,
                                      const struct SbmcaSettings *params,
                                      struct SbmcaResult **out);

size_t sbmca_result_len(const struct SbmcaResult *res);

enum SbmcaStatus sbmca_result_copy_known(const struct SbmcaResult *res, double *buf, size_t len);

enum SbmcaStatus sbmca_result_copy_background(const struct SbmcaResult *res,
                                              double *buf,
                                              size_t len);

size_t sbmca_result_outer_iters(const struct SbmcaResult *res);

/**
 * 1 if every solver met its tolerance, 0 otherwise (or for NULL).
 */
int32_t sbmca_result_converged(const struct SbmcaResult *res);

/**
 * The learned background dictionary; invalid-argument for MCA results.
 */
enum SbmcaStatus sbmca_result_learned_dictionary(const struct SbmcaResult *res,
                                                 struct SbmcaDictionary **out);

void sbmca_result_free(struct SbmcaResult *res);

/**
 * Reconstruction SNR in dB; `+INFINITY` when `est == reference` exactly.
 */
enum SbmcaStatus sbmca_snr_db(const double *reference, const double *est, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SBMCA_H */
