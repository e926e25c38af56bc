#ifndef CARDICAT_H
#define CARDICAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct CcModel CcModel;

typedef int32_t CcStatus;

#define CC_OK 0

#define CC_ERR_USAGE 1

#define CC_ERR_DATA 2

#define CC_ERR_NUMERIC 3

#define CC_ERR_INTERNAL 4

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next call into this library from the same thread.
 */
const char *cc_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void cc_string_free(char *s);

/**
 * Writes the simulated benchmark table as CSV text into `*out_csv`.
 *
 * # Safety
 * `out_csv` must be a valid pointer.
 */
CcStatus cc_simulate_csv(size_t n_rows, uint64_t seed, char **out_csv);

/**
 * Trains on the CSV at `data_path` and writes a checkpoint to
 * `checkpoint_path`. `config_json` is an optional training configuration
 * (fields as in the CLI config's `train` object). When `out_model` is not
 * null it receives a handle to the trained model.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_model` may be null.
 */
CcStatus cc_fit(const char *data_path,
                const char *config_json,
                const char *checkpoint_path,
                struct CcModel **out_model);

/**
 * Loads a checkpoint file into `*out_model`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out_model` valid.
 */
CcStatus cc_model_load(const char *path, struct CcModel **out_model);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not have been freed already.
 */
void cc_model_free(struct CcModel *model);

/**
 * Number of trainable parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cc_model_param_count(const struct CcModel *model);

/**
 * Samples `n_rows` synthetic rows as CSV text. `condition_json` is an
 * optional object of categorical feature to level, for conditional models.
 *
 * # Safety
 * `model` must be a live handle; `out_csv` valid.
 */
CcStatus cc_model_sample_csv(const struct CcModel *model,
                             size_t n_rows,
                             uint64_t seed,
                             const char *condition_json,
                             char **out_csv);

/**
 * Scores `synth_csv` against `real_csv` (both CSV text) and writes the JSON
 * report into `*out_json`. The schema comes from `model` when given,
 * otherwise it is inferred from the real rows.
 *
 * # Safety
 * `model` may be null; strings must be NUL-terminated; `out_json` valid.
 */
CcStatus cc_evaluate_csv(const struct CcModel *model,
                         const char *real_csv,
                         const char *synth_csv,
                         char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARDICAT_H */
