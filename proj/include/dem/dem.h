/* C interface to the denoising energy matching library.
 *
 * Every function returns a dem_status; on failure a description of the most
 * recent error on the calling thread is available from dem_last_error().
 * Handles are opaque and owned by the caller (release with the matching
 * *_destroy function). Points are passed as dense row-major arrays, one point
 * per row.
 */
#ifndef DEM_DEM_H
#define DEM_DEM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DEM_API __declspec(dllexport)
#else
#define DEM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dem_status {
  DEM_OK = 0,
  DEM_ERR_INVALID_ARGUMENT = 1,
  DEM_ERR_DOMAIN = 2,
  DEM_ERR_DISTANCE_FLOOR = 3,
  DEM_ERR_NONFINITE_STATE = 4,
  DEM_ERR_NONFINITE_LOSS = 5,
  DEM_ERR_ALL_SAMPLES_INVALID = 6,
  DEM_ERR_SHAPE_MISMATCH = 7,
  DEM_ERR_SIZE_MISMATCH = 8,
  DEM_ERR_DIMENSION_TOO_LARGE = 9,
  DEM_ERR_EMPTY_BUFFER = 10,
  DEM_ERR_ALL_NONFINITE = 11,
  DEM_ERR_CONFIG = 12,
  DEM_ERR_IO = 13,
  DEM_ERR_TRAINING_ABORTED = 14,
  DEM_ERR_CHAINS_OUT_OF_WINDOW = 15,
  DEM_ERR_INTERNAL = 99
} dem_status;

DEM_API const char* dem_version(void);
DEM_API const char* dem_status_name(dem_status status);
/* Message of the last failed call on this thread ("" if none). */
DEM_API const char* dem_last_error(void);

/* ---- commands ---------------------------------------------------------- */

/* Option bag for the command entry points. Recognized keys: config,
 * checkpoint, out, reference, samples, sweep, resume, seed, workers, n,
 * metrics (comma separated), verbose ("1" prints progress to stderr). */
typedef struct dem_options dem_options;

DEM_API dem_status dem_options_create(dem_options** out);
DEM_API dem_status dem_options_set(dem_options* opts, const char* key, const char* value);
DEM_API void dem_options_destroy(dem_options* opts);

/* name: "train", "sample", "eval", "ablate" or "mcmc". */
DEM_API dem_status dem_run_command(const char* name, const dem_options* opts);

/* ---- targets ----------------------------------------------------------- */

typedef struct dem_target dem_target;

/* Target described by a config file (raw, unscaled coordinates). */
DEM_API dem_status dem_target_from_config(const char* config_path, dem_target** out);
/* Built-in target by task name: "gmm", "dw4", "lj13", "lj55" or "gaussian"
 * (the latter uses `dim`; the others ignore it). */
DEM_API dem_status dem_target_create(const char* task, int dim, dem_target** out);
DEM_API void dem_target_destroy(dem_target* t);
DEM_API int dem_target_dim(const dem_target* t);
/* energy and (if grad != NULL) its gradient at x[dim]. */
DEM_API dem_status dem_target_energy(const dem_target* t, const double* x, double* energy, double* grad);
/* K-sample Monte Carlo estimate of the noised score at noise level sigma.
 * kind: 0 log-sum-exp, 1 ratio, 2 Jensen. clip <= 0 disables clipping. */
DEM_API dem_status dem_estimate_score(const dem_target* t, const double* x_t, double sigma, int k, int kind,
                                      double clip, uint64_t seed, double* out);

/* ---- trained networks -------------------------------------------------- */

typedef struct dem_model dem_model;

DEM_API dem_status dem_model_load(const char* checkpoint_path, dem_model** out);
DEM_API void dem_model_destroy(dem_model* m);
DEM_API int dem_model_dim(const dem_model* m);
/* Network score at n points (network coordinates) and a shared time t. */
DEM_API dem_status dem_model_score(const dem_model* m, const double* x, size_t n, double t, double* out);
/* n reverse-SDE samples in raw coordinates, written row-major to out[n*dim]. */
DEM_API dem_status dem_model_sample(const dem_model* m, size_t n, uint64_t seed, double* out);

/* ---- metrics ----------------------------------------------------------- */

DEM_API dem_status dem_wasserstein2(const double* a, const double* b, size_t n, int dim, double* out);
DEM_API dem_status dem_ess_normalized(const double* log_weights, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif
