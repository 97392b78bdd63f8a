#ifndef FUNCPOLY_H
#define FUNCPOLY_H

#include <stddef.h>

/*
 Result codes.
 */
typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_POINTER = 1,
  FP_STATUS_INVALID_ARGUMENT = 2,
  FP_STATUS_UNKNOWN_ID = 3,
  /*
   Singular or rank-deficient local systems, too few points in a window.
   */
  FP_STATUS_NUMERICAL = 4,
  /*
   The requested quantity does not exist for the given inputs.
   */
  FP_STATUS_NOT_AVAILABLE = 5,
  FP_STATUS_IO = 6,
  FP_STATUS_PARSE = 7,
  /*
   A simulation failed on too many replications.
   */
  FP_STATUS_SIMULATION = 8,
  FP_STATUS_PANIC = 9,
} FpStatus;

/*
 A set of n curves observed on a common grid.
 */
typedef struct FpSample FpSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or null. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *fp_last_error_message(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be null or a pointer obtained from this library that has not
 been freed.
 */
void fp_string_free(char *s);

/*
 Creates a sample from `n_curves` rows of `n_points` values stored row by
 row, observed at the strictly increasing points `grid` in [0, 1].

 # Safety
 `grid` must point to `n_points` doubles, `values` to
 `n_curves * n_points` doubles and `out` to writable storage.
 */
enum FpStatus fp_sample_new(const double *grid,
                            size_t n_points,
                            const double *values,
                            size_t n_curves,
                            struct FpSample **out);

/*
 Reads a sample from a curve CSV file (`x,...` header, `curve_i,...` rows).

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum FpStatus fp_sample_read_csv(const char *path, struct FpSample **out);

/*
 Releases a sample.

 # Safety
 `sample` must be null or a handle from this library not yet freed.
 */
void fp_sample_free(struct FpSample *sample);

/*
 Number of curves and grid points of a sample.

 # Safety
 `sample` must be a live handle; the out pointers writable.
 */
enum FpStatus fp_sample_shape(const struct FpSample *sample, size_t *n_curves, size_t *n_points);

/*
 Local polynomial estimate of the `nu`-th derivative at `n_eval` points.
 `h` is the bandwidth; pass `INFINITY` for the global polynomial fit.

 # Safety
 `sample` must be a live handle, `kernel` a NUL-terminated kernel id such
 as `truncated-gaussian:1`, and `eval`, `out` must hold `n_eval` doubles.
 */
enum FpStatus fp_fit(const struct FpSample *sample,
                     size_t p,
                     size_t nu,
                     double h,
                     const char *kernel,
                     const double *eval,
                     size_t n_eval,
                     double *out);

/*
 Leave-one-curve-out cross-validated bandwidth for the order-`p` fit of
 the regression function. Writes `INFINITY` for the global fit.

 # Safety
 `sample` must be a live handle, `kernel` a NUL-terminated string and
 `h_out` writable.
 */
enum FpStatus fp_cross_validate(const struct FpSample *sample,
                                size_t p,
                                const char *kernel,
                                double *h_out);

/*
 Plug-in bandwidth for the `nu`-th derivative with a uniform weight.

 # Safety
 As for [`fp_cross_validate`].
 */
enum FpStatus fp_plugin_bandwidth(const struct FpSample *sample,
                                  size_t nu,
                                  size_t p,
                                  const char *kernel,
                                  double *h_out);

/*
 Quadratic variation of the sample with a uniform weight.

 # Safety
 `sample` must be a live handle and `out` writable.
 */
enum FpStatus fp_quadratic_variation(const struct FpSample *sample, double *out);

/*
 Jump of the first partial derivative of a covariance model across the
 diagonal at `x`.

 # Safety
 `model` must be a NUL-terminated id such as `ou:15`; `out` writable.
 */
enum FpStatus fp_covariance_alpha(const char *model, double x, double *out);

/*
 Kernel tableau of order `p` as a JSON string.

 # Safety
 `kernel` must be a NUL-terminated string and `out` writable. Free the
 result with [`fp_string_free`].
 */
enum FpStatus fp_kernel_tableau_json(const char *kernel, size_t p, char **out);

/*
 Runs a simulation experiment from a JSON config and returns the report
 as JSON. `workers` = 0 uses the default thread count.

 # Safety
 `config_json` must be a NUL-terminated string and `out` writable. Free
 the result with [`fp_string_free`].
 */
enum FpStatus fp_experiment_run_json(const char *config_json, size_t workers, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUNCPOLY_H */
