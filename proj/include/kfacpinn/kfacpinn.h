/* C interface to the kfacpinn library. All handles are opaque; every call
 * that can fail returns a kp_status and leaves a message retrievable through
 * kp_last_error() on the calling thread. */
#ifndef KFACPINN_H
#define KFACPINN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(KFACPINN_BUILDING)
#    define KP_API __declspec(dllexport)
#  else
#    define KP_API __declspec(dllimport)
#  endif
#else
#  define KP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kp_status {
  KP_OK = 0,
  KP_ERR_INVALID_ARGUMENT = 1,
  KP_ERR_DIMENSION = 2,
  KP_ERR_NUMERICAL = 3,
  KP_ERR_NOT_PSD = 4,
  KP_ERR_CAPACITY = 5,
  KP_ERR_LINE_SEARCH = 6,
  KP_ERR_IO = 7,
  KP_ERR_INTERNAL = 8
} kp_status;

typedef struct kp_problem kp_problem;
typedef struct kp_params kp_params;
typedef struct kp_run kp_run;

typedef struct kp_log_row {
  size_t step;
  double wall_time_s;
  double loss_interior;
  double loss_boundary;
  double loss_total;
  double l2_rel_error;
  double alpha;
  double mu;
} kp_log_row;

typedef struct kp_checkpoint_info {
  char problem[64];
  size_t problem_dim;
  double kappa;
  size_t n_eval_points;
  uint64_t seed;
  size_t step;
} kp_checkpoint_info;

typedef void (*kp_row_callback)(const kp_log_row* row, void* user);
typedef void (*kp_check_callback)(const char* name, int passed, const char* detail, void* user);

KP_API const char* kp_version(void);
KP_API const char* kp_status_string(kp_status status);
/* Message of the last failed call on this thread; "" if none. */
KP_API const char* kp_last_error(void);

/* dim = 0 selects the catalog default; kappa is used by "heat" only. */
KP_API kp_status kp_problem_create(const char* name, size_t dim, double kappa, kp_problem** out);
KP_API void kp_problem_destroy(kp_problem* problem);
KP_API kp_status kp_problem_input_dim(const kp_problem* problem, size_t* out);
/* x holds n_points rows of input_dim values. */
KP_API kp_status kp_problem_true_solution(const kp_problem* problem, const double* x, size_t n_points,
                                          double* out);

KP_API kp_status kp_params_init(const size_t* widths, size_t n_widths, uint64_t seed, kp_params** out);
/* info may be NULL. */
KP_API kp_status kp_params_load(const char* path, kp_params** out, kp_checkpoint_info* info);
KP_API kp_status kp_params_save(const kp_params* params, const char* path, const kp_checkpoint_info* info);
KP_API void kp_params_destroy(kp_params* params);
KP_API kp_status kp_params_count(const kp_params* params, size_t* out);
KP_API kp_status kp_params_input_dim(const kp_params* params, size_t* out);
/* Flat layout: per layer vec([W | b]), row index fastest. */
KP_API kp_status kp_params_get(const kp_params* params, double* out, size_t n);
KP_API kp_status kp_params_set(kp_params* params, const double* values, size_t n);
KP_API kp_status kp_params_forward(const kp_params* params, const double* x, size_t n_points, size_t dim,
                                   double* out);

KP_API kp_status kp_eval_l2(const kp_params* params, const kp_problem* problem, size_t n_points, uint64_t seed,
                            double* out);

/* Runs training to completion. A diverged run still returns KP_OK with
 * kp_run_diverged() set; callback may be NULL. */
KP_API kp_status kp_train(const char* config_json, kp_row_callback callback, void* user, kp_run** out);
KP_API kp_status kp_train_file(const char* config_path, kp_row_callback callback, void* user, kp_run** out);
KP_API void kp_run_destroy(kp_run* run);
KP_API kp_status kp_run_row_count(const kp_run* run, size_t* out);
KP_API kp_status kp_run_row(const kp_run* run, size_t index, kp_log_row* out);
KP_API kp_status kp_run_diverged(const kp_run* run, int* out);
/* Valid until the run is destroyed. */
KP_API const char* kp_run_failure(const kp_run* run);
KP_API const char* kp_run_output_dir(const kp_run* run);
KP_API kp_status kp_run_params(const kp_run* run, kp_params** out);

/* Runs the built-in oracle and property checks. */
KP_API kp_status kp_run_checks(kp_check_callback callback, void* user, size_t* n_failed);

#ifdef __cplusplus
}
#endif

#endif /* KFACPINN_H */
