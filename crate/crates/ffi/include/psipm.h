#ifndef PSIPM_H
#define PSIPM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsipmMode {
  PSIPM_MODE_DIRECT = 0,
  PSIPM_MODE_GMRES_LDL = 1,
  PSIPM_MODE_PCG_CHOL = 2,
  PSIPM_MODE_SLACK_DIRECT = 3,
} PsipmMode;

typedef enum PsipmStatus {
  PSIPM_STATUS_OK = 0,
  PSIPM_STATUS_NULL_POINTER = 1,
  PSIPM_STATUS_INVALID_ARGUMENT = 2,
  PSIPM_STATUS_MODEL_ERROR = 3,
  PSIPM_STATUS_SOLVE_ERROR = 4,
  PSIPM_STATUS_PANIC = 5,
} PsipmStatus;

// Outcome of a finished solve.
typedef enum PsipmOutcome {
  PSIPM_OUTCOME_OPTIMAL = 0,
  PSIPM_OUTCOME_MAX_ITERATIONS = 1,
  PSIPM_OUTCOME_FAILED = 2,
} PsipmOutcome;

// Opaque problem handle.
typedef struct PsipmModel PsipmModel;

// Opaque result handle.
typedef struct PsipmResult PsipmResult;

// Solver settings. Start from [`psipm_options_default`].
typedef struct PsipmOptions {
  enum PsipmMode mode;
  double tol;
  double reg_scale;
  // Fixed value for both regularization parameters; `<= 0` uses the norm-based rule.
  double reg;
  double sigma_r;
  size_t max_ppm;
  size_t max_ipm;
  // Krylov iterations per solve; 0 picks the mode default.
  size_t krylov_budget;
  double refresh_frac;
} PsipmOptions;

// Summary of a solve.
typedef struct PsipmReport {
  enum PsipmOutcome outcome;
  size_t ppm_iters;
  size_t ipm_iters;
  size_t krylov_iters;
  size_t factorizations;
  double objective;
  double rho;
  double delta;
  double dual_residual;
  double primal_residual;
  double mu;
  double time_s;
} PsipmReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The string is
// owned by the library and valid until the next psipm call on the thread.
const char *psipm_last_error(void);

// Library version as a static NUL-terminated string.
const char *psipm_version(void);

struct PsipmOptions psipm_options_default(void);

// Reads an MPS or QPS file (optionally gzipped).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PsipmStatus psipm_model_read(const char *path, struct PsipmModel **out);

// Builds `min ½xᵀHx + gᵀx  s.t. Ax = b` from CSC arrays with 0-based indices.
//
// `H` is `d×d` with both triangles stored; pass null `h_col_ptr` for an LP.
// `A` is `m×d`. `cone[j] != 0` marks `x_j ≥ 0`; null `cone` makes every
// variable nonnegative.
//
// # Safety
// Every non-null array must hold the documented number of elements.
enum PsipmStatus psipm_model_from_csc(size_t d,
                                      size_t m,
                                      const size_t *h_col_ptr,
                                      const size_t *h_row_idx,
                                      const double *h_values,
                                      const size_t *a_col_ptr,
                                      const size_t *a_row_idx,
                                      const double *a_values,
                                      const double *g,
                                      const double *b,
                                      const uint8_t *cone,
                                      struct PsipmModel **out);

// Number of variables and constraints of the standard-form model.
//
// # Safety
// `model` must come from this library; `d` and `m` may be null.
enum PsipmStatus psipm_model_dims(const struct PsipmModel *model, size_t *d, size_t *m);

// # Safety
// `model` must be null or a handle from this library not yet freed.
void psipm_model_free(struct PsipmModel *model);

// Solves `model`. A null `options` uses the defaults. A result handle is
// produced whenever the solver ran, including max-iteration and failed
// outcomes; check the report's `outcome`.
//
// # Safety
// `model` must be a live handle, `options` null or readable, `out` writable.
enum PsipmStatus psipm_solve(const struct PsipmModel *model,
                             const struct PsipmOptions *options,
                             struct PsipmResult **out);

// # Safety
// `result` must be a live handle and `report` writable.
enum PsipmStatus psipm_result_report(const struct PsipmResult *result, struct PsipmReport *report);

// Length of the primal solution in the variables of the source problem.
//
// # Safety
// `result` must be null or a live handle.
size_t psipm_result_primal_len(const struct PsipmResult *result);

// Copies the primal solution into `buf`, which must hold at least
// [`psipm_result_primal_len`] values.
//
// # Safety
// `buf` must point to `len` writable doubles.
enum PsipmStatus psipm_result_primal(const struct PsipmResult *result, double *buf, size_t len);

// # Safety
// `result` must be null or a handle from this library not yet freed.
void psipm_result_free(struct PsipmResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSIPM_H */
