/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef PHTPLATE_H
#define PHTPLATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status of a call.
 */
typedef enum PhtStatus {
  PHT_STATUS_OK = 0,
  /*
   Malformed or inconsistent input (model file, argument).
   */
  PHT_STATUS_INPUT = 1,
  /*
   The numerical solution failed.
   */
  PHT_STATUS_NUMERICAL = 2,
  /*
   A required pointer was null or a string was not UTF-8.
   */
  PHT_STATUS_NULL_OR_ENCODING = 3,
  /*
   Internal panic.
   */
  PHT_STATUS_PANIC = 4,
} PhtStatus;

/*
 A parsed and validated model.
 */
typedef struct PhtModel PhtModel;

/*
 Lowest modes of a model on its initial mesh.
 */
typedef struct PhtSolution PhtSolution;

/*
 Outcome of a single-mode or multiple-mode adaptation.
 */
typedef struct PhtAdaptSummary {
  /*
   First mode of the adapted set, 0-based.
   */
  size_t set_start;
  /*
   Multiplicity of the adapted set.
   */
  size_t set_n;
  size_t steps;
  bool converged;
  size_t dofs;
  /*
   Mean frequency of the set on the final mesh.
   */
  double frequency;
  double e_lambda;
  double delta_phi;
} PhtAdaptSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *pht_version(void);

/*
 Message of the last failed call on this thread, empty after a successful call.
 Valid until the next call on the same thread.
 */
const char *pht_last_error(void);

/*
 Loads and validates a model file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PhtStatus pht_model_load(const char *path, struct PhtModel **out);

/*
 Parses and validates a model from TOML text.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PhtStatus pht_model_parse(const char *text, struct PhtModel **out);

/*
 Number of patches of a model, 0 for a null handle.

 # Safety
 `model` must be null or a handle from `pht_model_load`/`pht_model_parse`.
 */
size_t pht_model_num_patches(const struct PhtModel *model);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void pht_model_free(struct PhtModel *model);

/*
 Solves for the lowest `n_modes` modes on the model's initial mesh. `n_modes == 0` uses the
 count from the model file.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum PhtStatus pht_solve(const struct PhtModel *model, size_t n_modes, struct PhtSolution **out);

/*
 Number of computed modes, 0 for a null handle.

 # Safety
 `sol` must be null or a live handle.
 */
size_t pht_solution_num_modes(const struct PhtSolution *sol);

/*
 Total dofs of the discretization, 0 for a null handle.

 # Safety
 `sol` must be null or a live handle.
 */
size_t pht_solution_num_dofs(const struct PhtSolution *sol);

/*
 Length of each mode vector (free dofs), 0 for a null handle.

 # Safety
 `sol` must be null or a live handle.
 */
size_t pht_solution_num_free(const struct PhtSolution *sol);

/*
 Copies up to `cap` angular frequencies into `buf`; returns the number copied.

 # Safety
 `sol` must be null or a live handle; `buf` must hold `cap` doubles.
 */
size_t pht_solution_frequencies(const struct PhtSolution *sol, double *buf, size_t cap);

/*
 Copies up to `cap` entries of the M-normalized mode `k` (0-based) into `buf`; returns the
 number copied, 0 if `k` is out of range.

 # Safety
 `sol` must be null or a live handle; `buf` must hold `cap` doubles.
 */
size_t pht_solution_mode(const struct PhtSolution *sol, size_t k, double *buf, size_t cap);

/*
 # Safety
 `sol` must be null or a handle not yet freed.
 */
void pht_solution_free(struct PhtSolution *sol);

/*
 Adapts the mesh for `mode` (0-based) and the multiple-mode set containing it, with the
 settings of the model file.

 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum PhtStatus pht_adapt(const struct PhtModel *model, size_t mode, struct PhtAdaptSummary *out);

/*
 Runs a band sweep and returns the JSON report in `*out_json`, released with
 `pht_string_free`. A NaN bound uses the band from the model file.

 # Safety
 `model` must be a live handle and `out_json` a valid pointer.
 */
enum PhtStatus pht_sweep_json(const struct PhtModel *model, double lo, double hi, char **out_json);

/*
 # Safety
 `s` must be null or a string returned by this library and not yet freed.
 */
void pht_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHTPLATE_H */
