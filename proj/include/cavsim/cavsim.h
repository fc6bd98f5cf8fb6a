#ifndef CAVSIM_CAVSIM_H
#define CAVSIM_CAVSIM_H

#include <stddef.h>
#include <stdint.h>

#if defined(CAVSIM_BUILDING_LIBRARY)
#define CAVSIM_API __attribute__((visibility("default")))
#else
#define CAVSIM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cavsim_status {
  CAVSIM_OK = 0,
  CAVSIM_ERR_INVALID_ARGUMENT = 1,
  CAVSIM_ERR_NOT_FOUND = 2,
  CAVSIM_ERR_IO = 3,
  CAVSIM_ERR_SCHEMA = 4,
  CAVSIM_ERR_EMPTY_BIN = 5,
  CAVSIM_ERR_NO_CONVERGENCE = 6,
  CAVSIM_ERR_INSUFFICIENT_DATA = 7,
  CAVSIM_ERR_INTERNAL = 100
} cavsim_status;

/* Message of the last failure on the calling thread; empty after success. */
CAVSIM_API const char* cavsim_last_error(void);
CAVSIM_API const char* cavsim_version(void);
CAVSIM_API const char* cavsim_status_name(cavsim_status status);

/* ---- configuration ---------------------------------------------------- */

typedef struct cavsim_config cavsim_config;

CAVSIM_API cavsim_status cavsim_config_default(cavsim_config** out);
/* Commented JSON text; a run manifest is accepted and its config used. */
CAVSIM_API cavsim_status cavsim_config_parse(const char* json_text, cavsim_config** out);
CAVSIM_API cavsim_status cavsim_config_load(const char* path, cavsim_config** out);
CAVSIM_API cavsim_status cavsim_config_set_seed(cavsim_config* cfg, uint64_t seed);
CAVSIM_API cavsim_status cavsim_config_set_threads(cavsim_config* cfg, int threads);
CAVSIM_API cavsim_status cavsim_config_set_profile(cavsim_config* cfg, const char* profile);
/* Number of violations; *report (may be NULL) receives a newline-separated
   list owned by the config and valid until the next call on it. */
CAVSIM_API size_t cavsim_config_validate(cavsim_config* cfg, const char** report);
/* Resolved JSON text, owned by the config. */
CAVSIM_API const char* cavsim_config_json(cavsim_config* cfg);
CAVSIM_API void cavsim_config_free(cavsim_config* cfg);

/* ---- experiment runs -------------------------------------------------- */

typedef struct cavsim_run cavsim_run;

CAVSIM_API size_t cavsim_experiment_count(void);
CAVSIM_API const char* cavsim_experiment_name(size_t index);

CAVSIM_API cavsim_status cavsim_run_experiment(const cavsim_config* cfg, const char* name, int check,
                                               cavsim_run** out);
/* Writes data files and manifest.json into dir. */
CAVSIM_API cavsim_status cavsim_run_write(const cavsim_run* run, const char* dir);
CAVSIM_API size_t cavsim_run_file_count(const cavsim_run* run);
CAVSIM_API const char* cavsim_run_file_name(const cavsim_run* run, size_t index);
CAVSIM_API size_t cavsim_run_check_count(const cavsim_run* run);
CAVSIM_API cavsim_status cavsim_run_check(const cavsim_run* run, size_t index, const char** id,
                                          const char** description, int* passed, int* informational,
                                          const char** detail);
/* 1 when every non-informational check passed. */
CAVSIM_API int cavsim_run_passed(const cavsim_run* run);
CAVSIM_API double cavsim_run_seconds(const cavsim_run* run);
CAVSIM_API const char* cavsim_run_summary_json(const cavsim_run* run);
CAVSIM_API void cavsim_run_free(cavsim_run* run);

/* ---- numerical kernels ------------------------------------------------ */

CAVSIM_API uint64_t cavsim_derive_seed(uint64_t master, const char* label);

CAVSIM_API cavsim_status cavsim_wigner_3j(double j1, double j2, double j3, double m1, double m2, double m3,
                                          double* out);
CAVSIM_API cavsim_status cavsim_wigner_6j(double j1, double j2, double j3, double j4, double j5, double j6,
                                          double* out);

/* |t(nu)|^2 for n_lines emitters (frequencies nu_lines, couplings g) on a
   grid of n_grid points. */
CAVSIM_API cavsim_status cavsim_transmission(double nu_c, double kappa, double gamma, size_t n_lines,
                                             const double* nu_lines, const double* g, size_t n_grid,
                                             const double* grid, double* out);

/* Eigenvalues (ascending) and photonic weights of the arrowhead matrix
   [[apex, g^T], [g, diag(d)]]; outputs hold n + 1 entries. */
CAVSIM_API cavsim_status cavsim_arrowhead_solve(double apex, size_t n, const double* d, const double* g,
                                                double* eigenvalues, double* pw, double* s_pw);

#ifdef __cplusplus
}
#endif

#endif
