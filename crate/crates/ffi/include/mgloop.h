#ifndef MGLOOP_H
#define MGLOOP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MgStatus {
  MG_STATUS_OK = 0,
  MG_STATUS_NULL_POINTER = 1,
  MG_STATUS_INVALID_UTF8 = 2,
  MG_STATUS_CONFIG = 3,
  MG_STATUS_NUMERIC = 4,
  MG_STATUS_OUT_OF_RANGE = 5,
  MG_STATUS_PANIC = 6,
} MgStatus;

typedef enum MgCommand {
  MG_COMMAND_KINEMATICS = 0,
  MG_COMMAND_ACTION = 1,
  MG_COMMAND_EOM = 2,
  MG_COMMAND_JACOBIANS = 3,
  MG_COMMAND_PCM = 4,
  MG_COMMAND_ALL = 5,
} MgCommand;

typedef enum MgCheckStatus {
  MG_CHECK_STATUS_PASS = 0,
  MG_CHECK_STATUS_FAIL = 1,
  MG_CHECK_STATUS_INCONCLUSIVE = 2,
} MgCheckStatus;

// Parsed and validated run configuration.
typedef struct MgConfig MgConfig;

// SU(N) matrix.
typedef struct MgGroup MgGroup;

// Reports of one run.
typedef struct MgReports MgReports;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *mg_last_error(void);

// The committed default configuration.
enum MgStatus mg_config_default(struct MgConfig **out);

// Parses and validates a TOML configuration.
enum MgStatus mg_config_from_toml(const char *toml, struct MgConfig **out);

enum MgStatus mg_config_set_seed(struct MgConfig *cfg, uint64_t seed);

// Applies a `NAME=VALUE` threshold override.
enum MgStatus mg_config_set_tolerance(struct MgConfig *cfg, const char *assignment);

void mg_config_free(struct MgConfig *cfg);

// Runs a subcommand. Check failures are not errors: inspect the reports.
enum MgStatus mg_run(const struct MgConfig *cfg, enum MgCommand command, struct MgReports **out);

// Number of reports, 0 for a null handle.
size_t mg_reports_len(const struct MgReports *set);

enum MgStatus mg_reports_overall(const struct MgReports *set, enum MgCheckStatus *out);

enum MgStatus mg_reports_status(const struct MgReports *set, size_t index, enum MgCheckStatus *out);

// Aggregate JSON document; free with [`mg_string_free`].
enum MgStatus mg_reports_json(const struct MgReports *set, char **out);

void mg_reports_free(struct MgReports *set);

void mg_string_free(char *s);

// `exp(Σ c_a T_a)` in SU(n) for coefficients in the orthonormal basis of
// su(n); `len` must be `n² - 1`.
enum MgStatus mg_group_exp(size_t n, const double *coeffs, size_t len, struct MgGroup **out);

// `a · b` as a new handle.
enum MgStatus mg_group_mul(const struct MgGroup *a, const struct MgGroup *b, struct MgGroup **out);

enum MgStatus mg_group_trace(const struct MgGroup *g, double *re, double *im);

void mg_group_free(struct MgGroup *g);

// Link, constraint and field counts of the open `size × size` lattice.
enum MgStatus mg_pcm_dof(size_t size, size_t n, size_t *links, size_t *constraints, size_t *fields);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGLOOP_H */
