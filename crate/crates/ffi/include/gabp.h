#ifndef GABP_H
#define GABP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GabpInit {
  GABP_INIT_ZERO = 0,
  GABP_INIT_SCALED_IDENTITY = 1,
} GabpInit;

typedef enum GabpStatus {
  GABP_STATUS_OK = 0,
  GABP_STATUS_NULL_POINTER = 1,
  GABP_STATUS_INVALID_ARGUMENT = 2,
  GABP_STATUS_PARSE = 3,
  GABP_STATUS_INVALID_NETWORK = 4,
  GABP_STATUS_NUMERICAL = 5,
  GABP_STATUS_IO = 6,
  GABP_STATUS_OUT_OF_RANGE = 7,
  GABP_STATUS_BUFFER_TOO_SMALL = 8,
  GABP_STATUS_PANIC = 9,
  GABP_STATUS_INTERNAL = 10,
} GabpStatus;

// Opaque validated network.
typedef struct GabpNetwork GabpNetwork;

// Opaque result of a belief propagation run.
typedef struct GabpRun GabpRun;

typedef struct GabpScheduleOptions {
  size_t max_iterations;
  double tol_frobenius;
  enum GabpInit init;
  // Scale of the identity initialization; ignored for `Zero`.
  double init_scale;
  // Values `<= 0` disable the mean stopping condition.
  double mean_tol;
  size_t workers;
} GabpScheduleOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or null. Valid
// until the next `gabp_*` call on the same thread.
const char *gabp_last_error(void);

// Library version as a static nul-terminated string.
const char *gabp_version(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed.
void gabp_string_free(char *s);

// Parses and validates an instance from JSON text.
//
// # Safety
// `json` must be a nul-terminated string; `out` a valid pointer.
enum GabpStatus gabp_network_from_json(const char *json, struct GabpNetwork **out);

// Loads and validates an instance file.
//
// # Safety
// `path` must be a nul-terminated string; `out` a valid pointer.
enum GabpStatus gabp_network_load(const char *path, struct GabpNetwork **out);

// Generates a random instance. `topology` uses the CLI syntax (`ring`,
// `star`, `complete`, `tree`, `er:<p>`, `grid:<r>x<c>`); `oriented`
// selects one-sided coupling.
//
// # Safety
// `topology` must be a nul-terminated string; `out` a valid pointer.
enum GabpStatus gabp_network_generate(uint64_t seed,
                                      size_t nodes,
                                      const char *topology,
                                      size_t dim_min,
                                      size_t dim_max,
                                      bool oriented,
                                      struct GabpNetwork **out);

// Canonical JSON of the instance; release with [`gabp_string_free`].
//
// # Safety
// `net` must be a live handle; `out` a valid pointer.
enum GabpStatus gabp_network_to_json(const struct GabpNetwork *net, char **out);

// # Safety
// `net` must come from this library and not have been freed.
void gabp_network_free(struct GabpNetwork *net);

// Number of nodes; 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
size_t gabp_network_node_count(const struct GabpNetwork *net);

// Number of directed factor-to-variable edges; 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
size_t gabp_network_edge_count(const struct GabpNetwork *net);

// Dimension of variable `id` (1-based).
//
// # Safety
// `net` must be a live handle; `out` a valid pointer.
enum GabpStatus gabp_network_dim(const struct GabpNetwork *net, size_t id, size_t *out);

// Directed edge `k` (0-based, ascending by factor then variable).
//
// # Safety
// `net` must be a live handle; `factor` and `variable` valid pointers.
enum GabpStatus gabp_network_edge(const struct GabpNetwork *net,
                                  size_t k,
                                  size_t *factor,
                                  size_t *variable);

// Library defaults: 500 iterations, tolerance 1e-10, zero init, one worker.
struct GabpScheduleOptions gabp_schedule_default(void);

// Runs belief propagation. `opts` may be null for defaults.
//
// # Safety
// `net` must be a live handle, `opts` null or valid, `out` a valid pointer.
enum GabpStatus gabp_run(const struct GabpNetwork *net,
                         const struct GabpScheduleOptions *opts,
                         struct GabpRun **out);

// # Safety
// `run` must come from this library and not have been freed.
void gabp_run_free(struct GabpRun *run);

// False for a null handle.
//
// # Safety
// `run` must be null or a live handle.
bool gabp_run_converged(const struct GabpRun *run);

// # Safety
// `run` must be null or a live handle.
size_t gabp_run_iterations(const struct GabpRun *run);

// Information matrix of directed edge `k`, column-major, `len >= dim²`.
//
// # Safety
// `run` must be a live handle; `out` must hold `len` doubles.
enum GabpStatus gabp_run_message_info(const struct GabpRun *run, size_t k, double *out, size_t len);

// Belief mean of variable `id` (1-based), `len >= dim`.
//
// # Safety
// `run` must be a live handle; `out` must hold `len` doubles.
enum GabpStatus gabp_run_belief_mean(const struct GabpRun *run, size_t id, double *out, size_t len);

// Belief covariance of variable `id` (1-based), column-major, `len >= dim²`.
//
// # Safety
// `run` must be a live handle; `out` must hold `len` doubles.
enum GabpStatus gabp_run_belief_cov(const struct GabpRun *run, size_t id, double *out, size_t len);

// Part distance between two positive definite `n × n` matrices given
// column-major. Non-symmetric input is symmetrized.
//
// # Safety
// `x` and `y` must each hold `n * n` doubles; `out` a valid pointer.
enum GabpStatus gabp_part_metric(const double *x, const double *y, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GABP_H */
