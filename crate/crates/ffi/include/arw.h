#ifndef ARW_H
#define ARW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ArwSiteKind {
  ARW_SITE_KIND_EMPTY = 0,
  ARW_SITE_KIND_SLEEPING = 1,
  ARW_SITE_KIND_ACTIVE = 2,
} ArwSiteKind;

typedef enum ArwStatus {
  ARW_STATUS_OK = 0,
  ARW_STATUS_NULL_POINTER = 1,
  ARW_STATUS_INVALID_ARGUMENT = 2,
  ARW_STATUS_BUDGET_EXCEEDED = 3,
  ARW_STATUS_GEOMETRY = 4,
  ARW_STATUS_FAILED = 5,
  ARW_STATUS_PANIC = 6,
} ArwStatus;

/**
 * Stabilizer of `V_r = {-r..r}` with its own instruction stacks.
 */
typedef struct ArwStabilizer ArwStabilizer;

typedef struct ArwSiteState {
  enum ArwSiteKind kind;
  /**
   * Walks at the site: 0, 1 for a sleeper, n for n active walks.
   */
  uint32_t walks;
} ArwSiteState;

typedef struct ArwCounts {
  uint64_t sleeping;
  uint64_t left_exits;
  uint64_t right_exits;
  uint64_t topplings;
} ArwCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *arw_last_error_message(void);

/**
 * Empty stabilizer on `V_r` at sleep rate `lambda`. `budget` caps the
 * topplings of each `arw_stabilizer_stabilize` call.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum ArwStatus arw_stabilizer_new(double lambda,
                                  uint64_t r,
                                  uint64_t seed,
                                  uint64_t budget,
                                  struct ArwStabilizer **out);

/**
 * # Safety
 * `h` must be NULL or a handle from `arw_stabilizer_new` not yet freed.
 */
void arw_stabilizer_free(struct ArwStabilizer *h);

/**
 * Add one active walk at `site`. Sites outside the volume are rejected.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum ArwStatus arw_stabilizer_add_walk(struct ArwStabilizer *h, int64_t site);

/**
 * Topple until stable.
 *
 * # Safety
 * `h` must be a live handle.
 */
enum ArwStatus arw_stabilizer_stabilize(struct ArwStabilizer *h);

/**
 * # Safety
 * `h` must be a live handle and `out` valid for writes.
 */
enum ArwStatus arw_stabilizer_site_state(const struct ArwStabilizer *h,
                                         int64_t site,
                                         struct ArwSiteState *out);

/**
 * # Safety
 * `h` must be a live handle and `out` valid for writes.
 */
enum ArwStatus arw_stabilizer_counts(const struct ArwStabilizer *h, struct ArwCounts *out);

/**
 * Monte Carlo `E[M_r]/r` from Bernoulli(`zeta`) starts on `V_r`.
 *
 * # Safety
 * `mean` and `stderr` must be valid for writes.
 */
enum ArwStatus arw_exit_density(double lambda,
                                double zeta,
                                uint64_t r,
                                uint64_t samples,
                                uint64_t seed,
                                double *mean,
                                double *stderr);

/**
 * Monte Carlo lower bound `1/E Z_N` on the critical density.
 *
 * # Safety
 * `bound` and `stderr` must be valid for writes.
 */
enum ArwStatus arw_zeta_lower_bound(double lambda,
                                    uint64_t samples,
                                    uint64_t seed,
                                    double *bound,
                                    double *stderr);

/**
 * Exact `E Z_n` for the walk conditioned to stay positive, `1 <= n <= 64`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum ArwStatus arw_hwalk_expected_max(uint32_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARW_H */
