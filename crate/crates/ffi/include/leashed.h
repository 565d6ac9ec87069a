#ifndef LEASHED_H
#define LEASHED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum LeashedStatus {
  LEASHED_STATUS_OK = 0,
  LEASHED_STATUS_NULL_POINTER = 1,
  LEASHED_STATUS_INVALID_ARGUMENT = 2,
  LEASHED_STATUS_IO = 3,
  LEASHED_STATUS_DATA = 4,
  // A caller-provided buffer has the wrong length.
  LEASHED_STATUS_BUFFER_SIZE = 5,
  // The run could not be carried out.
  LEASHED_STATUS_RUN_FAILED = 6,
  LEASHED_STATUS_PANIC = 7,
} LeashedStatus;

// Outcome of a finished training run.
typedef enum LeashedRunStatus {
  LEASHED_RUN_STATUS_CONVERGED = 0,
  LEASHED_RUN_STATUS_DIVERGE = 2,
  LEASHED_RUN_STATUS_CRASH = 3,
} LeashedRunStatus;

// Training configuration.
typedef struct LeashedExperiment LeashedExperiment;

// Result of one training run.
typedef struct LeashedReport LeashedReport;

// Shared, lock-free published parameter vector. All functions taking a
// `const LeashedSlot *` may be called concurrently.
typedef struct LeashedSlot LeashedSlot;

// One update as recorded by a run. `seq` is 0 for abandoned gradients.
typedef struct LeashedUpdate {
  uint32_t thread_id;
  uint32_t tries;
  uint64_t seq;
  uint64_t wall_ns;
  uint64_t tau_c;
  uint64_t tau_s;
  bool abandoned;
} LeashedUpdate;

// Payload allocation counters.
typedef struct LeashedCensus {
  uint64_t allocations;
  uint64_t reclamations;
  size_t live_payloads;
  size_t max_live_payloads;
} LeashedCensus;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *leashed_last_error(void);

// Library version as a static NUL-terminated string.
const char *leashed_version(void);

// Creates an experiment. `algo` is one of `seq`, `async`, `hogwild`,
// `leashed`; `arch` is `mlp`, `cnn`, `tiny` or `tiny:HIDDEN`; `dataset` is
// `mnist:DIR` or `blobs[:key=value,...]`. Other settings take their
// defaults and can be changed with the setters.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum LeashedStatus leashed_experiment_new(const char *algo,
                                          size_t threads,
                                          const char *arch,
                                          const char *dataset,
                                          struct LeashedExperiment **out);

// # Safety
// `exp` must come from [`leashed_experiment_new`] or be null.
void leashed_experiment_free(struct LeashedExperiment *exp);

// # Safety
// `exp` must be a live experiment handle.
enum LeashedStatus leashed_experiment_set_step_size(struct LeashedExperiment *exp, float eta);

// # Safety
// `exp` must be a live experiment handle.
enum LeashedStatus leashed_experiment_set_batch_size(struct LeashedExperiment *exp, size_t batch);

// Sets the persistence bound; a negative value means unbounded.
//
// # Safety
// `exp` must be a live experiment handle.
enum LeashedStatus leashed_experiment_set_persistence(struct LeashedExperiment *exp, int64_t tp);

// # Safety
// `exp` must be a live experiment handle.
enum LeashedStatus leashed_experiment_set_seed(struct LeashedExperiment *exp, uint64_t seed);

// # Safety
// `exp` must be a live experiment handle.
enum LeashedStatus leashed_experiment_set_time_budget(struct LeashedExperiment *exp,
                                                      double seconds);

// Stops after `n` published updates; 0 removes the limit.
//
// # Safety
// `exp` must be a live experiment handle.
enum LeashedStatus leashed_experiment_set_max_updates(struct LeashedExperiment *exp, uint64_t n);

// Evaluates every `k`-th published version instead of on a timer; 0
// restores timer-based evaluation.
//
// # Safety
// `exp` must be a live experiment handle.
enum LeashedStatus leashed_experiment_set_eval_every(struct LeashedExperiment *exp, uint64_t k);

// Sets the loss targets, as fractions of the initial loss.
//
// # Safety
// `exp` must be a live experiment handle and `eps` must point to `n`
// readable doubles.
enum LeashedStatus leashed_experiment_set_epsilons(struct LeashedExperiment *exp,
                                                   const double *eps,
                                                   size_t n);

// Number of model parameters for this experiment. Loads the dataset.
//
// # Safety
// `exp` must be a live experiment handle; `out` must be writable.
enum LeashedStatus leashed_experiment_param_count(const struct LeashedExperiment *exp, size_t *out);

// Trains to completion. When `out_dir` is not null the run's CSV tables
// are written there.
//
// # Safety
// `exp` must be a live experiment handle, `out_dir` null or
// NUL-terminated, and `out` writable.
enum LeashedStatus leashed_run(const struct LeashedExperiment *exp,
                               const char *out_dir,
                               struct LeashedReport **out);

// # Safety
// `report` must come from [`leashed_run`] or be null.
void leashed_report_free(struct LeashedReport *report);

// # Safety
// `report` must be a live report handle; `out` must be writable.
enum LeashedStatus leashed_report_status(const struct LeashedReport *report,
                                         enum LeashedRunStatus *out);

// Headline numbers of a run. Any output pointer may be null.
// `mean_iter_ns` is 0 when nothing was published.
//
// # Safety
// `report` must be a live report handle; non-null outputs must be writable.
enum LeashedStatus leashed_report_summary(const struct LeashedReport *report,
                                          double *f0,
                                          double *final_loss,
                                          uint64_t *published,
                                          uint64_t *abandoned,
                                          uint64_t *wall_ns,
                                          uint64_t *mean_iter_ns);

// Time and published-update count at which target `index` was first
// reached. `reached` is false when it never was.
//
// # Safety
// `report` must be a live report handle; outputs must be writable.
enum LeashedStatus leashed_report_epsilon(const struct LeashedReport *report,
                                          size_t index,
                                          bool *reached,
                                          uint64_t *wall_ns,
                                          uint64_t *iters);

// Copies the update log into `buf`. Call with `buf` null to learn the
// length through `len`; otherwise `*len` must equal the log length.
//
// # Safety
// `report` must be a live report handle, `len` writable, and `buf` null or
// valid for `*len` writes.
enum LeashedStatus leashed_report_updates(const struct LeashedReport *report,
                                          struct LeashedUpdate *buf,
                                          size_t *len);

// Copies the final parameters into `buf`, with the same length protocol as
// [`leashed_report_updates`].
//
// # Safety
// As for [`leashed_report_updates`].
enum LeashedStatus leashed_report_final_theta(const struct LeashedReport *report,
                                              float *buf,
                                              size_t *len);

// Peak payload census of the run.
//
// # Safety
// `report` must be a live report handle; `out` must be writable.
enum LeashedStatus leashed_report_census(const struct LeashedReport *report,
                                         struct LeashedCensus *out);

// Creates a published parameter vector of `dim` components, initialised
// with seeded random values, at sequence number 0.
//
// # Safety
// `out` must be writable.
enum LeashedStatus leashed_slot_new(size_t dim, uint64_t seed, struct LeashedSlot **out);

// # Safety
// `slot` must come from [`leashed_slot_new`] or be null, and no other
// thread may be using it.
void leashed_slot_free(struct LeashedSlot *slot);

// Copies the latest version into `buf` and stores its sequence number in
// `seq`. Never blocks.
//
// # Safety
// `slot` must be live, `buf` valid for `len` writes, `seq` writable.
enum LeashedStatus leashed_slot_read(const struct LeashedSlot *slot,
                                     float *buf,
                                     size_t len,
                                     uint64_t *seq);

// Publishes `theta` as the successor of version `expected_seq`, if that is
// still the latest version. `published` reports the outcome; on success
// the new version has sequence number `expected_seq + 1`.
//
// # Safety
// `slot` must be live, `theta` valid for `len` reads, `published` writable.
enum LeashedStatus leashed_slot_try_publish(const struct LeashedSlot *slot,
                                            uint64_t expected_seq,
                                            const float *theta,
                                            size_t len,
                                            bool *published);

// Payload census of the slot.
//
// # Safety
// `slot` must be live; `out` must be writable.
enum LeashedStatus leashed_slot_census(const struct LeashedSlot *slot, struct LeashedCensus *out);

// Writes `n_0 .. n_steps` of the retry-loop occupancy recurrence into
// `out`, which must hold `steps + 1` values.
//
// # Safety
// `out` must be valid for `out_len` writes.
enum LeashedStatus leashed_dynamics_recurrence(double m,
                                               double t_c,
                                               double t_u,
                                               double gamma,
                                               double n0,
                                               size_t steps,
                                               double *out,
                                               size_t out_len);

// Equilibrium occupancy of the recurrence.
//
// # Safety
// `out` must be writable.
enum LeashedStatus leashed_dynamics_fixed_point(double m,
                                                double t_c,
                                                double t_u,
                                                double gamma,
                                                double *out);

// Time-averaged occupancy of the stochastic model over `events` phase
// transitions, with exponential or deterministic phase durations.
//
// # Safety
// `out` must be writable.
enum LeashedStatus leashed_dynamics_simulate(double m,
                                             double t_c,
                                             double t_u,
                                             double gamma,
                                             uint64_t seed,
                                             bool exponential,
                                             size_t events,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEASHED_H */
