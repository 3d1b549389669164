#ifndef PREFETCH_MCMC_H
#define PREFETCH_MCMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_DIMENSION_MISMATCH = 3,
  PM_STATUS_NON_FINITE_INITIAL = 4,
  PM_STATUS_IO = 5,
  PM_STATUS_HASH_MISMATCH = 6,
  PM_STATUS_FORMAT = 7,
  PM_STATUS_WORKER_FAILED = 8,
  PM_STATUS_BUFFER_TOO_SMALL = 9,
  PM_STATUS_PANIC = 10,
} PmStatus;

// Execution back-end of the prefetching sampler.
typedef enum PmMode {
  // Deterministic discrete-event simulation; times are in batch ticks.
  PM_MODE_VIRTUAL = 0,
  // Real worker threads; times are in seconds.
  PM_MODE_WALLCLOCK = 1,
} PmMode;

// How the scheduler predicts branch probabilities.
typedef enum PmPredictor {
  // Subsample estimates (the default).
  PM_PREDICTOR_ESTIMATED = 0,
  // Exact outcomes from full evaluations (for benchmarking).
  PM_PREDICTOR_ORACLE = 1,
  // A fixed acceptance probability set with `pm_config_set_constant`.
  PM_PREDICTOR_CONSTANT = 2,
} PmPredictor;

// A finished chain.
typedef struct PmChain PmChain;

// Sampler settings.
typedef struct PmConfig PmConfig;

// A posterior with its fixed batch partition.
typedef struct PmModel PmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pm_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// always NUL-terminated when `len > 0`). Returns the full message length in
// bytes, excluding the terminator; 0 means no error.
size_t pm_last_error_message(char *buf, size_t len);

// Gaussian-mean posterior (flat prior, known `sd`) over `n` row-major
// observations of dimension `dim`.
enum PmStatus pm_model_gaussian(const double *data,
                                size_t n,
                                size_t dim,
                                double sd,
                                size_t n_batches,
                                uint64_t permutation_seed,
                                struct PmModel **out);

// Loads a dataset written by the `generate` command (the `.json` metadata
// path), verifying its content hash, and builds its posterior.
enum PmStatus pm_model_load(const char *path,
                            double lambda,
                            size_t n_batches,
                            uint64_t permutation_seed,
                            struct PmModel **out);

// Parameter dimension of the model, or 0 for a null handle.
size_t pm_model_dim(const struct PmModel *model);

// Number of batches the data is split into, or 0 for a null handle.
size_t pm_model_n_batches(const struct PmModel *model);

void pm_model_free(struct PmModel *model);

// Default sampler settings.
struct PmConfig *pm_config_new(void);

// Sampler settings from a TOML experiment file; `workers` and `seed`
// select one cell of its grid.
enum PmStatus pm_config_load(const char *path,
                             size_t workers,
                             uint64_t seed,
                             struct PmConfig **out);

void pm_config_free(struct PmConfig *config);

enum PmStatus pm_config_set_iterations(struct PmConfig *config, uint64_t iterations);

enum PmStatus pm_config_set_workers(struct PmConfig *config, size_t workers);

enum PmStatus pm_config_set_seed(struct PmConfig *config, uint64_t seed);

enum PmStatus pm_config_set_mode(struct PmConfig *config, enum PmMode mode);

// Standard deviation of the random-walk proposal.
enum PmStatus pm_config_set_scale(struct PmConfig *config, double scale);

enum PmStatus pm_config_set_predictor(struct PmConfig *config, enum PmPredictor predictor);

// Probability used by `PM_PREDICTOR_CONSTANT`.
enum PmStatus pm_config_set_constant(struct PmConfig *config, double probability);

// Plain serial Metropolis-Hastings from `theta0` (length `dim`).
enum PmStatus pm_run_serial(const struct PmModel *model,
                            const struct PmConfig *config,
                            const double *theta0,
                            size_t dim,
                            struct PmChain **out);

// Prefetching Metropolis-Hastings; the chain equals `pm_run_serial`'s for
// the same seed.
enum PmStatus pm_run_prefetch(const struct PmModel *model,
                              const struct PmConfig *config,
                              const double *theta0,
                              size_t dim,
                              struct PmChain **out);

void pm_chain_free(struct PmChain *chain);

size_t pm_chain_iterations(const struct PmChain *chain);

size_t pm_chain_dim(const struct PmChain *chain);

// Copies the `iterations * dim` row-major samples into `buf`.
enum PmStatus pm_chain_samples(const struct PmChain *chain, double *buf, size_t len);

// Copies one byte per iteration (1 = accepted) into `buf`.
enum PmStatus pm_chain_accept_flags(const struct PmChain *chain, uint8_t *buf, size_t len);

// Copies the per-iteration decision times into `buf`.
enum PmStatus pm_chain_times(const struct PmChain *chain, double *buf, size_t len);

// Total run time (ticks in virtual mode, seconds otherwise).
double pm_chain_total_time(const struct PmChain *chain);

// Batch evaluation counts; any output pointer may be null.
enum PmStatus pm_chain_batches(const struct PmChain *chain,
                               uint64_t *total,
                               uint64_t *useful,
                               uint64_t *wasted);

// 1 if both chains hold bit-identical samples and accept flags, 0 if not,
// -1 if either handle is null.
int32_t pm_chain_identical(const struct PmChain *a, const struct PmChain *b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREFETCH_MCMC_H */
