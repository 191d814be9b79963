#ifndef RAG_IMPORTANCE_H
#define RAG_IMPORTANCE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RiStatus {
  RI_STATUS_OK = 0,
  RI_STATUS_NULL_ARGUMENT = 1,
  RI_STATUS_INVALID_UTF8 = 2,
  RI_STATUS_IO = 3,
  RI_STATUS_INVALID = 4,
  RI_STATUS_OUT_OF_RANGE = 5,
  RI_STATUS_PANIC = 6,
} RiStatus;

/**
 * A loaded evaluation set.
 */
typedef struct RiEvalSet RiEvalSet;

/**
 * A gradient vector keyed by point id.
 */
typedef struct RiGradient RiGradient;

/**
 * Per-source weights.
 */
typedef struct RiWeights RiWeights;

/**
 * Training parameters; obtain defaults from [`ri_fit_config_default`].
 */
typedef struct RiFitConfig {
  size_t k;
  size_t iterations;
  double learning_rate;
  double init_weight;
  double eps;
  uint64_t seed;
} RiFitConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *ri_last_error_message(void);

/**
 * Loads an evaluation set from a line-delimited JSON file.
 *
 * # Safety
 * `path` must be a valid C string and `out` a writable pointer.
 */
enum RiStatus ri_eval_set_load(const char *path, struct RiEvalSet **out);

/**
 * Parses an evaluation set from line-delimited JSON text.
 *
 * # Safety
 * `text` must be a valid C string and `out` a writable pointer.
 */
enum RiStatus ri_eval_set_parse(const char *text, struct RiEvalSet **out);

/**
 * Writes an evaluation set as line-delimited JSON.
 *
 * # Safety
 * `set` must come from this library; `path` must be a valid C string.
 */
enum RiStatus ri_eval_set_save(const struct RiEvalSet *set, const char *path);

/**
 * Number of instances, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or come from this library.
 */
size_t ri_eval_set_len(const struct RiEvalSet *set);

/**
 * Number of distinct sources, or 0 for a null handle.
 *
 * # Safety
 * `set` must be null or come from this library.
 */
size_t ri_eval_set_num_sources(const struct RiEvalSet *set);

/**
 * # Safety
 * `set` must be null or come from this library, and is invalid afterwards.
 */
void ri_eval_set_free(struct RiEvalSet *set);

/**
 * The default training configuration.
 */
struct RiFitConfig ri_fit_config_default(void);

/**
 * Learns source weights. A null `config` means the defaults.
 *
 * # Safety
 * Pointers must be null (config only) or valid; `out` must be writable.
 */
enum RiStatus ri_fit(const struct RiEvalSet *set,
                     const struct RiFitConfig *config,
                     struct RiWeights **out);

/**
 * Every source of `set` at weight `w`.
 *
 * # Safety
 * `set` must come from this library; `out` must be writable.
 */
enum RiStatus ri_weights_uniform(const struct RiEvalSet *set, double w, struct RiWeights **out);

/**
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum RiStatus ri_weights_load(const char *path, struct RiWeights **out);

/**
 * # Safety
 * `weights` must come from this library; `path` must be a valid C string.
 */
enum RiStatus ri_weights_save(const struct RiWeights *weights, const char *path);

/**
 * Number of sources, or 0 for a null handle.
 *
 * # Safety
 * `weights` must be null or come from this library.
 */
size_t ri_weights_len(const struct RiWeights *weights);

/**
 * Source key and weight at `index`. The key stays valid while `weights` lives.
 *
 * # Safety
 * `weights` must come from this library; outputs must be writable.
 */
enum RiStatus ri_weights_entry(const struct RiWeights *weights,
                               size_t index,
                               const char **key,
                               double *value);

/**
 * Weight of the named source.
 *
 * # Safety
 * `weights` must come from this library, `source` must be a valid C string.
 */
enum RiStatus ri_weights_get(const struct RiWeights *weights, const char *source, double *value);

/**
 * # Safety
 * `weights` must be null or come from this library, and is invalid afterwards.
 */
void ri_weights_free(struct RiWeights *weights);

/**
 * Per-point gradient of the expected utility. `eps <= 0` computes it
 * exactly; otherwise the ranking is truncated for that ε.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum RiStatus ri_gradient(const struct RiEvalSet *set,
                          const struct RiWeights *weights,
                          size_t k,
                          double eps,
                          struct RiGradient **out);

/**
 * # Safety
 * `g` must be null or come from this library.
 */
size_t ri_gradient_len(const struct RiGradient *g);

/**
 * Contiguous gradient values, valid while `g` lives; null for a null handle.
 *
 * # Safety
 * `g` must be null or come from this library.
 */
const double *ri_gradient_values(const struct RiGradient *g);

/**
 * Point id at `index`, valid while `g` lives; null when out of range.
 *
 * # Safety
 * `g` must be null or come from this library.
 */
const char *ri_gradient_key(const struct RiGradient *g, size_t index);

/**
 * # Safety
 * `g` must be null or come from this library, and is invalid afterwards.
 */
void ri_gradient_free(struct RiGradient *g);

/**
 * Copy of `set` without candidates whose source weight is below `threshold`.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum RiStatus ri_prune(const struct RiEvalSet *set,
                       const struct RiWeights *weights,
                       double threshold,
                       struct RiEvalSet **out);

/**
 * Pruning threshold that maximizes accuracy on `set`.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum RiStatus ri_tune_threshold(const struct RiEvalSet *set,
                                const struct RiWeights *weights,
                                size_t k,
                                double *out);

/**
 * Expected majority-vote accuracy when candidates are kept with their
 * source's weight, over `samples` seeded draws.
 *
 * # Safety
 * Handles must come from this library; `accuracy` must be writable.
 */
enum RiStatus ri_reweight(const struct RiEvalSet *set,
                          const struct RiWeights *weights,
                          size_t k,
                          size_t samples,
                          uint64_t seed,
                          double *accuracy);

/**
 * Majority-vote accuracy over the top-`k` candidates.
 *
 * # Safety
 * `set` must come from this library; `accuracy` must be writable.
 */
enum RiStatus ri_evaluate(const struct RiEvalSet *set, size_t k, double *accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAG_IMPORTANCE_H */
