#ifndef EFLLM_H
#define EFLLM_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Zero is success.
 */
typedef enum EfllmStatus {
  EFLLM_STATUS_OK = 0,
  EFLLM_STATUS_NULL_POINTER = 1,
  EFLLM_STATUS_INVALID_UTF8 = 2,
  EFLLM_STATUS_INVALID_ARGUMENT = 3,
  EFLLM_STATUS_OUT_OF_RANGE = 4,
  EFLLM_STATUS_IO = 5,
  EFLLM_STATUS_CHECKPOINT = 6,
  EFLLM_STATUS_NUMERIC = 7,
  EFLLM_STATUS_STATISTICS = 8,
  EFLLM_STATUS_INTERNAL = 9,
} EfllmStatus;

/**
 * Loaded checkpoint. Opaque to C.
 */
typedef struct EfllmModel EfllmModel;

/**
 * One-way ANOVA summary.
 */
typedef struct EfllmAnova {
  double sst;
  double ssb;
  double ssw;
  double f;
  double p;
  size_t groups;
  size_t observations;
} EfllmAnova;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static storage.
 */
const char *efllm_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on this thread.
 */
const char *efllm_last_error(void);

/**
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void efllm_string_free(char *s);

/**
 * Loads the checkpoint directory at `path` into `*out`.
 *
 * # Safety
 * `path` is a nul-terminated string; `out` is writable.
 */
enum EfllmStatus efllm_model_load(const char *path, struct EfllmModel **out);

/**
 * # Safety
 * `model` is null or came from [`efllm_model_load`] and was not yet freed.
 */
void efllm_model_free(struct EfllmModel *model);

/**
 * Text-only generation. `temperature <= 0` decodes greedily; otherwise
 * sampling is seeded by `seed`. Free `*out` with [`efllm_string_free`].
 *
 * # Safety
 * `model` is a live handle, `prompt` a nul-terminated string, `out` writable.
 */
enum EfllmStatus efllm_model_generate(const struct EfllmModel *model,
                                      const char *prompt,
                                      size_t max_new,
                                      float temperature,
                                      uint64_t seed,
                                      char **out);

/**
 * Cosine similarity of mean token embeddings under the model's table.
 * `*hallucination` is set when the score falls below `threshold`.
 *
 * # Safety
 * `model` is a live handle, both texts nul-terminated, outputs writable.
 */
enum EfllmStatus efllm_model_similarity(const struct EfllmModel *model,
                                        const char *expected,
                                        const char *output,
                                        double threshold,
                                        double *score,
                                        bool *hallucination);

/**
 * Class of power `p` under `intervals` equal bins of `[0, e_r]`.
 *
 * # Safety
 * `class_out` is writable.
 */
enum EfllmStatus efllm_bin_power(double e_r, size_t intervals, double p, size_t *class_out);

/**
 * Representative power of `class`: 0 for class 0, else the bin midpoint.
 *
 * # Safety
 * `value_out` is writable.
 */
enum EfllmStatus efllm_decode_class(double e_r, size_t intervals, size_t class_, double *value_out);

/**
 * One-way ANOVA over `n_groups` groups stored back to back in `values`;
 * group `i` holds `group_sizes[i]` observations.
 *
 * # Safety
 * `values` holds `sum(group_sizes)` doubles, `group_sizes` holds `n_groups`
 * entries, `out` is writable.
 */
enum EfllmStatus efllm_anova(const double *values,
                             const size_t *group_sizes,
                             size_t n_groups,
                             struct EfllmAnova *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFLLM_H */
