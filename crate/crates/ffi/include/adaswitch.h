#ifndef ADASWITCH_H
#define ADASWITCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdaswitchMetric {
  ADASWITCH_METRIC_FORWARD_KL = 0,
  ADASWITCH_METRIC_REVERSE_KL = 1,
  ADASWITCH_METRIC_JSD = 2,
} AdaswitchMetric;

typedef enum AdaswitchRole {
  ADASWITCH_ROLE_TEACHER = 0,
  ADASWITCH_ROLE_STUDENT = 1,
} AdaswitchRole;

typedef enum AdaswitchSource {
  ADASWITCH_SOURCE_STUDENT = 0,
  ADASWITCH_SOURCE_TEACHER = 1,
  ADASWITCH_SOURCE_GROUND_TRUTH = 2,
} AdaswitchSource;

typedef enum AdaswitchStatus {
  ADASWITCH_STATUS_OK = 0,
  ADASWITCH_STATUS_NULL_POINTER = 1,
  ADASWITCH_STATUS_INVALID_ARGUMENT = 2,
  ADASWITCH_STATUS_CONFIG = 3,
  ADASWITCH_STATUS_CONTRACT = 4,
  ADASWITCH_STATUS_IO = 5,
  ADASWITCH_STATUS_SERIALIZATION = 6,
  ADASWITCH_STATUS_BUDGET = 7,
  ADASWITCH_STATUS_BUFFER_TOO_SMALL = 8,
  ADASWITCH_STATUS_PANIC = 9,
} AdaswitchStatus;

/**
 * Opaque tabular language model.
 */
typedef struct AdaswitchModel AdaswitchModel;

/**
 * Opaque generation trace.
 */
typedef struct AdaswitchTrace AdaswitchTrace;

typedef struct AdaswitchSampling {
  double temperature;
  double top_p;
  bool greedy;
} AdaswitchSampling;

/**
 * Switching parameters for [`adaswitch_generate`].
 */
typedef struct AdaswitchSwitchParams {
  size_t window;
  double multiplier;
  enum AdaswitchMetric metric;
  size_t max_len;
  struct AdaswitchSampling student_sampling;
  struct AdaswitchSampling teacher_sampling;
} AdaswitchSwitchParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *adaswitch_version(void);

/**
 * Message of the last failed call on this thread, or NULL if none.
 * Free with [`adaswitch_string_free`].
 */
char *adaswitch_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void adaswitch_string_free(char *s);

/**
 * Creates a model with small random logits drawn from `seed`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum AdaswitchStatus adaswitch_model_new_random(uint32_t vocab_size,
                                                size_t order,
                                                enum AdaswitchRole role,
                                                uint64_t seed,
                                                struct AdaswitchModel **out);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum AdaswitchStatus adaswitch_model_load(const char *path, struct AdaswitchModel **out);

/**
 * Writes a JSON checkpoint.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum AdaswitchStatus adaswitch_model_save(const struct AdaswitchModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not have been freed.
 */
void adaswitch_model_free(struct AdaswitchModel *model);

/**
 * Vocabulary size and the reserved BOS/EOS/PAD ids.
 *
 * # Safety
 * `model` must be a live handle; outputs must be valid for writes.
 */
enum AdaswitchStatus adaswitch_model_vocab(const struct AdaswitchModel *model,
                                           uint32_t *size,
                                           uint32_t *bos,
                                           uint32_t *eos,
                                           uint32_t *pad);

/**
 * Next-token distribution after `context` under `sampling`, written to
 * `probs[0..vocab_size]`.
 *
 * # Safety
 * `context` must hold `context_len` ids; `probs` must hold `probs_len`
 * doubles.
 */
enum AdaswitchStatus adaswitch_model_next_dist(const struct AdaswitchModel *model,
                                               const uint32_t *context,
                                               size_t context_len,
                                               struct AdaswitchSampling sampling_params,
                                               double *probs,
                                               size_t probs_len);

/**
 * Divergence between two next-token distributions of length `len`.
 *
 * # Safety
 * `teacher` and `student` must each hold `len` doubles.
 */
enum AdaswitchStatus adaswitch_token_divergence(enum AdaswitchMetric kind,
                                                const double *teacher,
                                                const double *student,
                                                size_t len,
                                                double *out);

/**
 * Mean token divergence along `y` after `prompt`.
 *
 * # Safety
 * Handles must be live; arrays must hold the stated number of ids.
 */
enum AdaswitchStatus adaswitch_sequence_divergence(enum AdaswitchMetric kind,
                                                   const struct AdaswitchModel *teacher,
                                                   const struct AdaswitchModel *student,
                                                   const uint32_t *prompt,
                                                   size_t prompt_len,
                                                   const uint32_t *y,
                                                   size_t y_len,
                                                   double *out);

/**
 * Generates one trace with adaptive switching. Randomness comes from a
 * substream of `seed`, so equal inputs give equal traces.
 *
 * # Safety
 * Handles must be live; `prompt` must hold `prompt_len` ids; `out` must be
 * valid for writes.
 */
enum AdaswitchStatus adaswitch_generate(const struct AdaswitchModel *student,
                                        const struct AdaswitchModel *teacher,
                                        const uint32_t *prompt,
                                        size_t prompt_len,
                                        struct AdaswitchSwitchParams params,
                                        uint64_t seed,
                                        struct AdaswitchTrace **out);

/**
 * # Safety
 * `trace` must come from this library and not have been freed.
 */
void adaswitch_trace_free(struct AdaswitchTrace *trace);

/**
 * Number of generated tokens.
 *
 * # Safety
 * `trace` must be a live handle; `out` valid for writes.
 */
enum AdaswitchStatus adaswitch_trace_len(const struct AdaswitchTrace *trace, size_t *out);

/**
 * Copies tokens and their sources into caller buffers of `cap` entries.
 * Either buffer may be NULL to skip it.
 *
 * # Safety
 * Non-null buffers must hold `cap` entries.
 */
enum AdaswitchStatus adaswitch_trace_tokens(const struct AdaswitchTrace *trace,
                                            uint32_t *tokens,
                                            enum AdaswitchSource *sources,
                                            size_t cap);

/**
 * 1-based switch position, or 0 when the trace never switched.
 *
 * # Safety
 * `trace` must be a live handle; `out` valid for writes.
 */
enum AdaswitchStatus adaswitch_trace_switch_index(const struct AdaswitchTrace *trace, size_t *out);

/**
 * Forward passes spent by each model while generating.
 *
 * # Safety
 * `trace` must be a live handle; outputs valid for writes.
 */
enum AdaswitchStatus adaswitch_trace_calls(const struct AdaswitchTrace *trace,
                                           uint64_t *student_calls,
                                           uint64_t *teacher_calls);

/**
 * Trace as a JSON object. Free with [`adaswitch_string_free`].
 *
 * # Safety
 * `trace` must be a live handle; `out` valid for writes.
 */
enum AdaswitchStatus adaswitch_trace_to_json(const struct AdaswitchTrace *trace, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADASWITCH_H */
