#ifndef TEMPLAR_H
#define TEMPLAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TEMPLAR_MODE_DIRECT 0

#define TEMPLAR_MODE_CHANNEL 1

#define TEMPLAR_MODE_CONTENT_FREE 2

#define TEMPLAR_METHOD_DIRECT 0

#define TEMPLAR_METHOD_CHANNEL 1

#define TEMPLAR_METHOD_CALIBRATION 2

typedef enum TemplarStatus {
  TEMPLAR_STATUS_OK = 0,
  TEMPLAR_STATUS_NULL_POINTER = 1,
  TEMPLAR_STATUS_INVALID_UTF8 = 2,
  TEMPLAR_STATUS_INVALID_ARGUMENT = 3,
  TEMPLAR_STATUS_PARSE = 4,
  TEMPLAR_STATUS_BACKEND = 5,
  TEMPLAR_STATUS_IO = 6,
  TEMPLAR_STATUS_BUFFER_TOO_SMALL = 7,
  TEMPLAR_STATUS_PANIC = 8,
} TemplarStatus;

/**
 * Opaque template grammar.
 */
typedef struct TemplarGrammar TemplarGrammar;

/**
 * Opaque scoring backend.
 */
typedef struct TemplarScorer TemplarScorer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Owned by the library;
 * valid until the next call into it from the same thread.
 */
const char *templar_last_error(void);

/**
 * Library version as a static string.
 */
const char *templar_version(void);

/**
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void templar_string_free(char *s);

/**
 * Loads a grammar from `preset:<name>` or a JSON file path.
 *
 * # Safety
 * `source` is a NUL-terminated string; `out` is valid for a write.
 */
enum TemplarStatus templar_grammar_load(const char *source, struct TemplarGrammar **out);

/**
 * Parses a grammar JSON document.
 *
 * # Safety
 * `json` is a NUL-terminated string; `out` is valid for a write.
 */
enum TemplarStatus templar_grammar_from_json(const char *json, struct TemplarGrammar **out);

/**
 * # Safety
 * `g` is null or a handle from this library that has not been freed.
 */
void templar_grammar_free(struct TemplarGrammar *g);

/**
 * Number of templates, or 0 for a null handle.
 *
 * # Safety
 * `g` is null or a live grammar handle.
 */
uint64_t templar_grammar_template_count(const struct TemplarGrammar *g);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `g` is null or a live grammar handle.
 */
size_t templar_grammar_num_classes(const struct TemplarGrammar *g);

/**
 * The template with id `id` as a JSON object.
 *
 * # Safety
 * `g` is a live grammar handle; `out` is valid for a write.
 */
enum TemplarStatus templar_grammar_template_json(const struct TemplarGrammar *g,
                                                 uint64_t id,
                                                 char **out);

/**
 * Writes `k` distinct template ids drawn with `seed` into `out_ids`.
 *
 * # Safety
 * `g` is a live grammar handle; `out_ids` is valid for `k` writes.
 */
enum TemplarStatus templar_grammar_sample(const struct TemplarGrammar *g,
                                          size_t k,
                                          uint64_t seed,
                                          uint64_t *out_ids);

/**
 * Renders the prompt for class `class_index`. `demos_json` is null or a JSON
 * array of `{"text", "label"}` objects. Both outputs are freed with
 * [`templar_string_free`].
 *
 * # Safety
 * Pointers are live handles / NUL-terminated strings / valid for a write.
 */
enum TemplarStatus templar_render(const struct TemplarGrammar *g,
                                  uint64_t template_id,
                                  uint32_t mode,
                                  const char *demos_json,
                                  const char *text,
                                  size_t class_index,
                                  char **out_prefix,
                                  char **out_continuation);

/**
 * Deterministic hash-based scorer for tests.
 *
 * # Safety
 * `out` is valid for a write.
 */
enum TemplarStatus templar_scorer_hash_mock(struct TemplarScorer **out);

/**
 * Synthetic scorer with planted template bias; `golds[i]` is the gold class
 * of example `i`.
 *
 * # Safety
 * `golds` is valid for `n_golds` reads; `out` is valid for a write.
 */
enum TemplarStatus templar_scorer_planted(double signal,
                                          double bias,
                                          double noise,
                                          uint64_t bias_seed,
                                          const size_t *golds,
                                          size_t n_golds,
                                          struct TemplarScorer **out);

/**
 * Remote completions scorer. `config_json` holds the fields of the remote
 * backend config (`endpoint`, `model`, ...); omitted fields take defaults.
 *
 * # Safety
 * `config_json` is a NUL-terminated string; `out` is valid for a write.
 */
enum TemplarStatus templar_scorer_remote(const char *config_json, struct TemplarScorer **out);

/**
 * # Safety
 * `s` is null or a handle from this library that has not been freed.
 */
void templar_scorer_free(struct TemplarScorer *s);

/**
 * Log-probability of `continuation` given `prefix`.
 *
 * # Safety
 * Pointers are a live handle / NUL-terminated strings / valid for a write.
 */
enum TemplarStatus templar_score(const struct TemplarScorer *s,
                                 const char *prefix,
                                 const char *continuation,
                                 double *out);

/**
 * Predicts a label distribution for `text` under one template. `cf_token`
 * is null for the default content-free input; `example_id` is forwarded to
 * backends that model per-example behavior. Writes one probability per
 * class into `out_probs` and, when non-null, the argmax into `out_predicted`.
 *
 * # Safety
 * Handles are live; strings are NUL-terminated or null where allowed;
 * `out_probs` is valid for `probs_capacity` writes.
 */
enum TemplarStatus templar_predict(const struct TemplarScorer *s,
                                   const struct TemplarGrammar *g,
                                   uint64_t template_id,
                                   uint32_t method,
                                   const char *demos_json,
                                   const char *text,
                                   const char *cf_token,
                                   uint64_t example_id,
                                   double *out_probs,
                                   size_t probs_capacity,
                                   size_t *out_predicted);

/**
 * Averages the distributions of `method` over the templates in `template_ids`.
 *
 * # Safety
 * As for [`templar_predict`]; `template_ids` is valid for `n_templates` reads.
 */
enum TemplarStatus templar_ensemble_predict(const struct TemplarScorer *s,
                                            const struct TemplarGrammar *g,
                                            const uint64_t *template_ids,
                                            size_t n_templates,
                                            uint32_t method,
                                            const char *demos_json,
                                            const char *text,
                                            const char *cf_token,
                                            uint64_t example_id,
                                            double *out_probs,
                                            size_t probs_capacity,
                                            size_t *out_predicted);

/**
 * Mean and sample standard deviation (0 for a single value).
 *
 * # Safety
 * `xs` is valid for `n` reads; outputs are valid for writes.
 */
enum TemplarStatus templar_aggregate(const double *xs, size_t n, double *out_mean, double *out_std);

/**
 * Jaccard overlap of two id sets (duplicates ignored).
 *
 * # Safety
 * `a`, `b` are valid for `n_a`, `n_b` reads; `out` is valid for a write.
 */
enum TemplarStatus templar_iou(const uint64_t *a,
                               size_t n_a,
                               const uint64_t *b,
                               size_t n_b,
                               double *out);

/**
 * Spearman rank correlation with average ranks for ties.
 *
 * # Safety
 * `a`, `b` are valid for `n` reads; `out` is valid for a write.
 */
enum TemplarStatus templar_spearman(const double *a, const double *b, size_t n, double *out);

/**
 * Ids of the `k` best templates in ascending id order; ties at the cut go
 * to the smaller id.
 *
 * # Safety
 * `ids`, `scores` are valid for `n` reads; `out_ids` for `k` writes.
 */
enum TemplarStatus templar_top_k(const uint64_t *ids,
                                 const double *scores,
                                 size_t n,
                                 size_t k,
                                 uint64_t *out_ids);

/**
 * Scores sorted descending and divided by the maximum; writes `n` values.
 *
 * # Safety
 * `xs` is valid for `n` reads; `out` for `n` writes.
 */
enum TemplarStatus templar_rank_curve(const double *xs, size_t n, double *out);

/**
 * Number of positions where `few_shot` strictly exceeds `zero_shot`.
 *
 * # Safety
 * Inputs are valid for `n` reads; `out_wins` is valid for a write.
 */
enum TemplarStatus templar_count_wins(const double *zero_shot,
                                      const double *few_shot,
                                      size_t n,
                                      size_t *out_wins);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEMPLAR_H */
