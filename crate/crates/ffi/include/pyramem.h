/* C interface to the pyramem memory bank, keyword pyramid, and metrics. */

#ifndef PYRAMEM_H
#define PYRAMEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible entry point.
 */
typedef enum PyramemStatus {
  PYRAMEM_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  PYRAMEM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PYRAMEM_STATUS_INVALID_UTF8 = 2,
  /**
   * Input rejected by a validation rule (empty text, empty list, ...).
   */
  PYRAMEM_STATUS_VALIDATION = 3,
  /**
   * A referenced memory id does not exist.
   */
  PYRAMEM_STATUS_NOT_FOUND = 4,
  /**
   * Filesystem failure while loading or saving.
   */
  PYRAMEM_STATUS_IO = 5,
  /**
   * Malformed or version-incompatible snapshot file.
   */
  PYRAMEM_STATUS_PARSE = 6,
  /**
   * The metric is undefined for this input (e.g. empty references).
   */
  PYRAMEM_STATUS_UNDEFINED = 7,
  /**
   * Any other internal failure.
   */
  PYRAMEM_STATUS_INTERNAL = 8,
} PyramemStatus;

/**
 * Opaque memory-bank handle.
 */
typedef struct PyramemBank PyramemBank;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *pyramem_last_error_message(void);

/**
 * Create an empty bank. Release with [`pyramem_bank_free`].
 */
struct PyramemBank *pyramem_bank_new(void);

/**
 * Free a bank handle. NULL is a no-op.
 *
 * # Safety
 * `bank` must have been returned by this library and not freed before.
 */
void pyramem_bank_free(struct PyramemBank *bank);

/**
 * Load a bank from a snapshot file.
 *
 * # Safety
 * `path` must be a valid C string; `out_bank` must be a valid pointer.
 */
enum PyramemStatus pyramem_bank_load(const char *path, struct PyramemBank **out_bank);

/**
 * Write the bank to a snapshot file.
 *
 * # Safety
 * `bank` must be a live handle; `path` a valid C string.
 */
enum PyramemStatus pyramem_bank_save(const struct PyramemBank *bank, const char *path);

/**
 * Append a record; writes the fresh id to `out_id`. `session` may be NULL.
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_bank_add_record(struct PyramemBank *bank,
                                           const char *question,
                                           const char *answer,
                                           const char *session,
                                           uint64_t *out_id);

/**
 * Register keywords for a memory; writes the count of newly created
 * vocabulary entries to `out_new_entries` (may be NULL).
 *
 * # Safety
 * `keywords` must point to `len` valid C strings.
 */
enum PyramemStatus pyramem_bank_register_keywords(struct PyramemBank *bank,
                                                  uint64_t memory_id,
                                                  const char *const *keywords,
                                                  uintptr_t len,
                                                  uintptr_t *out_new_entries);

/**
 * Number of stored records.
 *
 * # Safety
 * `bank` must be a live handle or NULL (NULL yields 0).
 */
uint64_t pyramem_bank_record_count(const struct PyramemBank *bank);

/**
 * Number of vocabulary entries.
 *
 * # Safety
 * `bank` must be a live handle or NULL (NULL yields 0).
 */
uint64_t pyramem_bank_vocabulary_len(const struct PyramemBank *bank);

/**
 * Posting list for a keyword. Writes a malloc'd id array (release with
 * [`pyramem_ids_free`]); unknown keywords yield an empty list.
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_bank_associated_memories(const struct PyramemBank *bank,
                                                    const char *keyword,
                                                    uint64_t **out_ids,
                                                    uintptr_t *out_len);

/**
 * Release an id array returned by [`pyramem_bank_associated_memories`].
 *
 * # Safety
 * `ids`/`len` must come from that call, unmodified.
 */
void pyramem_ids_free(uint64_t *ids, uintptr_t len);

/**
 * Build the keyword pyramid for the given keywords and return it as a
 * JSON document (levels, groups, and traversal order). Release the
 * string with [`pyramem_string_free`].
 *
 * # Safety
 * `keywords` must point to `len` valid C strings.
 */
enum PyramemStatus pyramem_pyramid_json(const struct PyramemBank *bank,
                                        const char *const *keywords,
                                        uintptr_t len,
                                        char **out_json);

/**
 * Release a string returned by this library.
 *
 * # Safety
 * `s` must come from this library, unmodified and not yet freed.
 */
void pyramem_string_free(char *s);

/**
 * Token-set F1, maximum over references.
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_f1(const char *prediction,
                              const char *const *references,
                              uintptr_t len,
                              double *out_score);

/**
 * BLEU-1 with brevity penalty.
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_bleu1(const char *prediction,
                                 const char *const *references,
                                 uintptr_t len,
                                 double *out_score);

/**
 * ROUGE-L. Pass `beta <= 0` for the default weight (1.2).
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_rouge_l(const char *prediction,
                                   const char *reference,
                                   double beta,
                                   double *out_score);

/**
 * ROUGE-2 bigram overlap.
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_rouge_2(const char *prediction,
                                   const char *reference,
                                   double *out_score);

/**
 * Exact-match METEOR.
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_meteor(const char *prediction, const char *reference, double *out_score);

/**
 * Token estimate `1.1*w + 0.35*s`.
 *
 * # Safety
 * Pointer arguments must satisfy the conventions above.
 */
enum PyramemStatus pyramem_estimate_tokens(const char *text, double *out_tokens);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PYRAMEM_H */
