#ifndef BIOBRIDGE_H
#define BIOBRIDGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum BbStatus {
  BB_STATUS_OK = 0,
  BB_STATUS_NULL_POINTER = 1,
  BB_STATUS_INVALID_UTF8 = 2,
  BB_STATUS_BUFFER_TOO_SMALL = 3,
  BB_STATUS_IO = 4,
  BB_STATUS_PARSE = 5,
  BB_STATUS_INVALID_INPUT = 6,
  BB_STATUS_NUMERIC = 7,
  BB_STATUS_CHECKPOINT = 8,
  BB_STATUS_CONFIG = 9,
  BB_STATUS_INTERNAL = 10,
} BbStatus;

/*
 Opaque model handle.
 */
typedef struct BbModel BbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *bb_version(void);

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *bb_last_error(void);

/*
 Creates a freshly initialized model. `config_json` may be null for the
 default architecture.

 # Safety
 `config_json` must be null or a valid NUL-terminated string; `out` must
 point to writable storage for one handle.
 */
enum BbStatus bb_model_new(const char *config_json, uint64_t seed, struct BbModel **out);

/*
 Loads a checkpoint file or run directory.

 # Safety
 `path` must be a valid NUL-terminated string; `out` must point to
 writable storage for one handle.
 */
enum BbStatus bb_model_load(const char *path, struct BbModel **out);

/*
 Writes the model checkpoint into directory `dir`.

 # Safety
 `model` must be a live handle and `dir` a valid NUL-terminated string.
 */
enum BbStatus bb_model_save(const struct BbModel *model, const char *dir);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must be null or a handle not yet freed.
 */
void bb_model_free(struct BbModel *model);

/*
 Number of query vectors and their width in the alignment space.

 # Safety
 `model` must be a live handle; `queries` and `dim` must be writable.
 */
enum BbStatus bb_model_latent_shape(const struct BbModel *model,
                                    uintptr_t *queries,
                                    uintptr_t *dim);

/*
 Q-Former latent of a protein, row-major `queries x dim`.

 # Safety
 `model` must be a live handle, `sequence` a valid NUL-terminated string,
 `out` writable for `cap` values and `len` writable.
 */
enum BbStatus bb_model_embed_protein(const struct BbModel *model,
                                     const char *sequence,
                                     double *out,
                                     uintptr_t cap,
                                     uintptr_t *len);

/*
 Text-encoder embedding (before normalization), `dim` values.

 # Safety
 As for `bb_model_embed_protein`.
 */
enum BbStatus bb_model_embed_text(const struct BbModel *model,
                                  const char *text,
                                  double *out,
                                  uintptr_t cap,
                                  uintptr_t *len);

/*
 Temperature-scaled similarity between a protein and a text.

 # Safety
 `model` must be a live handle, both strings valid and NUL-terminated,
 `score` writable.
 */
enum BbStatus bb_model_similarity(const struct BbModel *model,
                                  const char *sequence,
                                  const char *text,
                                  double *score);

/*
 Greedy answer to `question` about a protein, written NUL-terminated.
 `len` receives the byte count including the NUL.

 # Safety
 `model` must be a live handle, both strings valid and NUL-terminated,
 `out` writable for `cap` bytes and `len` writable.
 */
enum BbStatus bb_model_generate(const struct BbModel *model,
                                const char *sequence,
                                const char *question,
                                uintptr_t max_new,
                                char *out,
                                uintptr_t cap,
                                uintptr_t *len);

/*
 SHA-256 fingerprint of the parameters whose names start with `prefix`
 (an empty prefix covers all), as NUL-terminated hex.

 # Safety
 As for `bb_model_generate`.
 */
enum BbStatus bb_model_fingerprint(const struct BbModel *model,
                                   const char *prefix,
                                   char *out,
                                   uintptr_t cap,
                                   uintptr_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIOBRIDGE_H */
