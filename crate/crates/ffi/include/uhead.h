/* C interface for the uhead uncertainty-head toolkit. */

#ifndef UHEAD_H
#define UHEAD_H

/* Generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Outcome of a fallible call.
 */
typedef enum UheadStatus {
  UHEAD_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  UHEAD_STATUS_NULL_ARGUMENT = 1,
  /*
   An argument violated a documented precondition.
   */
  UHEAD_STATUS_INVALID_ARGUMENT = 2,
  /*
   The filesystem failed underneath us.
   */
  UHEAD_STATUS_IO_ERROR = 3,
  /*
   A file exists but does not match its documented layout.
   */
  UHEAD_STATUS_MALFORMED_FILE = 4,
  /*
   The library panicked; state may be stale but memory is intact.
   */
  UHEAD_STATUS_PANIC = 5,
} UheadStatus;

/*
 Trained uncertainty head (opaque).
 */
typedef struct UheadHead UheadHead;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Last error message on this thread, or null when the most recent call
 succeeded. The pointer stays valid until the next library call on the
 same thread.
 */
const char *uhead_last_error(void);

/*
 Library version as a static string; never freed by the caller.
 */
const char *uhead_version(void);

/*
 Creates a freshly initialized head (same initializer as training runs
 use) and writes the handle to `out`.

 # Safety
 `out` must be a valid pointer to an `UheadHead*` slot.
 */
enum UheadStatus uhead_head_init(uint32_t input_dim,
                                 uint32_t hidden_dim,
                                 uint64_t seed,
                                 struct UheadHead **out);

/*
 Loads a head checkpoint written by `uhead_head_save` or the CLI trainer
 and writes the handle to `out`.

 # Safety
 `path` must be a NUL-terminated string; `out` must be a valid pointer to
 an `UheadHead*` slot.
 */
enum UheadStatus uhead_head_load(const char *path, struct UheadHead **out);

/*
 Saves the head to `path` (atomically: temp file + rename).

 # Safety
 `head` must be a live handle from this library; `path` must be a
 NUL-terminated string.
 */
enum UheadStatus uhead_head_save(const struct UheadHead *head, const char *path);

/*
 Embedding width the head expects, or 0 for a null handle.

 # Safety
 `head` must be null or a live handle from this library.
 */
uint32_t uhead_head_input_dim(const struct UheadHead *head);

/*
 Hidden-layer width, or 0 for a null handle.

 # Safety
 `head` must be null or a live handle from this library.
 */
uint32_t uhead_head_hidden_dim(const struct UheadHead *head);

/*
 Scores `n_rows` embeddings of width `dim` (row-major, contiguous) and
 writes one nonnegative uncertainty per row to `out`.

 # Safety
 `head` must be a live handle; `embeddings` must point to
 `n_rows * dim` readable floats; `out` must point to `n_rows` writable
 floats; the regions must not overlap.
 */
enum UheadStatus uhead_head_predict(const struct UheadHead *head,
                                    const float *embeddings,
                                    uintptr_t n_rows,
                                    uintptr_t dim,
                                    float *out);

/*
 Releases a handle. Null is a no-op.

 # Safety
 `head` must be null or a live handle from this library, and must not be
 used afterwards.
 */
void uhead_head_free(struct UheadHead *head);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* UHEAD_H */
