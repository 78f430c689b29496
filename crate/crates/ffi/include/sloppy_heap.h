#ifndef SLOPPY_HEAP_H
#define SLOPPY_HEAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ShMode {
  SH_MODE_EXACT = 0,
  SH_MODE_SLOPPY = 1,
} ShMode;

typedef enum ShStatus {
  SH_STATUS_OK = 0,
  SH_STATUS_NULL_POINTER = 1,
  /**
   * k below 2 or a work budget below 8.
   */
  SH_STATUS_INVALID_CONFIG = 2,
  /**
   * The quantile index is outside 1..=k.
   */
  SH_STATUS_INDEX_OUT_OF_RANGE = 3,
  /**
   * The requested quantile holds no items.
   */
  SH_STATUS_EMPTY_QUANTILE = 4,
  SH_STATUS_INTERNAL = 5,
  SH_STATUS_PANIC = 6,
  SH_STATUS_POISONED = 7,
} ShStatus;

/**
 * Opaque heap handle.
 */
typedef struct ShHeap ShHeap;

typedef struct ShPotential {
  double p1;
  double p2;
  double total;
} ShPotential;

/**
 * Counters and measurements since the heap was created.
 */
typedef struct ShStats {
  uint64_t ops;
  uint64_t inserts;
  uint64_t deletes;
  uint64_t len;
  uint64_t k;
  uint32_t budget;
  /**
   * 0 exact, 1 sloppy.
   */
  uint32_t mode;
  uint64_t buckets;
  double zeta;
  uint64_t max_op_work;
  double mean_op_work;
  uint64_t p99_op_work;
  uint64_t max_buckets_at_round_boundary;
  double max_size_zeta_ratio;
  uint64_t size_bound_violations;
  uint64_t rounds_completed;
  double max_round_drift;
  uint64_t drift_violations;
  uint64_t splits_completed;
  uint64_t split_property_violations;
  uint64_t merges_completed;
  uint64_t fallback_activations;
  uint64_t mode_transitions;
} ShStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create an empty heap. A `budget` of 0 selects the default of 16.
 *
 * # Safety
 * `out` must be null or valid for writing one pointer.
 */
enum ShStatus sh_heap_new(uint32_t k, uint32_t budget, struct ShHeap **out);

/**
 * Create a heap holding `len` keys read from `keys`. `keys` may be null
 * when `len` is 0.
 *
 * # Safety
 * `keys` must be valid for reading `len` values and `out` valid for
 * writing one pointer.
 */
enum ShStatus sh_heap_build(uint32_t k,
                            uint32_t budget,
                            const int64_t *keys,
                            size_t len,
                            struct ShHeap **out);

/**
 * Release a heap. Null is ignored.
 *
 * # Safety
 * `heap` must be null or a handle from this library not yet freed.
 */
void sh_heap_free(struct ShHeap *heap);

/**
 * # Safety
 * `heap` must be null or a live handle.
 */
enum ShStatus sh_heap_insert(struct ShHeap *heap, int64_t key);

/**
 * Remove some key from the `i`-th of the heap's k quantiles (1-based) and
 * store it in `out_key`.
 *
 * # Safety
 * `heap` must be null or a live handle; `out_key` null or writable.
 */
enum ShStatus sh_heap_delete(struct ShHeap *heap, size_t i, int64_t *out_key);

/**
 * Number of keys held; 0 for a null handle.
 *
 * # Safety
 * `heap` must be null or a live handle.
 */
size_t sh_heap_len(const struct ShHeap *heap);

/**
 * # Safety
 * `heap` must be null or a live handle; `out` null or writable.
 */
enum ShStatus sh_heap_mode(struct ShHeap *heap, enum ShMode *out);

/**
 * Check every structural invariant and store the number of violations.
 *
 * # Safety
 * `heap` must be null or a live handle; `violations` null or writable.
 */
enum ShStatus sh_heap_audit(struct ShHeap *heap, size_t *violations);

/**
 * # Safety
 * `heap` must be null or a live handle; `out` null or writable.
 */
enum ShStatus sh_heap_potential(struct ShHeap *heap, struct ShPotential *out);

/**
 * # Safety
 * `heap` must be null or a live handle; `out` null or writable.
 */
enum ShStatus sh_heap_stats(struct ShHeap *heap, struct ShStats *out);

/**
 * Static, NUL-terminated description of a status code.
 */
const char *sh_status_message(enum ShStatus status);

/**
 * Library version as a static, NUL-terminated string.
 */
const char *sh_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLOPPY_HEAP_H */
