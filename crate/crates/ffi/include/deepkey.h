#ifndef DEEPKEY_H
#define DEEPKEY_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DkStatus {
  DK_STATUS_OK = 0,
  DK_STATUS_NULL_POINTER = 1,
  DK_STATUS_INVALID_ARGUMENT = 2,
  DK_STATUS_SHAPE = 3,
  DK_STATUS_REQUEST = 4,
  DK_STATUS_FORMAT = 5,
  DK_STATUS_IO = 6,
  DK_STATUS_NUMERIC = 7,
  DK_STATUS_BUFFER_TOO_SMALL = 8,
  DK_STATUS_INTERNAL = 9,
} DkStatus;

typedef enum DkVerdict {
  DK_VERDICT_APPROVE = 0,
  DK_VERDICT_DENY = 1,
} DkVerdict;

typedef enum DkReason {
  DK_REASON_APPROVED = 0,
  DK_REASON_IMPOSTOR_FILTERED = 1,
  DK_REASON_ID_MISMATCH = 2,
} DkReason;

/**
 * Trained gate, identifiers and code banks.
 */
typedef struct DkSystem DkSystem;

/**
 * Outcome of `dk_authenticate`. Identities are only meaningful when the
 * matching `has_*` flag is set.
 */
typedef struct DkDecision {
  enum DkVerdict verdict;
  enum DkReason reason;
  bool has_e_id;
  uint32_t e_id;
  bool has_g_id;
  uint32_t g_id;
  double gate_score;
} DkDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dk_version(void);

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *dk_last_error(void);

/**
 * Number of channels per instance: 14 for EEG, 27 for gait.
 */
size_t dk_eeg_channels(void);

size_t dk_gait_channels(void);

/**
 * Loads a bundle written by `deepkey train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DkStatus dk_system_load(const char *path, struct DkSystem **out);

/**
 * Same as `dk_system_load` from an in-memory bundle.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` must be valid.
 */
enum DkStatus dk_system_from_bytes(const uint8_t *bytes, size_t len, struct DkSystem **out);

/**
 * # Safety
 * `system` must come from `dk_system_load`/`dk_system_from_bytes` and not be
 * freed twice. NULL is ignored.
 */
void dk_system_free(struct DkSystem *system);

/**
 * Enrolled subject ids. Writes at most `cap` ids to `ids` and the total count
 * to `count`; returns `DK_STATUS_BUFFER_TOO_SMALL` when `cap` is short.
 *
 * # Safety
 * `system` must be a live handle, `ids` must hold `cap` values (may be NULL
 * when `cap` is 0) and `count` must be valid.
 */
enum DkStatus dk_system_subjects(const struct DkSystem *system,
                                 uint32_t *ids,
                                 size_t cap,
                                 size_t *count);

/**
 * Runs the gate, both identifiers and the consistency rule.
 *
 * `eeg` is `eeg_rows` x 14 and `gait` is `gait_rows` x 27, both row-major.
 * A short or malformed request is `DK_STATUS_REQUEST`, never a denial.
 *
 * # Safety
 * `system` must be a live handle, the arrays must hold the stated number of
 * values and `out` must be valid.
 */
enum DkStatus dk_authenticate(const struct DkSystem *system,
                              const double *eeg,
                              size_t eeg_rows,
                              const double *gait,
                              size_t gait_rows,
                              struct DkDecision *out);

/**
 * System FRR from the gate's FRR and the two identification accuracies.
 *
 * # Safety
 * `out` must be valid.
 */
enum DkStatus dk_compose_frr(double filter_frr, double gait_acc, double eeg_acc, double *out);

/**
 * Butterworth band-pass design. `b` and `a` each need `2 * order + 1` slots;
 * `len` is the capacity of each.
 *
 * # Safety
 * `b` and `a` must each hold `len` values.
 */
enum DkStatus dk_design_bandpass(size_t order,
                                 double low_hz,
                                 double high_hz,
                                 double fs,
                                 double *b,
                                 double *a,
                                 size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPKEY_H */
