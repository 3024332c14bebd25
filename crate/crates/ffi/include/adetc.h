#ifndef ADETC_H
#define ADETC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ADETC_MESSAGE_INIT 1

#define ADETC_MESSAGE_EVENT 2

#define ADETC_MESSAGE_SHRINK 3

typedef enum AdetcStatus {
  ADETC_STATUS_OK = 0,
  ADETC_STATUS_NULL_POINTER = 1,
  ADETC_STATUS_INVALID_UTF8 = 2,
  ADETC_STATUS_CONFIG = 3,
  ADETC_STATUS_SIMULATION = 4,
  ADETC_STATUS_PROTOCOL = 5,
  ADETC_STATUS_CERTIFICATE = 6,
  ADETC_STATUS_BUFFER_TOO_SMALL = 7,
  ADETC_STATUS_OUT_OF_RANGE = 8,
  ADETC_STATUS_PANIC = 9,
} AdetcStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct AdetcConfig AdetcConfig;

/**
 * Result of one simulation.
 */
typedef struct AdetcTrace AdetcTrace;

typedef struct AdetcEvent {
  uint32_t sensor;
  uint8_t bit;
  /**
   * 1 when fired because a smaller threshold became active.
   */
  uint8_t activation;
  double t;
  double value;
  double delivered_at;
} AdetcEvent;

/**
 * Wire frame contents. `kind` is one of the `ADETC_MESSAGE_*` tags;
 * `index` is unused for shrink frames, `bit` only for events and `value`
 * only for init frames.
 */
typedef struct AdetcMessage {
  uint8_t kind;
  uint32_t index;
  uint8_t bit;
  double t;
  double value;
} AdetcMessage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *adetc_last_error(void);

/**
 * Static, NUL-terminated crate version.
 */
const char *adetc_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void adetc_string_free(char *s);

/**
 * Parses configuration text in the flat `key = value` format.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AdetcStatus adetc_config_parse(const char *text, struct AdetcConfig **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AdetcStatus adetc_config_load(const char *path, struct AdetcConfig **out);

/**
 * Overrides one key. The configuration is left unchanged on failure.
 *
 * # Safety
 * `config` must come from this library; `key` and `value` must be
 * NUL-terminated strings.
 */
enum AdetcStatus adetc_config_set(struct AdetcConfig *config, const char *key, const char *value);

/**
 * # Safety
 * `config` must be null or come from this library, and not be used again.
 */
void adetc_config_free(struct AdetcConfig *config);

/**
 * Bound chain report as `key = value` lines, without simulating.
 *
 * # Safety
 * `config` must come from this library and `out` be a valid pointer.
 */
enum AdetcStatus adetc_bounds_report(const struct AdetcConfig *config, char **out);

/**
 * Simulates the configuration. Invalid designs report `Config`, failures
 * during the run report `Simulation`.
 *
 * # Safety
 * `config` must come from this library and `out` be a valid pointer.
 */
enum AdetcStatus adetc_run(const struct AdetcConfig *config, struct AdetcTrace **out);

/**
 * # Safety
 * `trace` must be null or come from this library, and not be used again.
 */
void adetc_trace_free(struct AdetcTrace *trace);

/**
 * State dimension; 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t adetc_trace_state_dim(const struct AdetcTrace *trace);

/**
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t adetc_trace_event_count(const struct AdetcTrace *trace);

/**
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t adetc_trace_sample_count(const struct AdetcTrace *trace);

/**
 * Number of threshold shrinks.
 *
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t adetc_trace_epoch_count(const struct AdetcTrace *trace);

/**
 * # Safety
 * `trace` must come from this library and `out` be a valid pointer.
 */
enum AdetcStatus adetc_trace_event(const struct AdetcTrace *trace,
                                   size_t k,
                                   struct AdetcEvent *out);

/**
 * Smallest gap between consecutive events of any sensor; `OutOfRange` if
 * no sensor fired twice.
 *
 * # Safety
 * `trace` must come from this library and `out` be a valid pointer.
 */
enum AdetcStatus adetc_trace_min_gap(const struct AdetcTrace *trace, double *out);

/**
 * Copies the final state into `buf`, which must hold `state_dim` values.
 *
 * # Safety
 * `trace` must come from this library and `buf` point to `len` doubles.
 */
enum AdetcStatus adetc_trace_final_state(const struct AdetcTrace *trace, double *buf, size_t len);

/**
 * Trace as CSV text; release with [`adetc_string_free`].
 *
 * # Safety
 * `trace` must come from this library and `out` be a valid pointer.
 */
enum AdetcStatus adetc_trace_csv(const struct AdetcTrace *trace, char **out);

/**
 * # Safety
 * `trace` must come from this library and `out` be a valid pointer.
 */
enum AdetcStatus adetc_trace_event_log(const struct AdetcTrace *trace, char **out);

/**
 * # Safety
 * `trace` must come from this library and `out` be a valid pointer.
 */
enum AdetcStatus adetc_trace_summary(const struct AdetcTrace *trace, char **out);

/**
 * Encodes `msg` into `buf`; `written` receives the frame length, also
 * when the buffer is too small.
 *
 * # Safety
 * `msg` and `written` must be valid; `buf` must point to `cap` bytes.
 */
enum AdetcStatus adetc_wire_encode(const struct AdetcMessage *msg,
                                   uint8_t *buf,
                                   size_t cap,
                                   size_t *written);

/**
 * # Safety
 * `buf` must point to `len` bytes and `out` be a valid pointer.
 */
enum AdetcStatus adetc_wire_decode(const uint8_t *buf, size_t len, struct AdetcMessage *out);

/**
 * Inter-transmission bound across a shrink for ratio `mu`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AdetcStatus adetc_shifted_intertransmission_time(double tau_star, double mu, double *out);

/**
 * Trigger threshold keeping the plant-side error below `eta` under delays
 * of at most `delay_max`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AdetcStatus adetc_delay_adjusted_threshold(double eta,
                                                double lipschitz,
                                                double kappa,
                                                double delay_max,
                                                double *out);

/**
 * Shrink gain from linear comparison-function gains.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum AdetcStatus adetc_rho_from_linear_gains(double k_upper,
                                             double k_lower,
                                             double k_ve,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADETC_H */
