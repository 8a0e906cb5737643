#ifndef NEUROREC_H
#define NEUROREC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * How a simulation ended.
 */
typedef enum NrRunStatus {
  NR_RUN_STATUS_QUIESCENT = 0,
  NR_RUN_STATUS_TIMEOUT = 1,
  NR_RUN_STATUS_FAULT = 2,
} NrRunStatus;

/**
 * Result code of every fallible call.
 */
typedef enum NrStatus {
  NR_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NR_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  NR_STATUS_INVALID_UTF8 = 2,
  /**
   * Program text or circuit JSON did not parse.
   */
  NR_STATUS_PARSE = 3,
  /**
   * The program is ill-formed or got the wrong number of arguments.
   */
  NR_STATUS_ARITY = 4,
  /**
   * Bad configuration, e.g. big M too small or strict mode violated.
   */
  NR_STATUS_CONFIG = 5,
  /**
   * An argument value is out of range.
   */
  NR_STATUS_ARGUMENT = 6,
  /**
   * An index was out of range.
   */
  NR_STATUS_OUT_OF_RANGE = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  NR_STATUS_INTERNAL = 99,
} NrStatus;

/**
 * Opaque result of one simulation.
 */
typedef struct NrOutcome NrOutcome;

/**
 * Opaque compiled program.
 */
typedef struct NrProgram NrProgram;

/**
 * Size figures of a compiled program.
 */
typedef struct NrStats {
  size_t neurons;
  size_t synapses;
  size_t native_gadgets;
  size_t trigger_cells;
  /**
   * Output latency in steps, or -1 when it depends on the inputs.
   */
  int64_t static_latency;
} NrStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or null. The
 * pointer stays valid until the next call into this library.
 */
const char *nr_last_error(void);

/**
 * Compiles program text. `big_m` of 0 selects the default; `strict`
 * rejects programs that need native gadgets.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NrStatus nr_program_compile(const char *source,
                                 int64_t big_m,
                                 bool strict,
                                 struct NrProgram **out);

/**
 * Loads a program previously serialized with [`nr_program_to_json`].
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NrStatus nr_program_from_json(const char *json, struct NrProgram **out);

/**
 * Serializes the program (circuit plus metadata) as JSON.
 *
 * # Safety
 * `program` must come from this library; `out` must be a valid pointer.
 */
enum NrStatus nr_program_to_json(const struct NrProgram *program, char **out);

/**
 * Number of arguments the program takes, or 0 for a null handle.
 *
 * # Safety
 * `program` must be null or come from this library.
 */
size_t nr_program_arity(const struct NrProgram *program);

/**
 * # Safety
 * `program` must come from this library; `out` must be a valid pointer.
 */
enum NrStatus nr_program_stats(const struct NrProgram *program, struct NrStats *out);

/**
 * # Safety
 * `program` must be null or an unreleased handle from this library.
 */
void nr_program_free(struct NrProgram *program);

/**
 * Simulates the program on `args[0..n_args]`, all delivered at t = 0.
 * `max_steps` of 0 selects the default budget. Timeouts and faults are
 * reported through the outcome, not the return code.
 *
 * # Safety
 * `program` must come from this library, `args` must point to `n_args`
 * values (or be null when `n_args` is 0) and `out` must be valid.
 */
enum NrStatus nr_program_run(const struct NrProgram *program,
                             const uint64_t *args,
                             size_t n_args,
                             uint64_t max_steps,
                             struct NrOutcome **out);

/**
 * # Safety
 * `outcome` must come from this library.
 */
enum NrRunStatus nr_outcome_status(const struct NrOutcome *outcome);

/**
 * Number of spikes on the output port.
 *
 * # Safety
 * `outcome` must be null or come from this library.
 */
size_t nr_outcome_output_count(const struct NrOutcome *outcome);

/**
 * The `index`-th output spike: its value and time. Either out-pointer
 * may be null.
 *
 * # Safety
 * `outcome` must come from this library.
 */
enum NrStatus nr_outcome_output(const struct NrOutcome *outcome,
                                size_t index,
                                int64_t *value,
                                uint64_t *time);

/**
 * Clock value when the simulation stopped.
 *
 * # Safety
 * `outcome` must be null or come from this library.
 */
uint64_t nr_outcome_final_clock(const struct NrOutcome *outcome);

/**
 * Spike raster as CSV (`time,neuron,value,port`).
 *
 * # Safety
 * Both handles must come from this library, the outcome from running
 * this program; `out` must be a valid pointer.
 */
enum NrStatus nr_outcome_raster_csv(const struct NrProgram *program,
                                    const struct NrOutcome *outcome,
                                    char **out);

/**
 * # Safety
 * `outcome` must be null or an unreleased handle from this library.
 */
void nr_outcome_free(struct NrOutcome *outcome);

/**
 * Evaluates program text with the reference interpreter. On success
 * `*exhausted` tells whether the fuel ran out, in which case `*value` is
 * left untouched.
 *
 * # Safety
 * `source` must be a NUL-terminated string, `args` must point to
 * `n_args` values, and `value` and `exhausted` must be valid pointers.
 */
enum NrStatus nr_eval(const char *source,
                      const uint64_t *args,
                      size_t n_args,
                      uint64_t fuel,
                      uint64_t *value,
                      bool *exhausted);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library not yet released.
 */
void nr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUROREC_H */
