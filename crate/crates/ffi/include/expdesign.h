#ifndef EXPDESIGN_H
#define EXPDESIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ExpdesignNestMode {
  EXPDESIGN_NEST_MODE_KRON = 0,
  EXPDESIGN_NEST_MODE_SCOPED = 1,
} ExpdesignNestMode;

// Result of every fallible call. Values match the CLI exit codes.
typedef enum ExpdesignStatus {
  EXPDESIGN_STATUS_OK = 0,
  EXPDESIGN_STATUS_PARSE = 1,
  EXPDESIGN_STATUS_RESOLVE = 2,
  EXPDESIGN_STATUS_UNSATISFIABLE = 3,
  EXPDESIGN_STATUS_TIMEOUT = 4,
  EXPDESIGN_STATUS_UNEVEN = 5,
  EXPDESIGN_STATUS_VERIFY = 6,
  // Null pointer, invalid UTF-8 or an index out of range.
  EXPDESIGN_STATUS_INVALID_ARGUMENT = 7,
  EXPDESIGN_STATUS_PANIC = 8,
} ExpdesignStatus;

// The assigned design of a program, resolved to constraints.
typedef struct ExpdesignDesign ExpdesignDesign;

// A solved plan matrix.
typedef struct ExpdesignMatrix ExpdesignMatrix;

// A parsed program.
typedef struct ExpdesignProgram ExpdesignProgram;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *expdesign_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void expdesign_string_free(char *s);

// Parses program source text.
//
// # Safety
// `source` must be a NUL-terminated string; `out` must be writable.
enum ExpdesignStatus expdesign_program_parse(const char *source, struct ExpdesignProgram **out);

// # Safety
// `p` must come from `expdesign_program_parse` and not have been freed.
void expdesign_program_free(struct ExpdesignProgram *p);

// Renders a program back to canonical source text.
//
// # Safety
// `p` must be a live program handle; `out` must be writable.
enum ExpdesignStatus expdesign_program_render(const struct ExpdesignProgram *p, char **out);

// Resolves the program's assigned design, sized for its units.
//
// # Safety
// `p` must be a live program handle; `out` must be writable.
enum ExpdesignStatus expdesign_program_resolve(const struct ExpdesignProgram *p,
                                               enum ExpdesignNestMode mode,
                                               struct ExpdesignDesign **out);

// # Safety
// `d` must come from `expdesign_program_resolve` and not have been freed.
void expdesign_design_free(struct ExpdesignDesign *d);

// Plan and trial counts of a resolved design.
//
// # Safety
// `d` must be a live design handle; `plans` and `trials` must be writable.
enum ExpdesignStatus expdesign_design_shape(const struct ExpdesignDesign *d,
                                            size_t *plans,
                                            size_t *trials);

// Solves a design. A `timeout_ms` of 0 uses the default budget.
//
// # Safety
// `d` must be a live design handle; `out` must be writable.
enum ExpdesignStatus expdesign_design_solve(const struct ExpdesignDesign *d,
                                            uint64_t seed,
                                            uint64_t timeout_ms,
                                            struct ExpdesignMatrix **out);

// Counts the solutions of a small design, stopping at `limit` (0 for no limit).
//
// # Safety
// `d` must be a live design handle; `out` must be writable.
enum ExpdesignStatus expdesign_design_count(const struct ExpdesignDesign *d,
                                            size_t limit,
                                            uint64_t *out);

// # Safety
// `m` must come from `expdesign_design_solve` and not have been freed.
void expdesign_matrix_free(struct ExpdesignMatrix *m);

// Plan and trial counts of a solved matrix.
//
// # Safety
// `m` must be a live matrix handle; `plans` and `trials` must be writable.
enum ExpdesignStatus expdesign_matrix_shape(const struct ExpdesignMatrix *m,
                                            size_t *plans,
                                            size_t *trials);

// Condition code at `(row, col)`.
//
// # Safety
// `m` must be a live matrix handle; `out` must be writable.
enum ExpdesignStatus expdesign_matrix_code(const struct ExpdesignMatrix *m,
                                           size_t row,
                                           size_t col,
                                           uint64_t *out);

// Plan table as CSV, cells named by the program's declared levels.
//
// # Safety
// `m` and `p` must be live handles; `out` must be writable.
enum ExpdesignStatus expdesign_matrix_plans_csv(const struct ExpdesignMatrix *m,
                                                const struct ExpdesignProgram *p,
                                                char **out);

// Randomly assigns the program's units to the plans of `m` and returns the
// assignment table as CSV. Warnings, if any, lead the text as `# warning:` lines.
//
// # Safety
// `p` and `m` must be live handles; `out` must be writable.
enum ExpdesignStatus expdesign_assign_csv(const struct ExpdesignProgram *p,
                                          const struct ExpdesignMatrix *m,
                                          uint64_t seed,
                                          bool allow_uneven,
                                          char **out);

// Checks a plan table against the program's assigned design. The JSON
// report is written to `report` whenever the table could be read; the
// status is `EXPDESIGN_STATUS_VERIFY` if any check fails.
//
// # Safety
// `p` must be a live program handle; `plans_csv` must be a NUL-terminated
// string; `report` must be writable.
enum ExpdesignStatus expdesign_verify_csv(const struct ExpdesignProgram *p,
                                          enum ExpdesignNestMode mode,
                                          const char *plans_csv,
                                          char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXPDESIGN_H */
