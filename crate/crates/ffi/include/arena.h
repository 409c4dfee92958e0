#ifndef ARENA_H
#define ARENA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ArenaOutcomeKind {
  ARENA_OUTCOME_KIND_AGREEMENT = 0,
  ARENA_OUTCOME_KIND_REJECTION = 1,
  ARENA_OUTCOME_KIND_NO_DEAL_TIMEOUT = 2,
  ARENA_OUTCOME_KIND_PROTOCOL_FAILURE = 3,
} ArenaOutcomeKind;

typedef enum ArenaPhase {
  ARENA_PHASE_AWAITING_PROPOSAL = 0,
  ARENA_PHASE_AWAITING_RESPONSE = 1,
  ARENA_PHASE_TERMINAL = 2,
} ArenaPhase;

typedef enum ArenaStatus {
  ARENA_STATUS_OK = 0,
  ARENA_STATUS_NULL_POINTER = 1,
  ARENA_STATUS_INVALID_UTF8 = 2,
  ARENA_STATUS_INVALID_ARGUMENT = 3,
  ARENA_STATUS_PARSE_ERROR = 4,
  ARENA_STATUS_ILLEGAL_MOVE = 5,
  ARENA_STATUS_GAME_OVER = 6,
  ARENA_STATUS_NOT_TERMINAL = 7,
  ARENA_STATUS_IO = 8,
  ARENA_STATUS_PANIC = 99,
} ArenaStatus;

/**
 * Opaque game handle.
 */
typedef struct ArenaGame ArenaGame;

/**
 * `winner`: 0 draw, 1 Player 1, 2 Player 2.
 */
typedef struct ArenaOutcome {
  enum ArenaOutcomeKind kind;
  int64_t utility_p1;
  int64_t utility_p2;
  uint32_t rounds;
  uint8_t winner;
} ArenaOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never free it.
 */
const char *arena_version(void);

/**
 * Copy of the last error message on this thread, or null if none.
 * Release with `arena_string_free`.
 */
char *arena_last_error_message(void);

/**
 * # Safety
 * `s` is null or a pointer previously returned by this library.
 */
void arena_string_free(char *s);

/**
 * Starts a game. `config` is a game name (`ultimatum`, `buysell`,
 * `resource`) for defaults, or a JSON game config.
 *
 * # Safety
 * `config` is a NUL-terminated string; `out` is writable.
 */
enum ArenaStatus arena_game_new(const char *config, uint64_t seed, struct ArenaGame **out);

/**
 * # Safety
 * `g` is null or a live handle from `arena_game_new`; it is invalid afterwards.
 */
void arena_game_free(struct ArenaGame *g);

/**
 * Parses `message` as the current speaker's reply and applies it. On any
 * error the game is left unchanged.
 *
 * # Safety
 * `g` is a live handle; `message` is a NUL-terminated string.
 */
enum ArenaStatus arena_game_step(struct ArenaGame *g, const char *message);

/**
 * # Safety
 * `g` is a live handle; `out` is writable.
 */
enum ArenaStatus arena_game_phase(const struct ArenaGame *g, enum ArenaPhase *out);

/**
 * Writes 1 or 2.
 *
 * # Safety
 * `g` is a live handle; `out` is writable.
 */
enum ArenaStatus arena_game_current_speaker(const struct ArenaGame *g, uint8_t *out);

/**
 * Fails with `NotTerminal` while the game is running.
 *
 * # Safety
 * `g` is a live handle; `out` is writable.
 */
enum ArenaStatus arena_game_outcome(const struct ArenaGame *g, struct ArenaOutcome *out);

/**
 * Full game state as JSON.
 *
 * # Safety
 * `g` is a live handle; `out` is writable.
 */
enum ArenaStatus arena_game_state_json(const struct ArenaGame *g, char **out);

/**
 * Parses `message` as the current speaker's reply without applying it and
 * writes the parsed message as JSON.
 *
 * # Safety
 * `g` is a live handle; `message` is a NUL-terminated string; `out` is writable.
 */
enum ArenaStatus arena_parse_message(const struct ArenaGame *g, const char *message, char **out);

/**
 * System prompt for `role` (1 or 2) under `language` (`english`, `hindi`, ...).
 *
 * # Safety
 * `config` and `language` are NUL-terminated strings; `out` is writable.
 */
enum ArenaStatus arena_build_prompt(const char *config,
                                    uint8_t role,
                                    const char *language,
                                    char **out);

/**
 * Reads a run log, groups it by `group_by` (`language` or `pair`) and writes
 * the export in `format` (`csv`, `records` or `heatmap-grid`).
 *
 * # Safety
 * `path`, `group_by` and `format` are NUL-terminated strings; `out` is writable.
 */
enum ArenaStatus arena_analyze_log(const char *path,
                                   const char *group_by,
                                   const char *format,
                                   char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARENA_H */
