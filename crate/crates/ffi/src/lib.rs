//! C ABI over the arena engine.
//!
//! Every function returns an [`ArenaStatus`]; results come back through out
//! pointers. Strings handed out by the library are NUL-terminated UTF-8 and
//! must be released with [`arena_string_free`]. After a non-OK status,
//! [`arena_last_error_message`] describes the failure on the calling thread.
//! No entry point unwinds into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use arena_core::agents::{build_prompt, LanguageFraming};
use arena_core::games::{new_game, GameConfig, GameError, GameState, OutcomeKind, Phase, Winner};
use arena_core::metrics::{self, ExportFormat};
use arena_core::orchestrator::read_log;
use arena_core::protocol::{parse_message, GameKind, Role};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArenaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    IllegalMove = 5,
    GameOver = 6,
    NotTerminal = 7,
    Io = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArenaPhase {
    AwaitingProposal = 0,
    AwaitingResponse = 1,
    Terminal = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArenaOutcomeKind {
    Agreement = 0,
    Rejection = 1,
    NoDealTimeout = 2,
    ProtocolFailure = 3,
}

/// `winner`: 0 draw, 1 Player 1, 2 Player 2.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArenaOutcome {
    pub kind: ArenaOutcomeKind,
    pub utility_p1: i64,
    pub utility_p2: i64,
    pub rounds: u32,
    pub winner: u8,
}

/// Opaque game handle.
pub struct ArenaGame {
    state: GameState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(ArenaStatus, String);

type FfiResult<T> = Result<T, Fail>;

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> ArenaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArenaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ArenaStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail(ArenaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(ArenaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn game<'a>(g: *const ArenaGame) -> FfiResult<&'a ArenaGame> {
    g.as_ref().ok_or_else(|| Fail(ArenaStatus::NullPointer, "game handle is null".into()))
}

unsafe fn put<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Fail(ArenaStatus::NullPointer, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

fn owned(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn invalid(msg: impl ToString) -> Fail {
    Fail(ArenaStatus::InvalidArgument, msg.to_string())
}

fn parse_config(s: &str) -> FfiResult<GameConfig> {
    if let Ok(kind) = s.trim().parse::<GameKind>() {
        return Ok(GameConfig::default_for(kind));
    }
    serde_json::from_str(s).map_err(|e| invalid(format!("game config: {e}")))
}

fn parse_role(role: u8) -> FfiResult<Role> {
    match role {
        1 => Ok(Role::Player1),
        2 => Ok(Role::Player2),
        other => Err(invalid(format!("role must be 1 or 2, got {other}"))),
    }
}

/// Library version as a static string; never free it.
#[no_mangle]
pub extern "C" fn arena_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or null if none.
/// Release with `arena_string_free`.
#[no_mangle]
pub extern "C" fn arena_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` is null or a pointer previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn arena_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Starts a game. `config` is a game name (`ultimatum`, `buysell`,
/// `resource`) for defaults, or a JSON game config.
///
/// # Safety
/// `config` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_game_new(config: *const c_char, seed: u64, out: *mut *mut ArenaGame) -> ArenaStatus {
    guard(|| {
        let config = parse_config(text(config, "config")?)?;
        let state = new_game(config, seed).map_err(invalid)?;
        put(out, Box::into_raw(Box::new(ArenaGame { state })))
    })
}

/// # Safety
/// `g` is null or a live handle from `arena_game_new`; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn arena_game_free(g: *mut ArenaGame) {
    if !g.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(g))));
    }
}

/// Parses `message` as the current speaker's reply and applies it. On any
/// error the game is left unchanged.
///
/// # Safety
/// `g` is a live handle; `message` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn arena_game_step(g: *mut ArenaGame, message: *const c_char) -> ArenaStatus {
    guard(|| {
        let g = g.as_mut().ok_or_else(|| Fail(ArenaStatus::NullPointer, "game handle is null".into()))?;
        let message = text(message, "message")?;
        if g.state.is_terminal() {
            return Err(Fail(ArenaStatus::GameOver, "the game is already over".into()));
        }
        let msg = parse_message(message, g.state.current_speaker, &g.state.bounds())
            .map_err(|e| Fail(ArenaStatus::ParseError, e.to_string()))?;
        g.state = g.state.step(msg).map_err(|e| match e {
            GameError::IllegalMove(m) => Fail(ArenaStatus::IllegalMove, m.to_string()),
            other => invalid(other),
        })?;
        Ok(())
    })
}

/// # Safety
/// `g` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_game_phase(g: *const ArenaGame, out: *mut ArenaPhase) -> ArenaStatus {
    guard(|| {
        let phase = match game(g)?.state.phase {
            Phase::AwaitingProposal => ArenaPhase::AwaitingProposal,
            Phase::AwaitingResponse => ArenaPhase::AwaitingResponse,
            Phase::Terminal => ArenaPhase::Terminal,
        };
        put(out, phase)
    })
}

/// Writes 1 or 2.
///
/// # Safety
/// `g` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_game_current_speaker(g: *const ArenaGame, out: *mut u8) -> ArenaStatus {
    guard(|| put(out, game(g)?.state.current_speaker.index() as u8 + 1))
}

/// Fails with `NotTerminal` while the game is running.
///
/// # Safety
/// `g` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_game_outcome(g: *const ArenaGame, out: *mut ArenaOutcome) -> ArenaStatus {
    guard(|| {
        let outcome = game(g)?
            .state
            .outcome
            .as_ref()
            .ok_or_else(|| Fail(ArenaStatus::NotTerminal, "the game is still running".into()))?;
        let kind = match outcome.kind {
            OutcomeKind::Agreement => ArenaOutcomeKind::Agreement,
            OutcomeKind::Rejection => ArenaOutcomeKind::Rejection,
            OutcomeKind::NoDealTimeout => ArenaOutcomeKind::NoDealTimeout,
            OutcomeKind::ProtocolFailure => ArenaOutcomeKind::ProtocolFailure,
        };
        let winner = match outcome.winner() {
            Winner::Draw => 0,
            Winner::Player1 => 1,
            Winner::Player2 => 2,
        };
        put(
            out,
            ArenaOutcome {
                kind,
                utility_p1: outcome.utilities[0],
                utility_p2: outcome.utilities[1],
                rounds: outcome.rounds_used,
                winner,
            },
        )
    })
}

/// Full game state as JSON.
///
/// # Safety
/// `g` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_game_state_json(g: *const ArenaGame, out: *mut *mut c_char) -> ArenaStatus {
    guard(|| {
        let json = serde_json::to_string(&game(g)?.state).map_err(invalid)?;
        put(out, owned(json))
    })
}

/// Parses `message` as the current speaker's reply without applying it and
/// writes the parsed message as JSON.
///
/// # Safety
/// `g` is a live handle; `message` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_parse_message(
    g: *const ArenaGame,
    message: *const c_char,
    out: *mut *mut c_char,
) -> ArenaStatus {
    guard(|| {
        let state = &game(g)?.state;
        let parsed = parse_message(text(message, "message")?, state.current_speaker, &state.bounds())
            .map_err(|e| Fail(ArenaStatus::ParseError, e.to_string()))?;
        put(out, owned(serde_json::to_string(&parsed).map_err(invalid)?))
    })
}

/// System prompt for `role` (1 or 2) under `language` (`english`, `hindi`, ...).
///
/// # Safety
/// `config` and `language` are NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_build_prompt(
    config: *const c_char,
    role: u8,
    language: *const c_char,
    out: *mut *mut c_char,
) -> ArenaStatus {
    guard(|| {
        let config = parse_config(text(config, "config")?)?;
        config.validate().map_err(invalid)?;
        let framing: LanguageFraming = text(language, "language")?.parse().map_err(invalid)?;
        let bundle = build_prompt(&config, parse_role(role)?, framing);
        put(out, owned(bundle.system_prompt))
    })
}

/// Reads a run log, groups it by `group_by` (`language` or `pair`) and writes
/// the export in `format` (`csv`, `records` or `heatmap-grid`).
///
/// # Safety
/// `path`, `group_by` and `format` are NUL-terminated strings; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn arena_analyze_log(
    path: *const c_char,
    group_by: *const c_char,
    format: *const c_char,
    out: *mut *mut c_char,
) -> ArenaStatus {
    guard(|| {
        let path = text(path, "path")?;
        let fields: &[&str] = match text(group_by, "group_by")? {
            "language" => &["language"],
            "pair" => &["language", "pair"],
            other => return Err(invalid(format!("group_by must be language or pair, got `{other}`"))),
        };
        let format: ExportFormat = text(format, "format")?.parse().map_err(invalid)?;
        let records = read_log(Path::new(path)).map_err(|e| Fail(ArenaStatus::Io, e.to_string()))?;
        let groups = metrics::aggregate(&records, fields).map_err(invalid)?;
        let mut buf = Vec::new();
        metrics::export(&groups, format, &mut buf).map_err(invalid)?;
        put(out, owned(String::from_utf8(buf).map_err(invalid)?))
    })
}
