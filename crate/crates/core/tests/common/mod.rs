//! Builders for real (engine-produced) run records used as test fixtures.
#![allow(dead_code)]

use std::sync::Arc;

use arena_core::agents::{AgentKind, AgentSpec, LanguageFraming, LlmSpec, Strategy};
use arena_core::games::GameConfig;
use arena_core::gateway::{ChatBackend, FixtureBackend};
use arena_core::orchestrator::{execute_run, Clock, FixedClock, RunEnv, RunRecord, RunSpec};
use arena_core::protocol::{GameKind, Role};

pub const EPOCH: &str = "2026-01-01T00:00:00Z";

pub fn fixed_clock() -> Arc<dyn Clock> {
    Arc::new(FixedClock(EPOCH.parse().unwrap()))
}

pub fn scripted_env() -> RunEnv {
    RunEnv::scripted(fixed_clock())
}

pub fn agent(name: &str, role: Role, strategy: Strategy) -> AgentSpec {
    AgentSpec { name: name.into(), role, kind: AgentKind::Scripted(strategy) }
}

pub fn llm(name: &str, role: Role) -> AgentSpec {
    AgentSpec {
        name: name.into(),
        role,
        kind: AgentKind::Llm(LlmSpec {
            model_id: name.into(),
            temperature: 0.7,
            max_output_tokens: 300,
            framing: LanguageFraming::English,
        }),
    }
}

pub fn spec(index: u64, game: GameConfig, p1: AgentSpec, p2: AgentSpec, seed: u64) -> RunSpec {
    RunSpec {
        run_id: format!("test-{index:06}"),
        index,
        game,
        framing: LanguageFraming::English,
        agent_p1: p1,
        agent_p2: p2,
        model_index: [0, 1],
        pair_index: 0,
        language_index: 0,
        game_index: 0,
        repetition: 0,
        seed,
    }
}

pub fn run(game: GameConfig, p1: Strategy, p2: Strategy, seed: u64) -> RunRecord {
    let s = spec(seed, game, agent("a", Role::Player1, p1), agent("b", Role::Player2, p2), seed);
    execute_run(&s, &scripted_env())
}

pub fn defaults(kind: GameKind) -> GameConfig {
    GameConfig::default_for(kind)
}

/// Ultimatum: Player 1 offers `split` once; Player 2 takes it iff `accept`.
pub fn ultimatum(split: i64, accept: bool) -> RunRecord {
    let responder = if accept { Strategy::AlwaysAccept } else { Strategy::AlwaysReject };
    run(defaults(GameKind::Ultimatum), Strategy::GridProposer { offers: vec![split] }, responder, split as u64)
}

/// A run whose Player 1 cannot be built: a `ProtocolFailure` before any move.
pub fn setup_failure(kind: GameKind) -> RunRecord {
    let s = spec(0, defaults(kind), llm("model-a", Role::Player1), llm("model-b", Role::Player2), 0);
    execute_run(&s, &scripted_env())
}

/// Both players are chat agents answering from `backend`.
pub fn llm_run(game: GameConfig, backend: FixtureBackend, seed: u64) -> RunRecord {
    let s = spec(seed, game, llm("model-a", Role::Player1), llm("model-b", Role::Player2), seed);
    let backend: Arc<dyn ChatBackend> = Arc::new(backend);
    execute_run(&s, &RunEnv { backend: Some(backend), clock: fixed_clock() })
}

/// Two-pass population mean and std.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
