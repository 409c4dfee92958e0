//! Experiment matrix expansion, the per-run turn loop, parallel batch
//! execution and the append-only run log.
//!
//! Records are JSON objects, one per line. A record is self-contained: every
//! metric and every replay check needs nothing but the record itself.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use ulid::Ulid;

use crate::agents::{
    AgentFailure, AgentKind, AgentSpec, FailedAttempt, FailureReason, LanguageFraming, LlmSpec, Strategy,
    DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::games::{
    new_game, BuySellConfig, ExecutedTrade, GameConfig, GameState, OutcomeKind, ResourceConfig, UltimatumConfig, Winner,
};
use crate::gateway::{ChatBackend, GatewayError, ProviderProfile, RetryPolicy, TokenUsage, DEFAULT_TEMPERATURE};
use crate::protocol::{parse_message, AgentMessage, GameKind, Role, Terms};
use crate::util::stable_hash;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How model pairs are formed. Self-play is never scheduled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Every ordered pair (A, B) with A != B, `runs_per_cell` times.
    #[default]
    Ordered,
    /// Every ordered pair, `2 * runs_per_cell` times.
    OrderedTwice,
}

impl Pairing {
    pub fn repetition_factor(self) -> u32 {
        match self {
            Pairing::Ordered => 1,
            Pairing::OrderedTwice => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmModel {
    pub model_id: String,
}

/// One participant in the tournament: a chat model or a scripted strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted: Option<Strategy>,
}

fn default_one() -> u32 {
    1
}
fn default_runs() -> u32 {
    10
}
fn default_concurrency() -> usize {
    4
}
fn default_languages() -> Vec<LanguageFraming> {
    LanguageFraming::ALL.to_vec()
}
fn default_games() -> Vec<GameKind> {
    GameKind::ALL.to_vec()
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_one")]
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs_per_cell: u32,
    #[serde(default)]
    pub pairing: Pairing,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_languages")]
    pub languages: Vec<LanguageFraming>,
    #[serde(default = "default_games")]
    pub games: Vec<GameKind>,
    /// Shared by every LLM agent in every framing.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub ultimatum: UltimatumConfig,
    #[serde(default)]
    pub buysell: BuySellConfig,
    #[serde(default)]
    pub resource: ResourceConfig,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub providers: Vec<ProviderProfile>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn game_config(&self, kind: GameKind) -> GameConfig {
        match kind {
            GameKind::Ultimatum => GameConfig::Ultimatum(self.ultimatum.clone()),
            GameKind::BuySell => GameConfig::BuySell(self.buysell.clone()),
            GameKind::ResourceExchange => GameConfig::ResourceExchange(self.resource.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.models.len() < 2 {
            return invalid("at least two models are needed to form pairs".into());
        }
        let mut names = HashSet::new();
        for m in &self.models {
            if m.name.trim().is_empty() {
                return invalid("model names must not be empty".into());
            }
            if !names.insert(m.name.as_str()) {
                return invalid(format!("duplicate model name `{}`", m.name));
            }
            match (&m.llm, &m.scripted) {
                (Some(_), None) => {}
                (None, Some(s)) => s.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?,
                _ => return invalid(format!("model `{}` needs exactly one of `llm` or `scripted`", m.name)),
            }
        }
        if self.runs_per_cell == 0 {
            return invalid("runs_per_cell must be at least 1".into());
        }
        if self.concurrency == 0 {
            return invalid("concurrency must be at least 1".into());
        }
        if self.languages.is_empty() || self.games.is_empty() {
            return invalid("languages and games must not be empty".into());
        }
        if self.languages.iter().collect::<HashSet<_>>().len() != self.languages.len() {
            return invalid("duplicate language".into());
        }
        if self.games.iter().collect::<HashSet<_>>().len() != self.games.len() {
            return invalid("duplicate game".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid(format!("temperature {} out of range", self.temperature));
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive".into());
        }
        for kind in &self.games {
            self.game_config(*kind).validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn uses_llm(&self) -> bool {
        self.models.iter().any(|m| m.llm.is_some())
    }

    fn agent_spec(&self, model: &ModelEntry, role: Role, framing: LanguageFraming) -> AgentSpec {
        let kind = match (&model.llm, &model.scripted) {
            (Some(llm), _) => AgentKind::Llm(LlmSpec {
                model_id: llm.model_id.clone(),
                temperature: self.temperature,
                max_output_tokens: self.max_output_tokens,
                framing,
            }),
            (None, Some(s)) => AgentKind::Scripted(s.clone()),
            (None, None) => unreachable!("validated config"),
        };
        AgentSpec { name: model.name.clone(), role, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// ULID whose timestamp field is the matrix index, so lexical order of
    /// ids is matrix order.
    pub run_id: String,
    pub index: u64,
    pub game: GameConfig,
    pub framing: LanguageFraming,
    pub agent_p1: AgentSpec,
    pub agent_p2: AgentSpec,
    /// Positions in the config's model list.
    pub model_index: [u32; 2],
    pub pair_index: u32,
    pub language_index: u32,
    pub game_index: u32,
    pub repetition: u32,
    pub seed: u64,
}

impl RunSpec {
    pub fn kind(&self) -> GameKind {
        self.game.kind()
    }
}

/// Deterministic per-run seed.
pub fn derive_seed(experiment_seed: u64, pair: u32, language: u32, game: u32, repetition: u32) -> u64 {
    stable_hash(&[
        b"run-seed",
        &experiment_seed.to_be_bytes(),
        &pair.to_be_bytes(),
        &language.to_be_bytes(),
        &game.to_be_bytes(),
        &repetition.to_be_bytes(),
    ])
}

fn derive_run_id(experiment_seed: u64, index: u64, seed: u64) -> String {
    let hi = stable_hash(&[b"run-id", &experiment_seed.to_be_bytes(), &index.to_be_bytes()]);
    let lo = stable_hash(&[b"run-id", &seed.to_be_bytes()]);
    let random = ((u128::from(hi) << 64) | u128::from(lo)) & ((1u128 << 80) - 1);
    Ulid::from_parts(index, random).to_string()
}

/// One spec per (ordered pair, language, game, repetition), in that nesting
/// order.
pub fn expand_matrix(config: &ExperimentConfig) -> Result<Vec<RunSpec>, ConfigError> {
    config.validate()?;
    let reps = config.runs_per_cell * config.pairing.repetition_factor();
    let mut specs = Vec::new();
    let mut pair_index = 0u32;
    for (i, a) in config.models.iter().enumerate() {
        for (j, b) in config.models.iter().enumerate() {
            if i == j {
                continue;
            }
            for (li, lang) in config.languages.iter().enumerate() {
                for (gi, kind) in config.games.iter().enumerate() {
                    for rep in 0..reps {
                        let index = specs.len() as u64;
                        let seed = derive_seed(config.seed, pair_index, li as u32, gi as u32, rep);
                        specs.push(RunSpec {
                            run_id: derive_run_id(config.seed, index, seed),
                            index,
                            game: config.game_config(*kind),
                            framing: *lang,
                            agent_p1: config.agent_spec(a, Role::Player1, *lang),
                            agent_p2: config.agent_spec(b, Role::Player2, *lang),
                            model_index: [i as u32, j as u32],
                            pair_index,
                            language_index: li as u32,
                            game_index: gi as u32,
                            repetition: rep,
                            seed,
                        });
                    }
                }
            }
            pair_index += 1;
        }
    }
    Ok(specs)
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

fn timestamp(clock: &dyn Clock) -> String {
    clock.now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// One accepted message plus the replies discarded before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: u32,
    pub message: AgentMessage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_attempts: Vec<FailedAttempt>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    /// The agent never produced a usable reply.
    ParseExhausted,
    GatewayExhausted,
    GatewayAuth,
    GatewayBadRequest,
    ScriptedIllegal,
    /// The engine refused a message the agent considered legal.
    EngineRejected,
    /// The agent could not be constructed.
    AgentSetup,
}

impl FailureClass {
    /// Infrastructure failures say nothing about negotiation behavior.
    pub fn is_infrastructure(self) -> bool {
        matches!(
            self,
            FailureClass::GatewayExhausted
                | FailureClass::GatewayAuth
                | FailureClass::GatewayBadRequest
                | FailureClass::AgentSetup
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub class: FailureClass,
    pub infrastructure: bool,
    pub speaker: Role,
    pub turn: u32,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attempts: Vec<FailedAttempt>,
}

impl FailureInfo {
    fn new(class: FailureClass, speaker: Role, turn: u32, detail: String, attempts: Vec<FailedAttempt>) -> Self {
        Self { class, infrastructure: class.is_infrastructure(), speaker, turn, detail, attempts }
    }

    fn from_agent(f: AgentFailure, speaker: Role, turn: u32) -> Self {
        let class = match &f.reason {
            FailureReason::ParseExhausted { .. } => FailureClass::ParseExhausted,
            FailureReason::ScriptedIllegal { .. } => FailureClass::ScriptedIllegal,
            FailureReason::Gateway { error } => match error {
                GatewayError::Exhausted { .. } => FailureClass::GatewayExhausted,
                GatewayError::AuthError(_) => FailureClass::GatewayAuth,
                GatewayError::BadRequest(_) | GatewayError::DuplicateProfile(_) => FailureClass::GatewayBadRequest,
            },
        };
        Self::new(class, speaker, turn, f.reason.to_string(), f.attempts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub spec: RunSpec,
    pub transcript: Vec<TurnRecord>,
    pub outcome: OutcomeKind,
    /// Ultimatum: pool shares. Buy-Sell: (seller, buyer) advantage on a sale,
    /// else zeros. Resource exchange: goal scores of final holdings.
    pub utilities: [i64; 2],
    pub winner: Winner,
    pub agreed_terms: Option<Terms>,
    pub proposer: Option<Role>,
    /// Ultimatum: `split_to_p2` of Player 1's first proposal.
    pub initial_offer: Option<u32>,
    /// Buy-Sell: agreed price.
    pub price: Option<u32>,
    /// Buy-Sell: (seller, buyer) advantage on a sale.
    pub advantages: Option<[i64; 2]>,
    /// Resource exchange: executed trades.
    pub trades: Vec<ExecutedTrade>,
    /// Resource exchange: units that changed hands, both directions.
    pub trade_volume: Option<u64>,
    pub rounds: u32,
    pub failure: Option<FailureInfo>,
    pub usage: TokenUsage,
    pub started_at: String,
    pub finished_at: String,
}

impl RunRecord {
    pub fn run_id(&self) -> &str {
        &self.spec.run_id
    }

    pub fn kind(&self) -> GameKind {
        self.spec.kind()
    }

    pub fn model_p1(&self) -> &str {
        &self.spec.agent_p1.name
    }

    pub fn model_p2(&self) -> &str {
        &self.spec.agent_p2.name
    }

    pub fn is_failure(&self) -> bool {
        self.outcome == OutcomeKind::ProtocolFailure
    }

    /// Copy with timestamps blanked, for comparisons across executions.
    pub fn without_timestamps(&self) -> RunRecord {
        let mut r = self.clone();
        r.started_at.clear();
        r.finished_at.clear();
        r
    }
}

/// Everything a run needs besides its spec.
#[derive(Clone)]
pub struct RunEnv {
    pub backend: Option<Arc<dyn ChatBackend>>,
    pub clock: Arc<dyn Clock>,
}

impl RunEnv {
    pub fn scripted(clock: Arc<dyn Clock>) -> Self {
        Self { backend: None, clock }
    }
}

/// Initial offer, price, advantages, trades and trade volume.
type Derived = (Option<u32>, Option<u32>, Option<[i64; 2]>, Vec<ExecutedTrade>, Option<u64>);

/// Derived record fields for a finished game.
fn summarize(state: &GameState) -> Derived {
    let outcome = state.outcome.as_ref().expect("terminal state");
    let agreed = outcome.kind == OutcomeKind::Agreement;
    match state.kind() {
        GameKind::Ultimatum => {
            let initial = match &state.initial_offer {
                Some(Terms::Split { split_to_p2 }) => Some(*split_to_p2),
                _ => None,
            };
            (initial, None, None, Vec::new(), None)
        }
        GameKind::BuySell => match (&outcome.terms, agreed) {
            (Some(Terms::Price { price }), true) => (None, Some(*price), Some(outcome.utilities), Vec::new(), None),
            _ => (None, None, None, Vec::new(), None),
        },
        GameKind::ResourceExchange => {
            let trades = state.executed_trades();
            let volume = trades.iter().map(ExecutedTrade::volume).sum();
            (None, None, None, trades, Some(volume))
        }
    }
}

/// Plays one run to the end. Never fails: agent and engine errors become a
/// `ProtocolFailure` outcome with a classified [`FailureInfo`].
pub fn execute_run(spec: &RunSpec, env: &RunEnv) -> RunRecord {
    let started_at = timestamp(env.clock.as_ref());
    let mut transcript = Vec::new();
    let mut usage = TokenUsage::default();
    let mut failure = None;

    let mut state = match new_game(spec.game.clone(), spec.seed) {
        Ok(s) => s,
        Err(e) => {
            // Config snapshots are validated at expansion; a hand-made spec can
            // still be broken. Play nothing and record the failure.
            failure = Some(FailureInfo::new(FailureClass::AgentSetup, Role::Player1, 0, e.to_string(), Vec::new()));
            GameState {
                config: spec.game.clone(),
                seed: spec.seed,
                phase: crate::games::Phase::AwaitingProposal,
                current_speaker: Role::Player1,
                transcript: Vec::new(),
                pending_offer: None,
                turn: 0,
                outcome: None,
                initial_offer: None,
            }
            .abandon()
        }
    };

    let agents = [
        spec.agent_p1.instantiate(&spec.game, env.backend.as_ref()),
        spec.agent_p2.instantiate(&spec.game, env.backend.as_ref()),
    ];
    if failure.is_none() {
        if let Some((i, Err(e))) = agents.iter().enumerate().find(|(_, a)| a.is_err()) {
            let role = if i == 0 { Role::Player1 } else { Role::Player2 };
            failure = Some(FailureInfo::new(FailureClass::AgentSetup, role, 0, e.to_string(), Vec::new()));
            state = state.abandon();
        }
    }

    while !state.is_terminal() {
        let role = state.current_speaker;
        let agent = agents[role.index()].as_ref().expect("agents checked above");
        match agent.next_message(&state.view(role)) {
            Ok(out) => {
                usage.add(out.usage);
                match state.step(out.message.clone()) {
                    Ok(next) => {
                        transcript.push(TurnRecord {
                            turn: state.turn,
                            message: out.message,
                            failed_attempts: out.failed_attempts,
                            usage: out.usage,
                        });
                        state = next;
                    }
                    Err(e) => {
                        let mut attempts = out.failed_attempts;
                        attempts.push(FailedAttempt { raw_text: out.message.raw_text, error: e.to_string() });
                        failure = Some(FailureInfo::new(
                            FailureClass::EngineRejected,
                            role,
                            state.turn,
                            e.to_string(),
                            attempts,
                        ));
                        state = state.abandon();
                    }
                }
            }
            Err(f) => {
                usage.add(f.usage);
                failure = Some(FailureInfo::from_agent(f, role, state.turn));
                state = state.abandon();
            }
        }
    }

    let outcome = state.outcome.clone().expect("terminal state");
    let (initial_offer, price, advantages, trades, trade_volume) = summarize(&state);
    RunRecord {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        transcript,
        outcome: outcome.kind,
        utilities: outcome.utilities,
        winner: outcome.winner(),
        agreed_terms: outcome.terms.clone(),
        proposer: outcome.proposer,
        initial_offer,
        price,
        advantages,
        trades,
        trade_volume,
        rounds: outcome.rounds_used,
        failure,
        usage,
        started_at,
        finished_at: timestamp(env.clock.as_ref()),
    }
}

/// Runs `specs` on `concurrency` workers and hands each record to `sink` on
/// the calling thread as it completes. Stops early if `sink` fails.
pub fn execute_stream<E>(
    specs: &[&RunSpec],
    env: &RunEnv,
    concurrency: usize,
    mut sink: impl FnMut(RunRecord) -> Result<(), E>,
) -> Result<usize, E> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let workers = concurrency.max(1).min(specs.len().max(1));
    let mut delivered = 0;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<RunRecord>(workers * 2);
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(spec) = specs.get(i) else { break };
                    if tx.send(execute_run(spec, env)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        for record in rx {
            if let Err(e) = sink(record) {
                stop.store(true, Ordering::Relaxed);
                return Err(e);
            }
            delivered += 1;
        }
        Ok(delivered)
    })
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("run log I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record on line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("unsupported schema_version {found} on line {line} (this build reads version {SCHEMA_VERSION})")]
    UnsupportedVersion { line: usize, found: u64 },
}

/// Parses one log line, checking the schema version before the layout.
pub fn parse_record_line(text: &str, line: usize) -> Result<RunRecord, LogError> {
    let value: Value = serde_json::from_str(text).map_err(|e| LogError::Malformed { line, detail: e.to_string() })?;
    match value.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(found) => return Err(LogError::UnsupportedVersion { line, found }),
        None => return Err(LogError::Malformed { line, detail: "missing schema_version".into() }),
    }
    serde_json::from_value(value).map_err(|e| LogError::Malformed { line, detail: e.to_string() })
}

/// Reads every record; any bad line is an error carrying its 1-based number.
pub fn read_log(path: &Path) -> Result<Vec<RunRecord>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record_line(&line, i + 1)?);
    }
    Ok(records)
}

/// Prepares `path` for appending and returns the run ids it already holds.
/// An unterminated last line (a write cut short) is dropped; any other bad
/// line is an error.
pub fn recover_log(path: &Path) -> Result<HashSet<String>, LogError> {
    if !path.exists() {
        File::create(path)?;
        return Ok(HashSet::new());
    }
    let bytes = fs::read(path)?;
    let complete_len = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if complete_len < bytes.len() {
        let tail = String::from_utf8_lossy(&bytes[complete_len..]);
        if serde_json::from_str::<RunRecord>(&tail).is_ok() {
            OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
        } else {
            log::warn!("dropping truncated final line of {}", path.display());
            OpenOptions::new().write(true).open(path)?.set_len(complete_len as u64)?;
        }
    }
    Ok(read_log(path)?.into_iter().map(|r| r.spec.run_id).collect())
}

#[derive(Debug, Error)]
#[error("cannot write run log: {0}")]
pub struct StorageError(#[from] pub io::Error);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecSummary {
    pub already_present: usize,
    pub completed: usize,
    pub failures: usize,
    pub infrastructure_failures: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub concurrency: usize,
    /// Stop after this many new records; simulates an interrupted session.
    pub stop_after: Option<usize>,
}

/// Runs every spec whose id is not yet in the log at `log_path`, appending
/// records as they finish. Safe to call again after an interruption.
pub fn execute_all(
    specs: &[RunSpec],
    env: &RunEnv,
    log_path: &Path,
    options: &ExecOptions,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<ExecSummary, StorageError> {
    let done = recover_log(log_path).map_err(|e| match e {
        LogError::Io(io) => StorageError(io),
        other => StorageError(io::Error::new(io::ErrorKind::InvalidData, other.to_string())),
    })?;
    let mut pending: Vec<&RunSpec> = specs.iter().filter(|s| !done.contains(&s.run_id)).collect();
    let mut summary = ExecSummary { already_present: specs.len() - pending.len(), ..Default::default() };
    if let Some(limit) = options.stop_after {
        pending.truncate(limit);
    }
    let mut file = OpenOptions::new().append(true).open(log_path)?;
    execute_stream(&pending, env, options.concurrency, |record| -> Result<(), StorageError> {
        let mut line = serde_json::to_string(&record).map_err(io::Error::from)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()?;
        summary.completed += 1;
        if let Some(f) = &record.failure {
            summary.failures += 1;
            if f.infrastructure {
                summary.infrastructure_failures += 1;
            }
        }
        on_record(&record);
        Ok(())
    })?;
    file.sync_all()?;
    Ok(summary)
}

/// Structural checks a record must pass regardless of how it was produced.
pub fn validate_record(r: &RunRecord) -> Vec<String> {
    let mut issues = Vec::new();
    let kind = r.kind();
    if r.rounds as usize != r.transcript.len() {
        issues.push(format!("rounds {} but transcript has {} messages", r.rounds, r.transcript.len()));
    }
    if r.rounds > r.spec.game.max_turns() {
        issues.push(format!("rounds {} exceed max_turns {}", r.rounds, r.spec.game.max_turns()));
    }
    if r.failure.is_some() != r.is_failure() {
        issues.push("failure info present iff outcome is protocol_failure".into());
    }
    if (r.agreed_terms.is_some()) != (r.outcome == OutcomeKind::Agreement) {
        issues.push("agreed terms present iff outcome is agreement".into());
    }
    if let Some(t) = &r.agreed_terms {
        if t.kind() != kind {
            issues.push(format!("agreed terms for {} in a {} run", t.kind(), kind));
        }
    }
    let [u1, u2] = r.utilities;
    let winner = match u1.cmp(&u2) {
        std::cmp::Ordering::Greater => Winner::Player1,
        std::cmp::Ordering::Less => Winner::Player2,
        std::cmp::Ordering::Equal => Winner::Draw,
    };
    if winner != r.winner {
        issues.push(format!("winner {:?} does not match utilities {:?}", r.winner, r.utilities));
    }
    match (&r.spec.game, r.outcome) {
        (GameConfig::Ultimatum(c), OutcomeKind::Agreement) => {
            if u1 + u2 != i64::from(c.pool) {
                issues.push(format!("ultimatum utilities {:?} do not sum to pool {}", r.utilities, c.pool));
            }
        }
        (GameConfig::BuySell(c), OutcomeKind::Agreement) => {
            if u1 + u2 != i64::from(c.buyer_max) - i64::from(c.seller_min) {
                issues.push(format!("advantages {:?} do not sum to the bargaining zone", r.utilities));
            }
            if r.price.is_none() || r.advantages != Some(r.utilities) {
                issues.push("buy-sell agreement needs price and advantages".into());
            }
        }
        (GameConfig::ResourceExchange(c), _) => {
            if c.goal_p1.weights.is_none() && c.goal_p2.weights.is_none() && (u1 + u2) as u64 != c.total_endowment() {
                issues.push(format!("resource utilities {:?} do not sum to {}", r.utilities, c.total_endowment()));
            }
            if r.trade_volume.is_none() {
                issues.push("resource record needs trade_volume".into());
            }
        }
        (_, _) => {
            if r.utilities != [0, 0] {
                issues.push(format!("no-deal utilities must be zero, found {:?}", r.utilities));
            }
        }
    }
    if kind != GameKind::Ultimatum && r.initial_offer.is_some() {
        issues.push("initial_offer is only recorded for ultimatum".into());
    }
    if kind != GameKind::BuySell && (r.price.is_some() || r.advantages.is_some()) {
        issues.push("price is only recorded for buy-sell".into());
    }
    if kind != GameKind::ResourceExchange && (!r.trades.is_empty() || r.trade_volume.is_some()) {
        issues.push("trades are only recorded for resource exchange".into());
    }
    for (i, t) in r.transcript.iter().enumerate() {
        if t.turn as usize != i {
            issues.push(format!("transcript entry {i} has turn {}", t.turn));
        }
        let expected = if i % 2 == 0 { Role::Player1 } else { Role::Player2 };
        if t.message.speaker != expected {
            issues.push(format!("turn {i} spoken by {:?}", t.message.speaker));
        }
    }
    issues
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayStep {
    pub turn: u32,
    pub speaker: Role,
    pub raw_text: String,
    pub action: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayReport {
    pub steps: Vec<ReplayStep>,
    pub divergences: Vec<String>,
}

/// Re-parses every recorded reply, re-applies it to a fresh engine and
/// compares the result with what the record claims.
pub fn replay_record(r: &RunRecord) -> ReplayReport {
    let mut report = ReplayReport { divergences: validate_record(r), ..Default::default() };
    let mut state = match new_game(r.spec.game.clone(), r.spec.seed) {
        Ok(s) => s,
        Err(e) => {
            report.divergences.push(format!("game config no longer valid: {e}"));
            return report;
        }
    };
    for t in &r.transcript {
        let msg = &t.message;
        report.steps.push(ReplayStep {
            turn: t.turn,
            speaker: msg.speaker,
            raw_text: msg.raw_text.clone(),
            action: msg.action.to_string(),
        });
        match parse_message(&msg.raw_text, msg.speaker, &state.bounds()) {
            Ok(parsed) if parsed == *msg => {}
            Ok(parsed) => report
                .divergences
                .push(format!("turn {}: raw text parses to `{}`, record says `{}`", t.turn, parsed.action, msg.action)),
            Err(e) => report.divergences.push(format!("turn {}: raw text no longer parses: {e}", t.turn)),
        }
        match state.step(msg.clone()) {
            Ok(next) => state = next,
            Err(e) => {
                report.divergences.push(format!("turn {}: engine rejects recorded move: {e}", t.turn));
                return report;
            }
        }
    }
    if !state.is_terminal() {
        if r.is_failure() {
            state = state.abandon();
        } else {
            report.divergences.push("transcript ends before the game does".into());
            return report;
        }
    }
    let outcome = state.outcome.clone().expect("terminal");
    let (initial_offer, price, advantages, trades, trade_volume) = summarize(&state);
    let mut check = |name: &str, ok: bool, ours: String, theirs: String| {
        if !ok {
            report.divergences.push(format!("{name}: engine gives {ours}, record says {theirs}"));
        }
    };
    check("outcome", outcome.kind == r.outcome, format!("{:?}", outcome.kind), format!("{:?}", r.outcome));
    check(
        "utilities",
        outcome.utilities == r.utilities,
        format!("{:?}", outcome.utilities),
        format!("{:?}", r.utilities),
    );
    check("rounds", outcome.rounds_used == r.rounds, outcome.rounds_used.to_string(), r.rounds.to_string());
    check("terms", outcome.terms == r.agreed_terms, format!("{:?}", outcome.terms), format!("{:?}", r.agreed_terms));
    check(
        "initial_offer",
        initial_offer == r.initial_offer,
        format!("{initial_offer:?}"),
        format!("{:?}", r.initial_offer),
    );
    check("price", price == r.price, format!("{price:?}"), format!("{:?}", r.price));
    check("advantages", advantages == r.advantages, format!("{advantages:?}"), format!("{:?}", r.advantages));
    check("trades", trades == r.trades, format!("{trades:?}"), format!("{:?}", r.trades));
    check("trade_volume", trade_volume == r.trade_volume, format!("{trade_volume:?}"), format!("{:?}", r.trade_volume));
    report.divergences.dedup();
    report
}
