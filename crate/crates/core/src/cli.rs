//! The `arena` command line. [`run_cli`] is the whole program; the binary
//! only wires it to the process streams.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use crate::gateway::{ChatBackend, FixtureBackend, Gateway, GatewayError, ProviderProfile};
use crate::metrics::{self, ExportFormat, GroupMetrics};
use crate::orchestrator::{
    self, Clock, ExecOptions, ExperimentConfig, FixedClock, LogError, RunEnv, RunRecord, SystemClock,
};
use crate::protocol::GameKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_AUTH: i32 = 3;
pub const EXIT_STORAGE: i32 = 4;
pub const EXIT_UNKNOWN_RUN: i32 = 5;
pub const EXIT_DIVERGENCE: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "arena", version, about = "Run and analyze multilingual negotiation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ExecArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run log to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Serve canned replies instead of calling providers.
    #[arg(long)]
    mock: bool,
    /// Fixture directory for --mock; the built-in set is used otherwise.
    #[arg(long, requires = "mock")]
    fixtures: Option<PathBuf>,
    /// Stamp every record with this RFC 3339 instant.
    #[arg(long)]
    fixed_clock: Option<String>,
    /// Worker count; overrides the config.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Stop after this many new records.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupBy {
    Language,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    #[value(alias = "records")]
    StructuredRecords,
    #[value(alias = "heatmap")]
    HeatmapGrid,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ExportFormat::Csv,
            FormatArg::StructuredRecords => ExportFormat::Records,
            FormatArg::HeatmapGrid => ExportFormat::HeatmapGrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GameArg {
    Ultimatum,
    Buysell,
    Resource,
}

impl From<GameArg> for GameKind {
    fn from(g: GameArg) -> Self {
        match g {
            GameArg::Ultimatum => GameKind::Ultimatum,
            GameArg::Buysell => GameKind::BuySell,
            GameArg::Resource => GameKind::ResourceExchange,
        }
    }
}

#[derive(Debug, clap::Args)]
struct SelectArgs {
    #[arg(long)]
    log: PathBuf,
    /// Restrict to one game; all games present otherwise.
    #[arg(long, value_enum)]
    game: Option<GameArg>,
    #[arg(long, value_enum, default_value = "language")]
    group_by: GroupBy,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a fresh experiment matrix into a new run log.
    Run(ExecArgs),
    /// Finish an interrupted experiment, skipping runs already logged.
    Resume(ExecArgs),
    /// Check a config or a run log without running anything.
    Validate {
        #[arg(long, conflicts_with = "log", required_unless_present = "log")]
        config: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print one run turn by turn and re-check it against the engine.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        run_id: String,
    },
    /// Print metric tables (by language) or heatmap grids (by pair).
    Analyze {
        #[command(flatten)]
        select: SelectArgs,
        /// Also write the grouped metrics here.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Write grouped metrics to a file.
    Export {
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
    },
    /// List provider profiles and whether their API keys are set.
    Providers {
        /// Include the providers declared in this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_CONFIG, format!("config error: {e}"))
}

fn storage_err(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_STORAGE, format!("storage error: {e}"))
}

fn log_err(e: LogError) -> Failure {
    match e {
        LogError::Io(io) if io.kind() == io::ErrorKind::NotFound => {
            Failure::new(EXIT_CONFIG, format!("run log not found: {io}"))
        }
        LogError::Io(io) => storage_err(io),
        other => Failure::new(EXIT_CONFIG, other.to_string()),
    }
}

type Out<'a> = &'a mut dyn Write;

/// Runs the program on `args` (including the program name) and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I, out: Out, err: Out) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Run(a) => execute(a, false, out, err),
        Command::Resume(a) => execute(a, true, out, err),
        Command::Validate { config, log } => validate(config, log, out),
        Command::Replay { log, run_id } => replay(&log, &run_id, out),
        Command::Analyze { select, export, format } => analyze(&select, export.as_deref(), format.into(), out),
        Command::Export { select, out: path, format } => export(&select, &path, format.into(), out),
        Command::Providers { config } => providers(config.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn make_clock(fixed: Option<&str>) -> Result<Arc<dyn Clock>, Failure> {
    match fixed {
        Some(ts) => {
            let at: DateTime<Utc> = DateTime::parse_from_rfc3339(ts)
                .map_err(|e| config_err(format!("--fixed-clock `{ts}`: {e}")))?
                .with_timezone(&Utc);
            Ok(Arc::new(FixedClock(at)))
        }
        None => Ok(Arc::new(SystemClock)),
    }
}

fn live_gateway(config: &ExperimentConfig) -> Result<Gateway, Failure> {
    let mut gw =
        Gateway::from_env().map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?.with_jitter_seed(config.seed);
    for p in &config.providers {
        gw.upsert_provider(p.clone()).map_err(config_err)?;
    }
    for m in config.models.iter().filter_map(|m| m.llm.as_ref()) {
        match gw.check_credentials(&m.model_id) {
            Ok(()) => {}
            Err(GatewayError::AuthError(msg)) => return Err(Failure::new(EXIT_AUTH, format!("provider auth: {msg}"))),
            Err(e) => return Err(config_err(e)),
        }
    }
    Ok(gw)
}

fn execute(a: ExecArgs, resume: bool, out: Out, err: Out) -> Result<i32, Failure> {
    let mut config = ExperimentConfig::load(&a.config).map_err(config_err)?;
    if let Some(c) = a.concurrency {
        if c == 0 {
            return Err(config_err("--concurrency must be at least 1"));
        }
        config.concurrency = c;
    }
    let clock = make_clock(a.fixed_clock.as_deref())?;
    let backend: Option<Arc<dyn ChatBackend>> = if !config.uses_llm() {
        None
    } else if a.mock {
        let fixtures = match &a.fixtures {
            Some(dir) => FixtureBackend::from_dir(dir).map_err(|e| config_err(format!("fixtures: {e}")))?,
            None => FixtureBackend::builtin(),
        };
        Some(Arc::new(fixtures))
    } else {
        Some(Arc::new(live_gateway(&config)?))
    };
    let exists_nonempty = fs::metadata(&a.out).map(|m| m.len() > 0).unwrap_or(false);
    if resume && !a.out.exists() {
        return Err(storage_err(format!("{} does not exist; use `run` to start", a.out.display())));
    }
    if !resume && exists_nonempty {
        return Err(storage_err(format!("{} already holds records; use `resume` to continue it", a.out.display())));
    }
    let specs = orchestrator::expand_matrix(&config).map_err(config_err)?;
    let total = specs.len();
    let env = RunEnv { backend, clock };
    let options = ExecOptions { concurrency: config.concurrency, stop_after: a.stop_after };
    let step = (total / 10).max(1);
    let mut seen = 0usize;
    let summary = orchestrator::execute_all(&specs, &env, &a.out, &options, |_| {
        seen += 1;
        if seen.is_multiple_of(step) {
            let _ = writeln!(err, "progress: {seen} new records");
        }
    })
    .map_err(storage_err)?;
    let logged = summary.already_present + summary.completed;
    let _ = writeln!(
        out,
        "matrix: {total} runs; logged: {logged}; new: {}; protocol failures: {} ({} infrastructure)",
        summary.completed, summary.failures, summary.infrastructure_failures
    );
    if logged < total {
        let _ = writeln!(out, "incomplete: {} runs pending; continue with `arena resume`", total - logged);
    }
    Ok(EXIT_OK)
}

fn validate(config: Option<PathBuf>, log: Option<PathBuf>, out: Out) -> Result<i32, Failure> {
    if let Some(path) = config {
        let config = ExperimentConfig::load(&path).map_err(config_err)?;
        let specs = orchestrator::expand_matrix(&config).map_err(config_err)?;
        let _ = writeln!(
            out,
            "config ok: {} models, {} languages, {} games, {} runs",
            config.models.len(),
            config.languages.len(),
            config.games.len(),
            specs.len()
        );
        return Ok(EXIT_OK);
    }
    let path = log.expect("clap requires one of --config or --log");
    let records = orchestrator::read_log(&path).map_err(log_err)?;
    let mut bad = 0;
    let mut ids = std::collections::HashSet::new();
    for (i, r) in records.iter().enumerate() {
        let mut issues = orchestrator::validate_record(r);
        if !ids.insert(r.run_id()) {
            issues.push("duplicate run id".into());
        }
        for issue in &issues {
            let _ = writeln!(out, "record {} ({}): {issue}", i + 1, r.run_id());
        }
        bad += usize::from(!issues.is_empty());
    }
    let _ =
        writeln!(out, "log {}: {} records, {bad} with issues", if bad == 0 { "ok" } else { "invalid" }, records.len());
    Ok(if bad == 0 { EXIT_OK } else { EXIT_DIVERGENCE })
}

fn replay(log: &Path, run_id: &str, out: Out) -> Result<i32, Failure> {
    let records = orchestrator::read_log(log).map_err(log_err)?;
    let record = records
        .iter()
        .find(|r| r.run_id() == run_id)
        .ok_or_else(|| Failure::new(EXIT_UNKNOWN_RUN, format!("no run with id {run_id}")))?;
    let report = orchestrator::replay_record(record);
    let s = &record.spec;
    let _ =
        writeln!(out, "run {} ({} #{}, {})", record.run_id(), s.kind().display_name(), s.repetition, s.framing.name());
    let _ = writeln!(out, "player 1: {}  player 2: {}", record.model_p1(), record.model_p2());
    for (step, turn) in report.steps.iter().zip(&record.transcript) {
        let _ = writeln!(out, "\n[turn {}] {}", step.turn, step.speaker.label());
        for failed in &turn.failed_attempts {
            let _ = writeln!(out, "  rejected attempt: {}", failed.error);
        }
        for line in step.raw_text.lines() {
            let _ = writeln!(out, "  | {line}");
        }
        let _ = writeln!(out, "  => {}", step.action);
    }
    let _ = writeln!(
        out,
        "\noutcome: {:?}, utilities {:?}, winner {:?}, rounds {}",
        record.outcome, record.utilities, record.winner, record.rounds
    );
    if let Some(f) = &record.failure {
        let _ = writeln!(out, "failure: {:?} by {} on turn {}: {}", f.class, f.speaker.label(), f.turn, f.detail);
    }
    if report.divergences.is_empty() {
        let _ = writeln!(out, "replay: consistent");
        Ok(EXIT_OK)
    } else {
        for d in &report.divergences {
            let _ = writeln!(out, "divergence: {d}");
        }
        Ok(EXIT_DIVERGENCE)
    }
}

fn load_selection(select: &SelectArgs) -> Result<(Vec<RunRecord>, Vec<GroupMetrics>), Failure> {
    let mut records = orchestrator::read_log(&select.log).map_err(log_err)?;
    if records.is_empty() {
        return Err(Failure::new(EXIT_CONFIG, format!("no records in {}", select.log.display())));
    }
    if let Some(g) = select.game {
        let kind = GameKind::from(g);
        records.retain(|r| r.kind() == kind);
        if records.is_empty() {
            return Err(Failure::new(EXIT_CONFIG, format!("no records for game {kind}")));
        }
    }
    let fields: &[&str] = match select.group_by {
        GroupBy::Language => &["language"],
        GroupBy::Pair => &["language", "pair"],
    };
    let groups = metrics::aggregate(&records, fields).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    Ok((records, groups))
}

fn write_export(groups: &[GroupMetrics], format: ExportFormat, path: &Path) -> Result<(), Failure> {
    let file = File::create(path).map_err(storage_err)?;
    let mut w = BufWriter::new(file);
    metrics::export(groups, format, &mut w).map_err(|e| match e {
        metrics::ExportError::Io(io) => storage_err(io),
        metrics::ExportError::Metric(m) => Failure::new(EXIT_CONFIG, m.to_string()),
    })?;
    w.flush().map_err(storage_err)
}

fn analyze(select: &SelectArgs, export_to: Option<&Path>, format: ExportFormat, out: Out) -> Result<i32, Failure> {
    let (records, groups) = load_selection(select)?;
    let failures = records.iter().filter(|r| r.is_failure()).count();
    let _ = writeln!(out, "records: {} (protocol failures: {failures})", records.len());
    match select.group_by {
        GroupBy::Language => {
            for kind in GameKind::ALL {
                if let Ok(table) = metrics::metrics_table(&groups, kind) {
                    let _ = writeln!(out);
                    let _ = write!(out, "{}", metrics::render_table(&table));
                }
            }
        }
        GroupBy::Pair => {
            let grids = metrics::heatmap_grids(&groups).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
            let _ = writeln!(out);
            let _ = write!(out, "{}", metrics::render_heatmaps(&grids));
        }
    }
    if let Some(path) = export_to {
        write_export(&groups, format, path)?;
    }
    Ok(EXIT_OK)
}

fn export(select: &SelectArgs, path: &Path, format: ExportFormat, out: Out) -> Result<i32, Failure> {
    let (_, groups) = load_selection(select)?;
    write_export(&groups, format, path)?;
    let _ = writeln!(out, "wrote {} groups to {}", groups.len(), path.display());
    Ok(EXIT_OK)
}

fn providers(config: Option<&Path>, out: Out) -> Result<i32, Failure> {
    let mut profiles = ProviderProfile::builtins();
    if let Some(path) = config {
        let config = ExperimentConfig::load(path).map_err(config_err)?;
        for p in config.providers {
            profiles.retain(|q| q.name != p.name);
            profiles.push(p);
        }
    }
    for p in &profiles {
        let key = std::env::var(&p.api_key_env).map(|v| !v.trim().is_empty()).unwrap_or(false);
        let _ = writeln!(
            out,
            "{}\tprefixes={}\tendpoint={}\tkey {}={}",
            p.name,
            p.model_prefixes.join("|"),
            p.endpoint,
            p.api_key_env,
            if key { "set" } else { "missing" }
        );
    }
    Ok(EXIT_OK)
}
