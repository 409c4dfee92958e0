//! Outcome statistics over run records, grouping, tables and exports.
//!
//! Means and standard deviations are taken over the concatenated per-run
//! values of a group. Standard deviations are population (divide by n).
//! Runs that ended in `ProtocolFailure` are counted only by the failure
//! rate; every other statistic skips them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::LanguageFraming;
use crate::games::{OutcomeKind, Winner};
use crate::orchestrator::RunRecord;
use crate::protocol::{GameKind, Role};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("no records")]
    EmptyInput,
    #[error("every game was a draw; the win rate is undefined")]
    AllDraws,
    #[error("records mix game kinds")]
    MixedGames,
    #[error("unknown grouping field `{0}` (expected game, language, pair, model_p1 or model_p2)")]
    UnknownField(String),
    #[error("heatmap grids need records grouped by model pair")]
    NeedsPairGrouping,
}

/// Streaming mean and squared-deviation sum (Welford), mergeable across
/// shards (Chan et al. pairwise update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn summary(&self) -> Option<MetricSummary> {
        (self.n > 0).then(|| MetricSummary {
            mean: self.mean,
            std: (self.m2.max(0.0) / self.n as f64).sqrt(),
            n: self.n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: u64,
}

/// A proportion with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub successes: u64,
    pub n: u64,
    pub rate: f64,
    /// Binomial standard error `sqrt(p(1-p)/n)`; the ± shown in tables.
    pub std_err: f64,
    /// Population std of the 0/1 outcome array, `sqrt(p(1-p))`.
    pub std: f64,
    /// Sample (n - 1) std of the same array; zero when n = 1.
    pub sample_std: f64,
}

impl RateSummary {
    pub fn new(successes: u64, n: u64) -> Option<Self> {
        if n == 0 {
            return None;
        }
        let rate = successes as f64 / n as f64;
        let var = rate * (1.0 - rate);
        let sample_std = if n > 1 { (var * n as f64 / (n - 1) as f64).sqrt() } else { 0.0 };
        Some(Self { successes, n, rate, std_err: (var / n as f64).sqrt(), std: var.sqrt(), sample_std })
    }
}

/// Mergeable per-group state; every statistic in a [`GroupMetrics`] is
/// derived from it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupAccumulator {
    runs: u64,
    failures: u64,
    infrastructure_failures: u64,
    agreements: u64,
    p1_wins: u64,
    p2_wins: u64,
    initial_offer: Welford,
    payoff_p1: Welford,
    payoff_p2: Welford,
    seller_advantage: Welford,
    buyer_advantage: Welford,
    trade_volume: Welford,
    rounds: Welford,
}

impl GroupAccumulator {
    pub fn push(&mut self, r: &RunRecord) {
        self.runs += 1;
        if let Some(f) = &r.failure {
            self.failures += 1;
            if f.infrastructure {
                self.infrastructure_failures += 1;
            }
        }
        if r.is_failure() {
            return;
        }
        let agreed = r.outcome == OutcomeKind::Agreement;
        self.agreements += u64::from(agreed);
        match r.winner {
            Winner::Player1 => self.p1_wins += 1,
            Winner::Player2 => self.p2_wins += 1,
            Winner::Draw => {}
        }
        self.rounds.push(f64::from(r.rounds));
        let [u1, u2] = r.utilities;
        match r.kind() {
            GameKind::Ultimatum => {
                if let Some(offer) = r.initial_offer {
                    self.initial_offer.push(f64::from(offer));
                }
                self.payoff_p1.push(u1 as f64);
                self.payoff_p2.push(u2 as f64);
            }
            GameKind::BuySell => {
                if let (true, Some([s, b])) = (agreed, r.advantages) {
                    self.seller_advantage.push(s as f64);
                    self.buyer_advantage.push(b as f64);
                }
            }
            GameKind::ResourceExchange => {
                self.payoff_p1.push(u1 as f64);
                self.payoff_p2.push(u2 as f64);
                self.trade_volume.push(r.trade_volume.unwrap_or(0) as f64);
            }
        }
    }

    pub fn merge(&mut self, o: &GroupAccumulator) {
        self.runs += o.runs;
        self.failures += o.failures;
        self.infrastructure_failures += o.infrastructure_failures;
        self.agreements += o.agreements;
        self.p1_wins += o.p1_wins;
        self.p2_wins += o.p2_wins;
        self.initial_offer.merge(&o.initial_offer);
        self.payoff_p1.merge(&o.payoff_p1);
        self.payoff_p2.merge(&o.payoff_p2);
        self.seller_advantage.merge(&o.seller_advantage);
        self.buyer_advantage.merge(&o.buyer_advantage);
        self.trade_volume.merge(&o.trade_volume);
        self.rounds.merge(&o.rounds);
    }

    fn counted(&self) -> u64 {
        self.runs - self.failures
    }

    pub fn finish(&self, key: GroupKey) -> GroupMetrics {
        let game = key.game;
        let payoffs = game != GameKind::BuySell;
        GroupMetrics {
            runs: self.runs,
            failures: self.failures,
            infrastructure_failures: self.infrastructure_failures,
            failure_rate: RateSummary::new(self.failures, self.runs),
            acceptance: RateSummary::new(self.agreements, self.counted()),
            initial_offer: if game == GameKind::Ultimatum { self.initial_offer.summary() } else { None },
            payoff_p1: if payoffs { self.payoff_p1.summary() } else { None },
            payoff_p2: if payoffs { self.payoff_p2.summary() } else { None },
            win_rate_p1: RateSummary::new(self.p1_wins, self.p1_wins + self.p2_wins),
            seller_advantage: self.seller_advantage.summary(),
            buyer_advantage: self.buyer_advantage.summary(),
            trade_volume: self.trade_volume.summary(),
            rounds: self.rounds.summary(),
            key,
        }
    }
}

fn accumulate<'a>(
    records: impl IntoIterator<Item = &'a RunRecord>,
) -> Result<(GameKind, GroupAccumulator), MetricError> {
    let mut acc = GroupAccumulator::default();
    let mut kind = None;
    for r in records {
        match kind {
            None => kind = Some(r.kind()),
            Some(k) if k != r.kind() => return Err(MetricError::MixedGames),
            _ => {}
        }
        acc.push(r);
    }
    kind.map(|k| (k, acc)).ok_or(MetricError::EmptyInput)
}

/// Agreements over decided runs (agreement, rejection, timeout).
pub fn acceptance_rate<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Result<RateSummary, MetricError> {
    let (_, acc) = accumulate(records)?;
    RateSummary::new(acc.agreements, acc.counted()).ok_or(MetricError::EmptyInput)
}

/// Failed runs over all runs.
pub fn failure_rate<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Result<RateSummary, MetricError> {
    let (_, acc) = accumulate(records)?;
    RateSummary::new(acc.failures, acc.runs).ok_or(MetricError::EmptyInput)
}

/// Per-run utility of `player`; rejected and timed-out runs count as their
/// no-deal utilities.
pub fn payoff_stats<'a>(
    records: impl IntoIterator<Item = &'a RunRecord>,
    player: Role,
) -> Result<MetricSummary, MetricError> {
    let mut w = Welford::default();
    let mut kind = None;
    for r in records {
        if *kind.get_or_insert(r.kind()) != r.kind() {
            return Err(MetricError::MixedGames);
        }
        if !r.is_failure() {
            w.push(r.utilities[player.index()] as f64);
        }
    }
    w.summary().ok_or(MetricError::EmptyInput)
}

/// Player 1 wins over decisive runs; draws are left out of the denominator.
pub fn win_rate_p1<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Result<RateSummary, MetricError> {
    let (_, acc) = accumulate(records)?;
    if acc.counted() == 0 {
        return Err(MetricError::EmptyInput);
    }
    RateSummary::new(acc.p1_wins, acc.p1_wins + acc.p2_wins).ok_or(MetricError::AllDraws)
}

/// Player 1's first `split_to_p2`; runs without a first proposal are skipped.
pub fn initial_offer_stats<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Result<MetricSummary, MetricError> {
    let (_, acc) = accumulate(records)?;
    acc.initial_offer.summary().ok_or(MetricError::EmptyInput)
}

/// (seller, buyer) advantage over agreed sales only.
pub fn advantage_stats<'a>(
    records: impl IntoIterator<Item = &'a RunRecord>,
) -> Result<(MetricSummary, MetricSummary), MetricError> {
    let (_, acc) = accumulate(records)?;
    match (acc.seller_advantage.summary(), acc.buyer_advantage.summary()) {
        (Some(s), Some(b)) => Ok((s, b)),
        _ => Err(MetricError::EmptyInput),
    }
}

/// Units moved in both directions per run; no deal counts as zero.
pub fn trade_volume_stats<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Result<MetricSummary, MetricError> {
    let (_, acc) = accumulate(records)?;
    acc.trade_volume.summary().ok_or(MetricError::EmptyInput)
}

pub fn rounds_stats<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> Result<MetricSummary, MetricError> {
    let (_, acc) = accumulate(records)?;
    acc.rounds.summary().ok_or(MetricError::EmptyInput)
}

/// Group identity. Absent fields were not grouped on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub game: GameKind,
    pub language: Option<LanguageFraming>,
    /// (config position, name)
    pub model_p1: Option<(u32, String)>,
    pub model_p2: Option<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub key: GroupKey,
    pub runs: u64,
    pub failures: u64,
    pub infrastructure_failures: u64,
    pub failure_rate: Option<RateSummary>,
    pub acceptance: Option<RateSummary>,
    pub initial_offer: Option<MetricSummary>,
    pub payoff_p1: Option<MetricSummary>,
    pub payoff_p2: Option<MetricSummary>,
    pub win_rate_p1: Option<RateSummary>,
    pub seller_advantage: Option<MetricSummary>,
    pub buyer_advantage: Option<MetricSummary>,
    pub trade_volume: Option<MetricSummary>,
    pub rounds: Option<MetricSummary>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct KeyFields {
    language: bool,
    p1: bool,
    p2: bool,
}

fn parse_fields(fields: &[&str]) -> Result<KeyFields, MetricError> {
    let mut k = KeyFields::default();
    for f in fields {
        match *f {
            "game" => {}
            "language" => k.language = true,
            "model_p1" => k.p1 = true,
            "model_p2" => k.p2 = true,
            "pair" => {
                k.p1 = true;
                k.p2 = true;
            }
            other => return Err(MetricError::UnknownField(other.to_string())),
        }
    }
    Ok(k)
}

fn key_for(r: &RunRecord, k: KeyFields) -> GroupKey {
    GroupKey {
        game: r.kind(),
        language: k.language.then_some(r.spec.framing),
        model_p1: k.p1.then(|| (r.spec.model_index[0], r.model_p1().to_string())),
        model_p2: k.p2.then(|| (r.spec.model_index[1], r.model_p2().to_string())),
    }
}

/// Groups records by game plus `key_fields` and computes every applicable
/// metric per group. Groups come out sorted by key.
pub fn aggregate(records: &[RunRecord], key_fields: &[&str]) -> Result<Vec<GroupMetrics>, MetricError> {
    let fields = parse_fields(key_fields)?;
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut groups: BTreeMap<GroupKey, GroupAccumulator> = BTreeMap::new();
    for r in records {
        groups.entry(key_for(r, fields)).or_default().push(r);
    }
    Ok(groups.into_iter().map(|(k, acc)| acc.finish(k)).collect())
}

/// A rendered table: header plus string cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

/// Column headers of the per-language table for `game`.
pub fn table_columns(game: GameKind) -> &'static [&'static str] {
    match game {
        GameKind::Ultimatum => &[
            "Language",
            "Acceptance Rate",
            "Initial Offer",
            "P1 Payoff",
            "P2 Payoff",
            "P1 Win Rate",
            "Conversation Rounds",
        ],
        GameKind::BuySell => &[
            "Language",
            "Acceptance Rate",
            "Seller Advantage",
            "Buyer Advantage",
            "Conversation Rounds",
            "Player 1 Win Rate",
        ],
        GameKind::ResourceExchange => &[
            "Language",
            "Acceptance Rate (%)",
            "Trade Volume",
            "P1 Payoff",
            "P2 Payoff",
            "P1 Win Rate (%)",
            "Conversation Rounds",
        ],
    }
}

fn fmt_rate(r: Option<RateSummary>) -> String {
    match r {
        Some(r) => format!("{:.2}% ± {:.2}%", 100.0 * r.rate, 100.0 * r.std_err),
        None => "n/a".into(),
    }
}

fn fmt_mean(m: Option<MetricSummary>) -> String {
    match m {
        Some(m) => format!("{:.2} ± {:.2}", m.mean, m.std),
        None => "n/a".into(),
    }
}

fn group_label(g: &GroupMetrics) -> String {
    let mut parts = Vec::new();
    if let Some(l) = g.key.language {
        parts.push(l.name().to_string());
    }
    match (&g.key.model_p1, &g.key.model_p2) {
        (Some((_, a)), Some((_, b))) => parts.push(format!("{a} vs {b}")),
        (Some((_, a)), None) => parts.push(format!("{a} as P1")),
        (None, Some((_, b))) => parts.push(format!("{b} as P2")),
        (None, None) => {}
    }
    if parts.is_empty() {
        "All".into()
    } else {
        parts.join(" / ")
    }
}

/// The summary table for `game`, one row per group of that game.
pub fn metrics_table(groups: &[GroupMetrics], game: GameKind) -> Result<Table, MetricError> {
    let rows: Vec<&GroupMetrics> = groups.iter().filter(|g| g.key.game == game).collect();
    if rows.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut table = Table {
        title: format!("{} Game", game.display_name()),
        columns: table_columns(game).iter().map(|s| s.to_string()).collect(),
        rows: Vec::new(),
        notes: vec!["Cells show mean ± population std; rates show ± binomial standard error.".into()],
    };
    let mut failures = Vec::new();
    for g in rows {
        let label = group_label(g);
        let cells = match game {
            GameKind::Ultimatum => vec![
                label.clone(),
                fmt_rate(g.acceptance),
                fmt_mean(g.initial_offer),
                fmt_mean(g.payoff_p1),
                fmt_mean(g.payoff_p2),
                fmt_rate(g.win_rate_p1),
                fmt_mean(g.rounds),
            ],
            GameKind::BuySell => vec![
                label.clone(),
                fmt_rate(g.acceptance),
                fmt_mean(g.seller_advantage),
                fmt_mean(g.buyer_advantage),
                fmt_mean(g.rounds),
                fmt_rate(g.win_rate_p1),
            ],
            GameKind::ResourceExchange => vec![
                label.clone(),
                fmt_rate(g.acceptance),
                fmt_mean(g.trade_volume),
                fmt_mean(g.payoff_p1),
                fmt_mean(g.payoff_p2),
                fmt_rate(g.win_rate_p1),
                fmt_mean(g.rounds),
            ],
        };
        table.rows.push(cells);
        failures.push(format!("{label} {}/{}", g.failures, g.runs));
    }
    table.notes.push(format!("Protocol failures (excluded above): {}", failures.join(", ")));
    Ok(table)
}

/// Markdown pipe table followed by its notes.
pub fn render_table(t: &Table) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## {}", t.title);
    let _ = writeln!(out);
    let _ = writeln!(out, "| {} |", t.columns.join(" | "));
    let _ = writeln!(out, "|{}", " --- |".repeat(t.columns.len()));
    for row in &t.rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    let _ = writeln!(out);
    for n in &t.notes {
        let _ = writeln!(out, "{n}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMetric {
    WinRateP1,
    PayoffP1,
    PayoffP2,
    SellerAdvantage,
    BuyerAdvantage,
}

impl HeatmapMetric {
    pub fn name(self) -> &'static str {
        match self {
            HeatmapMetric::WinRateP1 => "win_rate_p1",
            HeatmapMetric::PayoffP1 => "payoff_p1",
            HeatmapMetric::PayoffP2 => "payoff_p2",
            HeatmapMetric::SellerAdvantage => "seller_advantage",
            HeatmapMetric::BuyerAdvantage => "buyer_advantage",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            HeatmapMetric::WinRateP1 => "percent",
            _ => "mean",
        }
    }

    /// The per-pair figures drawn for each game.
    pub fn for_game(game: GameKind) -> &'static [HeatmapMetric] {
        match game {
            GameKind::Ultimatum => &[HeatmapMetric::WinRateP1, HeatmapMetric::PayoffP1],
            GameKind::BuySell => &[HeatmapMetric::SellerAdvantage, HeatmapMetric::BuyerAdvantage],
            GameKind::ResourceExchange => &[HeatmapMetric::PayoffP1, HeatmapMetric::PayoffP2],
        }
    }

    fn value(self, g: &GroupMetrics) -> Option<f64> {
        match self {
            HeatmapMetric::WinRateP1 => g.win_rate_p1.map(|r| 100.0 * r.rate),
            HeatmapMetric::PayoffP1 => g.payoff_p1.map(|m| m.mean),
            HeatmapMetric::PayoffP2 => g.payoff_p2.map(|m| m.mean),
            HeatmapMetric::SellerAdvantage => g.seller_advantage.map(|m| m.mean),
            HeatmapMetric::BuyerAdvantage => g.buyer_advantage.map(|m| m.mean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    /// Self-play, never scheduled.
    Diagonal,
    /// No data, or the metric is undefined for this pair.
    Missing,
    Value(f64),
}

/// Rows are Player 1 models, columns Player 2 models, both in config order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub game: GameKind,
    pub language: Option<LanguageFraming>,
    pub metric: HeatmapMetric,
    pub labels: Vec<String>,
    pub cells: Vec<Vec<Cell>>,
}

/// One grid per (game, language, metric) from pair-grouped metrics.
pub fn heatmap_grids(groups: &[GroupMetrics]) -> Result<Vec<HeatmapGrid>, MetricError> {
    if groups.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if groups.iter().any(|g| g.key.model_p1.is_none() || g.key.model_p2.is_none()) {
        return Err(MetricError::NeedsPairGrouping);
    }
    let mut by_slice: BTreeMap<(GameKind, Option<LanguageFraming>), Vec<&GroupMetrics>> = BTreeMap::new();
    for g in groups {
        by_slice.entry((g.key.game, g.key.language)).or_default().push(g);
    }
    let mut models: BTreeMap<(u32, String), ()> = BTreeMap::new();
    for g in groups {
        models.insert(g.key.model_p1.clone().unwrap(), ());
        models.insert(g.key.model_p2.clone().unwrap(), ());
    }
    let models: Vec<(u32, String)> = models.into_keys().collect();
    let labels: Vec<String> = models.iter().map(|(_, n)| n.clone()).collect();
    let mut grids = Vec::new();
    for ((game, language), slice) in by_slice {
        for &metric in HeatmapMetric::for_game(game) {
            let mut cells = vec![vec![Cell::Missing; models.len()]; models.len()];
            for (i, row) in cells.iter_mut().enumerate() {
                row[i] = Cell::Diagonal;
            }
            for g in &slice {
                let i = models.iter().position(|m| Some(m) == g.key.model_p1.as_ref()).unwrap();
                let j = models.iter().position(|m| Some(m) == g.key.model_p2.as_ref()).unwrap();
                if i != j {
                    cells[i][j] = metric.value(g).map_or(Cell::Missing, Cell::Value);
                }
            }
            grids.push(HeatmapGrid { game, language, metric, labels: labels.clone(), cells });
        }
    }
    Ok(grids)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Heatmap grids in the plain-text grid format.
pub fn render_heatmaps(grids: &[HeatmapGrid]) -> String {
    let mut out = String::new();
    for (k, g) in grids.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let language = g.language.map_or("all".to_string(), |l| l.name().to_string());
        let _ = writeln!(
            out,
            "# heatmap game={} language={} metric={} unit={} rows=player1 cols=player2",
            g.game,
            language,
            g.metric.name(),
            g.metric.unit()
        );
        let header: Vec<String> = g.labels.iter().map(|l| csv_field(l)).collect();
        let _ = writeln!(out, "P1\\P2,{}", header.join(","));
        for (label, row) in g.labels.iter().zip(&g.cells) {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Diagonal => String::new(),
                    Cell::Missing => "NA".into(),
                    Cell::Value(v) => format!("{v:.2}"),
                })
                .collect();
            let _ = writeln!(out, "{},{}", csv_field(label), cells.join(","));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    /// One JSON object per group per line.
    Records,
    HeatmapGrid,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "records" | "structured-records" | "jsonl" => Ok(ExportFormat::Records),
            "heatmap" | "heatmap-grid" => Ok(ExportFormat::HeatmapGrid),
            other => Err(format!("unknown export format `{other}` (expected csv, records or heatmap-grid)")),
        }
    }
}

pub const CSV_COLUMNS: &[&str] = &[
    "game",
    "language",
    "model_p1",
    "model_p2",
    "runs",
    "failures",
    "infrastructure_failures",
    "failure_rate",
    "acceptance_rate",
    "acceptance_se",
    "acceptance_std",
    "acceptance_sample_std",
    "acceptance_n",
    "initial_offer_mean",
    "initial_offer_std",
    "initial_offer_n",
    "payoff_p1_mean",
    "payoff_p1_std",
    "payoff_p1_n",
    "payoff_p2_mean",
    "payoff_p2_std",
    "payoff_p2_n",
    "win_rate_p1",
    "win_rate_p1_se",
    "win_rate_p1_n",
    "seller_advantage_mean",
    "seller_advantage_std",
    "seller_advantage_n",
    "buyer_advantage_mean",
    "buyer_advantage_std",
    "buyer_advantage_n",
    "trade_volume_mean",
    "trade_volume_std",
    "trade_volume_n",
    "rounds_mean",
    "rounds_std",
    "rounds_n",
];

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn summary_cells(m: Option<MetricSummary>) -> [String; 3] {
    match m {
        Some(m) => [num(m.mean), num(m.std), m.n.to_string()],
        None => Default::default(),
    }
}

fn csv_row(g: &GroupMetrics) -> Vec<String> {
    let mut row = vec![
        g.key.game.to_string(),
        g.key.language.map(|l| l.name().to_string()).unwrap_or_default(),
        g.key.model_p1.as_ref().map(|m| m.1.clone()).unwrap_or_default(),
        g.key.model_p2.as_ref().map(|m| m.1.clone()).unwrap_or_default(),
        g.runs.to_string(),
        g.failures.to_string(),
        g.infrastructure_failures.to_string(),
        g.failure_rate.map(|r| num(r.rate)).unwrap_or_default(),
    ];
    match g.acceptance {
        Some(a) => row.extend([num(a.rate), num(a.std_err), num(a.std), num(a.sample_std), a.n.to_string()]),
        None => row.extend(std::iter::repeat_n(String::new(), 5)),
    }
    row.extend(summary_cells(g.initial_offer));
    row.extend(summary_cells(g.payoff_p1));
    row.extend(summary_cells(g.payoff_p2));
    match g.win_rate_p1 {
        Some(w) => row.extend([num(w.rate), num(w.std_err), w.n.to_string()]),
        None => row.extend(std::iter::repeat_n(String::new(), 3)),
    }
    row.extend(summary_cells(g.seller_advantage));
    row.extend(summary_cells(g.buyer_advantage));
    row.extend(summary_cells(g.trade_volume));
    row.extend(summary_cells(g.rounds));
    row.iter().map(|c| csv_field(c)).collect()
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot write export: {0}")]
    Io(#[from] io::Error),
}

/// Writes `groups` in `format`. Output is a pure function of the input.
pub fn export(groups: &[GroupMetrics], format: ExportFormat, out: &mut dyn Write) -> Result<(), ExportError> {
    if groups.is_empty() {
        return Err(MetricError::EmptyInput.into());
    }
    match format {
        ExportFormat::Csv => {
            writeln!(out, "{}", CSV_COLUMNS.join(","))?;
            for g in groups {
                writeln!(out, "{}", csv_row(g).join(","))?;
            }
        }
        ExportFormat::Records => {
            for g in groups {
                let line = serde_json::to_string(g).map_err(io::Error::from)?;
                writeln!(out, "{line}")?;
            }
        }
        ExportFormat::HeatmapGrid => out.write_all(render_heatmaps(&heatmap_grids(groups)?).as_bytes())?,
    }
    Ok(())
}
