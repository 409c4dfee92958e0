//! Players: prompt construction, the [`Agent`] trait, scripted strategies
//! and the LLM-backed agent.
//!
//! Scripted strategies speak in "offer levels" so one parameter set works in
//! every game:
//!
//! * Ultimatum: units conceded to the opponent.
//! * Buy-Sell: the price itself.
//! * Resource exchange: the opponent's net gain in resource units. Positive
//!   levels give away the proposer's most-held kind, negative levels take the
//!   opponent's most-held kind, zero is a one-for-one swap.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::games::{apply_trades, ExecutedTrade, GameConfig, Phase, PrivateInfo, PublicInfo, ResourceGoal, StateView};
use crate::gateway::{ChatBackend, ChatMessage, ChatRequest, GatewayError, TokenUsage, DEFAULT_TEMPERATURE};
use crate::protocol::{parse_message, Action, AgentMessage, GameKind, ResourceBundle, Role, Terms};
use crate::util::stable_hash;

/// Attempts an LLM agent gets per turn: the first reply plus two corrections.
pub const LLM_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageFraming {
    English,
    Gujarati,
    Hindi,
    Marwadi,
    Punjabi,
}

impl LanguageFraming {
    /// Baseline first, then alphabetical.
    pub const ALL: [LanguageFraming; 5] = [
        LanguageFraming::English,
        LanguageFraming::Gujarati,
        LanguageFraming::Hindi,
        LanguageFraming::Marwadi,
        LanguageFraming::Punjabi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LanguageFraming::English => "English",
            LanguageFraming::Gujarati => "Gujarati",
            LanguageFraming::Hindi => "Hindi",
            LanguageFraming::Marwadi => "Marwadi",
            LanguageFraming::Punjabi => "Punjabi",
        }
    }

    /// `None` for the English baseline.
    pub fn persona_clause(self) -> Option<String> {
        match self {
            LanguageFraming::English => None,
            other => Some(format!("You speak and bargain only in {}. Negotiate accordingly.", other.name())),
        }
    }
}

impl fmt::Display for LanguageFraming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LanguageFraming {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageFraming::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown language `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_prompt: String,
    /// Contains the `{transcript}` and `{situation}` placeholders.
    pub turn_prompt_template: String,
}

const TURN_TEMPLATE: &str =
    "Messages so far:\n{transcript}\n\n{situation}\nReply with a <rationale> and exactly one action tag.";

fn player_name(role: Role) -> &'static str {
    match role {
        Role::Player1 => "Player 1",
        Role::Player2 => "Player 2",
    }
}

fn describe_bundle(b: &ResourceBundle) -> String {
    if b.is_empty() {
        return "nothing".to_string();
    }
    b.iter().map(|(k, v)| format!("{v} {k}")).collect::<Vec<_>>().join(", ")
}

fn shared_turn_rules(max_turns: u32) -> [String; 4] {
    [
        "Player 1 speaks first. Players alternate, one message per turn.".to_string(),
        "When a proposal is pending you may accept it, reject it, or make a counter-proposal that replaces it."
            .to_string(),
        "A non-final rejection discards the pending proposal and the other player proposes again.".to_string(),
        format!("The game ends without a deal if no proposal is accepted within {max_turns} messages in total."),
    ]
}

/// System and turn prompts for `role` in `config`, framed by `framing`.
///
/// Rules are always in English. Only the viewing player's private values
/// appear. A non-English framing appends exactly one paragraph, the persona
/// clause, so removing it yields the baseline prompt byte for byte.
pub fn build_prompt(config: &GameConfig, role: Role, framing: LanguageFraming) -> PromptBundle {
    let me = player_name(role);
    let mut rules: Vec<String> = Vec::new();
    let mut private: Vec<String> = Vec::new();
    let objective: String;
    let propose_tag: &str;
    let intro: String;
    match config {
        GameConfig::Ultimatum(c) => {
            intro = format!("You are {me} in a two-player negotiation called the Ultimatum Game.");
            rules.push(format!("Player 1 and Player 2 divide a pool of {} units.", c.pool));
            rules.push(
                "A proposal names split_to_p2, the number of units Player 2 receives; Player 1 receives the rest."
                    .into(),
            );
            rules.extend(shared_turn_rules(c.max_turns));
            rules.push("An accepted proposal ends the game and the pool is divided as proposed.".into());
            rules.push(
                "A final rejection, or the end of the game without a deal, leaves both players with zero.".into(),
            );
            objective = "Receive as many units as you can.".into();
            propose_tag = "<propose split_to_p2=\"N\"/>   N = units for Player 2";
        }
        GameConfig::BuySell(c) => {
            let part = match role {
                Role::Player1 => "the seller",
                Role::Player2 => "the buyer",
            };
            intro = format!("You are {me}, {part}, in a two-player negotiation called the Buy-Sell Game.");
            rules.push(
                "Player 1 is the seller and Player 2 is the buyer of a single item. Prices are whole coins.".into(),
            );
            rules.push("A proposal names a price.".into());
            rules.extend(shared_turn_rules(c.max_turns));
            rules.push("An accepted proposal ends the game and the item is sold at that price.".into());
            rules.push(
                "Each side has a private limit: the seller's minimum acceptable price and the buyer's maximum \
                 willingness to pay. Neither limit is shown to the other player."
                    .into(),
            );
            rules.push(
                "A final rejection, or the end of the game without a deal, means no sale and no gain for either side."
                    .into(),
            );
            match role {
                Role::Player1 => {
                    private.push(format!(
                        "Your minimum acceptable price is {v} coins (seller_min={v}). Selling at price P gains you P - {v}.",
                        v = c.seller_min
                    ));
                    objective = "Sell at as high a price as you can.".into();
                }
                Role::Player2 => {
                    private.push(format!(
                        "Your maximum willingness to pay is {v} coins (buyer_max={v}). Buying at price P gains you {v} - P.",
                        v = c.buyer_max
                    ));
                    objective = "Buy at as low a price as you can.".into();
                }
            }
            propose_tag = "<propose price=\"N\"/>   N = price in coins";
        }
        GameConfig::ResourceExchange(c) => {
            intro = format!("You are {me} in a two-player negotiation called the Resource Exchange Game.");
            let kinds = c.kinds().join(", ");
            rules.push(format!("Players hold resources of the kinds {kinds}. Holdings are known to both players:"));
            rules.push(format!("Player 1 holds {}.", describe_bundle(&c.endowment_p1)));
            rules.push(format!("Player 2 holds {}.", describe_bundle(&c.endowment_p2)));
            rules.push(
                "A proposal names what the proposer gives and what the proposer takes in return. give=\"X:5\" \
                 take=\"Y:2\" means the proposer hands over 5 X and receives 2 Y. One side may be empty, not both."
                    .into(),
            );
            rules.push("Nobody can give more than they hold or take more than the other player holds.".into());
            rules.extend(shared_turn_rules(c.max_turns));
            rules.push("An accepted proposal executes the trade once and ends the game.".into());
            rules.push("A final rejection, or the end of the game without a deal, leaves holdings unchanged.".into());
            let goal = c.goal(role);
            if goal.weights.is_some() {
                private.push(format!("Your goal is private: {}.", goal.describe()));
            }
            objective = capitalize(&goal.describe()) + ".";
            propose_tag = "<propose give=\"KIND:N,KIND:N\" take=\"KIND:N\"/>   what you give and what you take";
        }
    }

    let mut sections = vec![intro];
    sections.push(format!("Rules:\n{}", bullet_list(&rules)));
    if !private.is_empty() {
        sections.push(format!("Your private information:\n{}", bullet_list(&private)));
    }
    sections.push(format!("Your objective:\n- {objective}"));
    sections.push(format!(
        "Reply format:\nWrite a brief rationale, then exactly one action tag.\n\
         <rationale>your brief rationale</rationale>\n\
         then one of:\n\
         {propose_tag}\n\
         <accept/>\n\
         <reject/>\n\
         <reject final=\"true\"/>   ends the game\n\
         Tags, attribute names and numbers must be plain ASCII; write numbers with the digits 0-9.\n\
         Do not write out your internal chain of thought. Give only a short rationale summary of at most 500 characters."
    ));
    if let Some(clause) = framing.persona_clause() {
        sections.push(clause);
    }
    PromptBundle { system_prompt: sections.join("\n\n"), turn_prompt_template: TURN_TEMPLATE.to_string() }
}

fn bullet_list(items: &[String]) -> String {
    items.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn describe_terms(terms: &Terms, proposer: Role, view: &StateView) -> String {
    match terms {
        Terms::Split { split_to_p2 } => match view.public {
            PublicInfo::Pool(pool) => format!(
                "Player 1 receives {} units and Player 2 receives {split_to_p2} units",
                pool.saturating_sub(*split_to_p2)
            ),
            _ => format!("Player 2 receives {split_to_p2} units"),
        },
        Terms::Price { price } => format!("the item is sold for {price} coins"),
        Terms::Trade { give, take } => {
            format!("{} gives {} and receives {}", player_name(proposer), describe_bundle(give), describe_bundle(take))
        }
    }
}

/// Fills the turn template for `view`.
pub fn render_turn_prompt(bundle: &PromptBundle, view: &StateView) -> String {
    let transcript = if view.transcript.is_empty() {
        "(none yet)".to_string()
    } else {
        view.transcript
            .iter()
            .map(|m| format!("{}: {}", player_name(m.speaker), m.raw_text.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let header = format!("This is message {} of at most {}.", view.turn + 1, view.max_turns);
    let situation = match &view.pending_offer {
        Some(offer) if view.phase == Phase::AwaitingResponse => format!(
            "{header} Pending proposal from {}: {}. Accept it, reject it, or make a counter-proposal.",
            player_name(offer.from),
            describe_terms(&offer.terms, offer.from, view)
        ),
        _ => format!("{header} There is no pending proposal, so make a proposal."),
    };
    bundle.turn_prompt_template.replace("{transcript}", &transcript).replace("{situation}", &situation)
}

/// One reply that could not be used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub raw_text: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnOutput {
    pub message: AgentMessage,
    pub failed_attempts: Vec<FailedAttempt>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum FailureReason {
    #[error("gateway error: {error}")]
    Gateway { error: GatewayError },
    #[error("no usable reply after {attempts} attempts: {last_error}")]
    ParseExhausted { attempts: u32, last_error: String },
    #[error("scripted strategy produced an illegal move: {detail}")]
    ScriptedIllegal { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{reason}")]
pub struct AgentFailure {
    pub reason: FailureReason,
    pub attempts: Vec<FailedAttempt>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("invalid parameters for strategy `{name}`: {detail}")]
    InvalidParams { name: String, detail: String },
    #[error("agent `{0}` needs a chat backend")]
    MissingBackend(String),
}

pub trait Agent: Send + Sync {
    /// Produces the next message for the player `view` belongs to. The view
    /// must be non-terminal with that player to move.
    fn next_message(&self, view: &StateView) -> Result<TurnOutput, AgentFailure>;
}

/// Deterministic strategies addressable by name in experiment configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Accepts iff the pending offer is worth at least `t` to it, otherwise
    /// rejects with `final`. Proposes terms worth exactly `t` to itself.
    ThresholdResponder {
        t: i64,
    },
    /// Its k-th proposal is `offers[min(k, len - 1)]`.
    GridProposer {
        offers: Vec<i64>,
    },
    /// Its k-th proposal (k from 0) is `start + step * k`.
    ConcessionProposer {
        start: i64,
        step: i64,
    },
    /// Always proposes `price`.
    FixedPriceSeller {
        price: i64,
    },
    /// Accepts anything at least as good as no deal; proposes its own limit.
    ReservationBuyer,
    /// Uniform over legal moves, seeded.
    RandomLegal {
        seed: u64,
    },
    AlwaysAccept,
    /// Rejects with `final` whenever it responds.
    AlwaysReject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StrategyInfo {
    pub name: &'static str,
    pub params: &'static str,
    pub summary: &'static str,
}

pub fn scripted_strategies() -> &'static [StrategyInfo] {
    const CATALOG: &[StrategyInfo] = &[
        StrategyInfo {
            name: "threshold_responder",
            params: "t: integer",
            summary: "accept iff the offer is worth >= t, else reject with final",
        },
        StrategyInfo {
            name: "grid_proposer",
            params: "offers: list of integers",
            summary: "k-th proposal is offers[k], repeating the last",
        },
        StrategyInfo {
            name: "concession_proposer",
            params: "start: integer, step: integer",
            summary: "k-th proposal is start + step*k",
        },
        StrategyInfo { name: "fixed_price_seller", params: "price: integer", summary: "always proposes price" },
        StrategyInfo {
            name: "reservation_buyer",
            params: "",
            summary: "accepts anything no worse than no deal, proposes its own limit",
        },
        StrategyInfo { name: "random_legal", params: "seed: integer", summary: "seeded uniform legal moves" },
        StrategyInfo { name: "always_accept", params: "", summary: "accepts every proposal" },
        StrategyInfo { name: "always_reject", params: "", summary: "rejects every proposal with final" },
    ];
    CATALOG
}

impl Strategy {
    /// Builds a strategy from its catalog name and a JSON object of
    /// parameters (`null` for none).
    pub fn from_name(name: &str, params: &Value) -> Result<Strategy, AgentError> {
        if !scripted_strategies().iter().any(|s| s.name == name) {
            return Err(AgentError::UnknownStrategy(name.to_string()));
        }
        let mut obj = match params {
            Value::Null => serde_json::Map::new(),
            Value::Object(m) => m.clone(),
            _ => {
                return Err(AgentError::InvalidParams {
                    name: name.to_string(),
                    detail: "parameters must be an object".into(),
                })
            }
        };
        obj.insert("strategy".into(), Value::String(name.to_string()));
        serde_json::from_value(Value::Object(obj))
            .map_err(|e| AgentError::InvalidParams { name: name.to_string(), detail: e.to_string() })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ThresholdResponder { .. } => "threshold_responder",
            Strategy::GridProposer { .. } => "grid_proposer",
            Strategy::ConcessionProposer { .. } => "concession_proposer",
            Strategy::FixedPriceSeller { .. } => "fixed_price_seller",
            Strategy::ReservationBuyer => "reservation_buyer",
            Strategy::RandomLegal { .. } => "random_legal",
            Strategy::AlwaysAccept => "always_accept",
            Strategy::AlwaysReject => "always_reject",
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        match self {
            Strategy::GridProposer { offers } if offers.is_empty() => {
                Err(AgentError::InvalidParams { name: self.name().into(), detail: "offers must not be empty".into() })
            }
            _ => Ok(()),
        }
    }
}

fn my_goal(view: &StateView) -> ResourceGoal {
    match &view.private {
        PrivateInfo::Goal(g) => g.clone(),
        _ => ResourceGoal::default(),
    }
}

/// The private limit in price terms, or 0 outside Buy-Sell.
fn reservation_price(view: &StateView) -> i64 {
    match view.private {
        PrivateInfo::SellerMin(v) | PrivateInfo::BuyerMax(v) => i64::from(v),
        _ => 0,
    }
}

fn most_held(bundle: &ResourceBundle, except: Option<&str>) -> Option<(String, u32)> {
    let mut best: Option<(String, u32)> = None;
    for (k, v) in bundle.iter() {
        if v == 0 || Some(k) == except {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((k.to_string(), v));
        }
    }
    best
}

fn clamp_u32(v: i64) -> u32 {
    v.clamp(0, i64::from(u32::MAX)) as u32
}

/// Terms conceding `level` to the opponent.
fn concede(view: &StateView, level: i64) -> Terms {
    match &view.public {
        PublicInfo::Pool(pool) => {
            let to_opponent = level.clamp(0, i64::from(*pool)) as u32;
            let split_to_p2 = match view.role {
                Role::Player1 => to_opponent,
                Role::Player2 => pool - to_opponent,
            };
            Terms::Split { split_to_p2 }
        }
        PublicInfo::None => Terms::Price { price: clamp_u32(level) },
        PublicInfo::Holdings(h) => {
            let mine = &h[view.role.index()];
            let theirs = &h[view.role.other().index()];
            let mut give = ResourceBundle::new();
            let mut take = ResourceBundle::new();
            let my_top = most_held(mine, None);
            if level > 0 {
                if let Some((k, n)) = &my_top {
                    give.set(k, clamp_u32(level).min(*n));
                }
            } else if level < 0 {
                if let Some((k, n)) = most_held(theirs, None) {
                    take.set(&k, clamp_u32(-level).min(n));
                }
            } else {
                let skip = my_top.as_ref().map(|(k, _)| k.as_str());
                if let Some((k, _)) = &my_top {
                    give.set(k, 1);
                }
                if let Some((k, _)) = most_held(theirs, skip).or_else(|| most_held(theirs, None)) {
                    take.set(&k, 1);
                }
            }
            Terms::Trade { give, take }
        }
    }
}

/// How good `terms` proposed by `proposer` are for the viewing player.
/// Higher is better in every game.
fn goodness(view: &StateView, terms: &Terms, proposer: Role) -> i64 {
    match (terms, &view.public) {
        (Terms::Split { split_to_p2 }, PublicInfo::Pool(pool)) => match view.role {
            Role::Player1 => i64::from(*pool) - i64::from(*split_to_p2),
            Role::Player2 => i64::from(*split_to_p2),
        },
        (Terms::Price { price }, _) => match view.role {
            Role::Player1 => i64::from(*price),
            Role::Player2 => -i64::from(*price),
        },
        (Terms::Trade { give, take }, PublicInfo::Holdings(h)) => {
            let trade = ExecutedTrade { proposer, give: give.clone(), take: take.clone() };
            let goal = my_goal(view);
            let me = view.role.index();
            match apply_trades(h, std::slice::from_ref(&trade)) {
                Ok(after) => goal.score(&after[me]) - goal.score(&h[me]),
                Err(_) => i64::MIN,
            }
        }
        _ => i64::MIN,
    }
}

/// Maps a threshold onto the [`goodness`] scale. A buyer's threshold is a
/// price ceiling.
fn threshold_goodness(view: &StateView, t: i64) -> i64 {
    match (&view.public, view.role) {
        (PublicInfo::None, Role::Player2) => -t,
        _ => t,
    }
}

/// Terms worth exactly `t` to the viewing player where possible.
fn aspiration_terms(view: &StateView, t: i64) -> Terms {
    match &view.public {
        PublicInfo::Pool(pool) => concede(view, i64::from(*pool) - t),
        PublicInfo::None => Terms::Price { price: clamp_u32(t) },
        PublicInfo::Holdings(_) => concede(view, -t),
    }
}

/// Neutral opening: an even split, one's own limit, or a one-for-one swap.
fn default_terms(view: &StateView) -> Terms {
    match &view.public {
        PublicInfo::Pool(pool) => concede(view, i64::from(*pool / 2)),
        PublicInfo::None => Terms::Price { price: clamp_u32(reservation_price(view)) },
        PublicInfo::Holdings(_) => concede(view, 0),
    }
}

fn random_terms(view: &StateView, rng: &mut ChaCha8Rng) -> Terms {
    match &view.public {
        PublicInfo::Pool(pool) => Terms::Split { split_to_p2: rng.gen_range(0..=*pool) },
        PublicInfo::None => {
            let hi = (2 * reservation_price(view) + 20).max(1);
            Terms::Price { price: clamp_u32(rng.gen_range(0..=hi)) }
        }
        PublicInfo::Holdings(h) => {
            let mine = &h[view.role.index()];
            let theirs = &h[view.role.other().index()];
            let mut give = ResourceBundle::new();
            let mut take = ResourceBundle::new();
            for (k, n) in mine.iter() {
                if rng.gen_bool(0.5) {
                    give.set(k, rng.gen_range(0..=n));
                }
            }
            for (k, n) in theirs.iter() {
                if rng.gen_bool(0.5) {
                    take.set(k, rng.gen_range(0..=n));
                }
            }
            if give.is_empty() && take.is_empty() {
                return concede(view, 0);
            }
            Terms::Trade { give, take }
        }
    }
}

/// A [`Strategy`] bound to nothing but its parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedAgent {
    pub strategy: Strategy,
}

impl ScriptedAgent {
    pub fn new(strategy: Strategy) -> Result<Self, AgentError> {
        strategy.validate()?;
        Ok(Self { strategy })
    }

    /// The proposal this strategy makes now, if it were to propose.
    fn proposal(&self, view: &StateView) -> Terms {
        let k = view.my_proposals() as i64;
        match &self.strategy {
            Strategy::ThresholdResponder { t } => aspiration_terms(view, *t),
            Strategy::GridProposer { offers } => concede(view, offers[(k as usize).min(offers.len() - 1)]),
            Strategy::ConcessionProposer { start, step } => concede(view, start.saturating_add(step.saturating_mul(k))),
            Strategy::FixedPriceSeller { price } => concede(view, *price),
            Strategy::ReservationBuyer => match &view.public {
                PublicInfo::Pool(pool) => concede(view, i64::from(*pool)),
                PublicInfo::None => Terms::Price { price: clamp_u32(reservation_price(view)) },
                PublicInfo::Holdings(_) => concede(view, 0),
            },
            Strategy::RandomLegal { .. } | Strategy::AlwaysAccept | Strategy::AlwaysReject => default_terms(view),
        }
    }

    fn decide(&self, view: &StateView) -> (Action, &'static str) {
        let pending = match (&view.pending_offer, view.phase) {
            (Some(p), Phase::AwaitingResponse) => p,
            _ => {
                if let Strategy::RandomLegal { seed } = self.strategy {
                    let mut rng = self.rng(seed, view);
                    return (Action::propose(random_terms(view, &mut rng)), "Random proposal.");
                }
                return (Action::propose(self.proposal(view)), "Opening proposal.");
            }
        };
        let value = goodness(view, &pending.terms, pending.from);
        match &self.strategy {
            Strategy::ThresholdResponder { t } => {
                if value >= threshold_goodness(view, *t) {
                    (Action::Accept, "The offer meets my threshold.")
                } else {
                    (Action::Reject { is_final: true }, "The offer is below my threshold.")
                }
            }
            Strategy::GridProposer { .. } | Strategy::ConcessionProposer { .. } | Strategy::FixedPriceSeller { .. } => {
                let mine = self.proposal(view);
                if value >= goodness(view, &mine, view.role) {
                    (Action::Accept, "The offer is at least as good as mine.")
                } else {
                    (Action::propose(mine), "Counter-proposal.")
                }
            }
            Strategy::ReservationBuyer => {
                let floor = match &view.public {
                    PublicInfo::None => threshold_goodness(view, reservation_price(view)),
                    _ => 0,
                };
                if value >= floor {
                    (Action::Accept, "The offer is within my limit.")
                } else {
                    (Action::propose(self.proposal(view)), "Counter at my limit.")
                }
            }
            Strategy::RandomLegal { seed } => {
                let mut rng = self.rng(*seed, view);
                match rng.gen_range(0..100) {
                    0..=39 => (Action::Accept, "Random accept."),
                    40..=54 => (Action::Reject { is_final: true }, "Random final reject."),
                    55..=69 => (Action::Reject { is_final: false }, "Random reject."),
                    _ => (Action::propose(random_terms(view, &mut rng)), "Random counter-proposal."),
                }
            }
            Strategy::AlwaysAccept => (Action::Accept, "I accept."),
            Strategy::AlwaysReject => (Action::Reject { is_final: true }, "I reject."),
        }
    }

    fn rng(&self, seed: u64, view: &StateView) -> ChaCha8Rng {
        let h = stable_hash(&[
            &seed.to_be_bytes(),
            &view.seed.to_be_bytes(),
            &view.turn.to_be_bytes(),
            &[view.role.index() as u8],
        ]);
        ChaCha8Rng::seed_from_u64(h)
    }
}

impl Agent for ScriptedAgent {
    fn next_message(&self, view: &StateView) -> Result<TurnOutput, AgentFailure> {
        let (action, rationale) = self.decide(view);
        let illegal = |detail: String| AgentFailure {
            reason: FailureReason::ScriptedIllegal { detail },
            attempts: Vec::new(),
            usage: TokenUsage::default(),
        };
        view.check_action(&action).map_err(|e| illegal(e.to_string()))?;
        let message = AgentMessage::canonical(view.role, rationale, action, &view.bounds())
            .map_err(|e| illegal(e.to_string()))?;
        Ok(TurnOutput { message, failed_attempts: Vec::new(), usage: TokenUsage::default() })
    }
}

/// Agent that asks a chat model for each move.
pub struct LlmAgent {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub framing: LanguageFraming,
    prompt: PromptBundle,
    game: GameKind,
    backend: Arc<dyn ChatBackend>,
}

impl LlmAgent {
    pub fn new(spec: &LlmSpec, config: &GameConfig, role: Role, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            model_id: spec.model_id.clone(),
            temperature: spec.temperature,
            max_output_tokens: spec.max_output_tokens,
            framing: spec.framing,
            prompt: build_prompt(config, role, spec.framing),
            game: config.kind(),
            backend,
        }
    }

    pub fn prompt(&self) -> &PromptBundle {
        &self.prompt
    }
}

impl Agent for LlmAgent {
    fn next_message(&self, view: &StateView) -> Result<TurnOutput, AgentFailure> {
        let mut messages = vec![
            ChatMessage::system(self.prompt.system_prompt.clone()),
            ChatMessage::user(render_turn_prompt(&self.prompt, view)),
        ];
        let phase = if view.phase == Phase::AwaitingResponse { "respond" } else { "propose" };
        let metadata = [
            ("game".to_string(), self.game.as_str().to_string()),
            ("phase".to_string(), phase.to_string()),
            ("role".to_string(), view.role.label().to_string()),
            ("language".to_string(), self.framing.name().to_string()),
        ]
        .into();
        let mut request = ChatRequest {
            model_id: self.model_id.clone(),
            messages: Vec::new(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            metadata,
        };
        let bounds = view.bounds();
        let mut failed = Vec::new();
        let mut usage = TokenUsage::default();
        for _ in 0..LLM_MAX_ATTEMPTS {
            request.messages = messages.clone();
            let reply = match self.backend.complete(&request) {
                Ok(r) => r,
                Err(error) => {
                    return Err(AgentFailure { reason: FailureReason::Gateway { error }, attempts: failed, usage })
                }
            };
            usage.add(reply.usage);
            let error = match parse_message(&reply.content, view.role, &bounds) {
                Ok(message) => match view.check_action(&message.action) {
                    Ok(()) => return Ok(TurnOutput { message, failed_attempts: failed, usage }),
                    Err(illegal) => format!("illegal move: {illegal}"),
                },
                Err(parse) => format!("could not parse reply: {parse}"),
            };
            messages.push(ChatMessage::assistant(reply.content.clone()));
            messages.push(ChatMessage::user(format!(
                "Your previous reply could not be used ({error}). Reply again with a brief <rationale> and \
                 exactly one valid action tag, writing numbers with the ASCII digits 0-9."
            )));
            failed.push(FailedAttempt { raw_text: reply.content, error });
        }
        let last_error = failed.last().map(|f| f.error.clone()).unwrap_or_default();
        Err(AgentFailure {
            reason: FailureReason::ParseExhausted { attempts: LLM_MAX_ATTEMPTS, last_error },
            attempts: failed,
            usage,
        })
    }
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSpec {
    pub model_id: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    pub framing: LanguageFraming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Scripted(Strategy),
    Llm(LlmSpec),
}

/// Who plays one side of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    /// Display name, e.g. the model label used in tables.
    pub name: String,
    pub role: Role,
    pub kind: AgentKind,
}

impl AgentSpec {
    pub fn instantiate(
        &self,
        config: &GameConfig,
        backend: Option<&Arc<dyn ChatBackend>>,
    ) -> Result<Box<dyn Agent>, AgentError> {
        match &self.kind {
            AgentKind::Scripted(s) => Ok(Box::new(ScriptedAgent::new(s.clone())?)),
            AgentKind::Llm(spec) => {
                let backend = backend.ok_or_else(|| AgentError::MissingBackend(self.name.clone()))?;
                Ok(Box::new(LlmAgent::new(spec, config, self.role, backend.clone())))
            }
        }
    }
}
