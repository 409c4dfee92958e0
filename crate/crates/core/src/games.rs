//! State machines and payoff rules for the Ultimatum, Buy-Sell and Resource
//! Exchange games.
//!
//! All three games share one turn structure. Player 1 opens with a proposal;
//! the speaker flips after every message. A responder may accept (binding the
//! pending terms), reject with `final="true"` (ending the game), reject
//! without the flag (handing the floor back to the proposer) or
//! counter-propose (replacing the pending offer). A game that reaches
//! `max_turns` messages without a decision ends in a no-deal timeout.
//!
//! [`GameState`] is an immutable value: [`GameState::step`] returns a new state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Action, AgentMessage, Bounds, GameKind, ResourceBundle, Role, Terms, TermsViolation};

pub const DEFAULT_MAX_TURNS: u32 = 8;

fn default_max_turns() -> u32 {
    DEFAULT_MAX_TURNS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UltimatumConfig {
    pub pool: u32,
    pub max_turns: u32,
}

impl Default for UltimatumConfig {
    fn default() -> Self {
        Self { pool: 100, max_turns: DEFAULT_MAX_TURNS }
    }
}

/// Reservation values are private: each side only ever sees its own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuySellConfig {
    /// Seller (Player 1) minimum acceptable price.
    pub seller_min: u32,
    /// Buyer (Player 2) maximum willingness to pay.
    pub buyer_max: u32,
    pub max_turns: u32,
}

impl Default for BuySellConfig {
    fn default() -> Self {
        Self { seller_min: 40, buyer_max: 60, max_turns: DEFAULT_MAX_TURNS }
    }
}

/// What a Resource Exchange player maximizes. Without weights the score is the
/// plain resource count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceGoal {
    pub weights: Option<BTreeMap<String, u32>>,
}

impl ResourceGoal {
    pub fn score(&self, holdings: &ResourceBundle) -> i64 {
        match &self.weights {
            None => holdings.total() as i64,
            Some(w) => holdings.iter().map(|(k, v)| i64::from(v) * i64::from(w.get(k).copied().unwrap_or(0))).sum(),
        }
    }

    pub fn describe(&self) -> String {
        match &self.weights {
            None => "maximize the total number of resources you hold".to_string(),
            Some(w) => {
                let parts: Vec<String> = w.iter().map(|(k, v)| format!("{k} is worth {v}")).collect();
                format!("maximize the total value of the resources you hold ({})", parts.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceConfig {
    pub endowment_p1: ResourceBundle,
    pub endowment_p2: ResourceBundle,
    pub goal_p1: ResourceGoal,
    pub goal_p2: ResourceGoal,
    #[serde(default = "default_max_turns")]
    pub max_turns: u32,
}

impl Default for ResourceConfig {
    fn default() -> Self {
        let endowment = ResourceBundle::new().with("X", 25).with("Y", 5);
        Self {
            endowment_p1: endowment.clone(),
            endowment_p2: endowment,
            goal_p1: ResourceGoal::default(),
            goal_p2: ResourceGoal::default(),
            max_turns: DEFAULT_MAX_TURNS,
        }
    }
}

impl ResourceConfig {
    pub fn endowments(&self) -> [ResourceBundle; 2] {
        [self.endowment_p1.clone(), self.endowment_p2.clone()]
    }

    pub fn goal(&self, role: Role) -> &ResourceGoal {
        match role {
            Role::Player1 => &self.goal_p1,
            Role::Player2 => &self.goal_p2,
        }
    }

    pub fn total_endowment(&self) -> u64 {
        self.endowment_p1.total() + self.endowment_p2.total()
    }

    /// Every resource kind either player holds, sorted.
    pub fn kinds(&self) -> Vec<String> {
        let mut kinds: Vec<String> =
            self.endowment_p1.kinds().chain(self.endowment_p2.kinds()).map(str::to_string).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game")]
pub enum GameConfig {
    #[serde(rename = "ultimatum")]
    Ultimatum(UltimatumConfig),
    #[serde(rename = "buysell")]
    BuySell(BuySellConfig),
    #[serde(rename = "resource")]
    ResourceExchange(ResourceConfig),
}

impl GameConfig {
    pub fn default_for(kind: GameKind) -> Self {
        match kind {
            GameKind::Ultimatum => GameConfig::Ultimatum(UltimatumConfig::default()),
            GameKind::BuySell => GameConfig::BuySell(BuySellConfig::default()),
            GameKind::ResourceExchange => GameConfig::ResourceExchange(ResourceConfig::default()),
        }
    }

    pub fn kind(&self) -> GameKind {
        match self {
            GameConfig::Ultimatum(_) => GameKind::Ultimatum,
            GameConfig::BuySell(_) => GameKind::BuySell,
            GameConfig::ResourceExchange(_) => GameKind::ResourceExchange,
        }
    }

    pub fn max_turns(&self) -> u32 {
        match self {
            GameConfig::Ultimatum(c) => c.max_turns,
            GameConfig::BuySell(c) => c.max_turns,
            GameConfig::ResourceExchange(c) => c.max_turns,
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let invalid = |msg: String| Err(GameError::InvalidConfig(msg));
        if self.max_turns() < 2 {
            return invalid(format!("max_turns must be at least 2, got {}", self.max_turns()));
        }
        match self {
            GameConfig::Ultimatum(c) if c.pool == 0 => invalid("pool must be positive".into()),
            GameConfig::BuySell(c) if c.buyer_max <= c.seller_min => invalid(format!(
                "empty bargaining zone: buyer_max {} must exceed seller_min {}",
                c.buyer_max, c.seller_min
            )),
            GameConfig::ResourceExchange(c) => {
                if c.kinds().len() < 2 {
                    return invalid("at least two resource kinds are required".into());
                }
                if c.endowment_p1.is_empty() || c.endowment_p2.is_empty() {
                    return invalid("both players need a non-empty endowment".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Utilities when no agreement is reached.
    pub fn no_deal_utilities(&self) -> [i64; 2] {
        match self {
            GameConfig::Ultimatum(_) | GameConfig::BuySell(_) => [0, 0],
            GameConfig::ResourceExchange(c) => [c.goal_p1.score(&c.endowment_p1), c.goal_p2.score(&c.endowment_p2)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingProposal,
    AwaitingResponse,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingOffer {
    pub from: Role,
    pub terms: Terms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Agreement,
    Rejection,
    NoDealTimeout,
    ProtocolFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    /// Agreed terms; present exactly when `kind` is `Agreement`.
    pub terms: Option<Terms>,
    /// Who proposed the agreed terms.
    pub proposer: Option<Role>,
    /// Ultimatum: pool shares. Buy-Sell: (seller advantage, buyer advantage)
    /// on agreement, zeros otherwise. Resource Exchange: goal scores of the
    /// final holdings.
    pub utilities: [i64; 2],
    pub rounds_used: u32,
}

impl Outcome {
    pub fn winner(&self) -> Winner {
        outcome_winner(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Player1,
    Player2,
    Draw,
}

/// One trade carried out at agreement, in the proposer's frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutedTrade {
    pub proposer: Role,
    pub give: ResourceBundle,
    pub take: ResourceBundle,
}

impl ExecutedTrade {
    /// Units that changed hands in both directions.
    pub fn volume(&self) -> u64 {
        self.give.total() + self.take.total()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GameError {
    #[error("invalid game config: {0}")]
    InvalidConfig(String),
    #[error("illegal move: {0}")]
    IllegalMove(#[from] IllegalMove),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IllegalMove {
    #[error("the game is already over")]
    GameOver,
    #[error("it is {expected}'s turn, not {actual}'s")]
    WrongSpeaker { expected: Role, actual: Role },
    #[error("there is no pending offer to {0}")]
    NothingToRespondTo(&'static str),
    #[error("{0}")]
    Terms(#[from] TermsViolation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameState {
    pub config: GameConfig,
    pub seed: u64,
    pub phase: Phase,
    pub current_speaker: Role,
    pub transcript: Vec<AgentMessage>,
    pub pending_offer: Option<PendingOffer>,
    pub turn: u32,
    pub outcome: Option<Outcome>,
    /// Player 1's first proposal, kept even after it is superseded.
    pub initial_offer: Option<Terms>,
}

/// Starts a game. Player 1 always speaks first.
pub fn new_game(config: GameConfig, seed: u64) -> Result<GameState, GameError> {
    config.validate()?;
    Ok(GameState {
        config,
        seed,
        phase: Phase::AwaitingProposal,
        current_speaker: Role::Player1,
        transcript: Vec::new(),
        pending_offer: None,
        turn: 0,
        outcome: None,
        initial_offer: None,
    })
}

impl GameState {
    pub fn kind(&self) -> GameKind {
        self.config.kind()
    }

    pub fn is_terminal(&self) -> bool {
        self.phase == Phase::Terminal
    }

    /// Holdings before any trade; the engine executes at most one trade and
    /// that ends the game, so these are also the holdings during play.
    pub fn holdings(&self) -> [ResourceBundle; 2] {
        match &self.config {
            GameConfig::ResourceExchange(c) => c.endowments(),
            _ => [ResourceBundle::new(), ResourceBundle::new()],
        }
    }

    pub fn bounds(&self) -> Bounds {
        match &self.config {
            GameConfig::Ultimatum(c) => Bounds::Ultimatum { pool: c.pool },
            GameConfig::BuySell(_) => Bounds::BuySell,
            GameConfig::ResourceExchange(_) => Bounds::ResourceExchange { holdings: self.holdings() },
        }
    }

    /// Checks whether `msg` may be played now without advancing the game.
    pub fn check_move(&self, msg: &AgentMessage) -> Result<(), IllegalMove> {
        if self.is_terminal() {
            return Err(IllegalMove::GameOver);
        }
        if msg.speaker != self.current_speaker {
            return Err(IllegalMove::WrongSpeaker { expected: self.current_speaker, actual: msg.speaker });
        }
        match (&msg.action, self.phase) {
            (Action::Propose { terms }, _) => Ok(self.bounds().check(terms, msg.speaker)?),
            (Action::Accept, Phase::AwaitingProposal) => Err(IllegalMove::NothingToRespondTo("accept")),
            (Action::Reject { .. }, Phase::AwaitingProposal) => Err(IllegalMove::NothingToRespondTo("reject")),
            _ => Ok(()),
        }
    }

    pub fn step(&self, msg: AgentMessage) -> Result<GameState, GameError> {
        self.check_move(&msg)?;
        let mut next = self.clone();
        let speaker = msg.speaker;
        match &msg.action {
            Action::Propose { terms } => {
                if speaker == Role::Player1 && next.initial_offer.is_none() {
                    next.initial_offer = Some(terms.clone());
                }
                next.pending_offer = Some(PendingOffer { from: speaker, terms: terms.clone() });
                next.phase = Phase::AwaitingResponse;
            }
            Action::Accept => {
                let offer = next.pending_offer.take().expect("phase guarantees a pending offer");
                let utilities = self.agreement_utilities(&offer)?;
                next.finish(OutcomeKind::Agreement, Some(offer), utilities);
            }
            Action::Reject { is_final: true } => {
                next.pending_offer = None;
                let utilities = self.config.no_deal_utilities();
                next.finish(OutcomeKind::Rejection, None, utilities);
            }
            Action::Reject { is_final: false } => {
                next.pending_offer = None;
                next.phase = Phase::AwaitingProposal;
            }
        }
        next.transcript.push(msg);
        next.turn += 1;
        next.current_speaker = speaker.other();
        if let Some(outcome) = next.outcome.as_mut() {
            outcome.rounds_used = next.turn;
        } else if next.turn >= self.config.max_turns() {
            next.pending_offer = None;
            let utilities = self.config.no_deal_utilities();
            next.finish(OutcomeKind::NoDealTimeout, None, utilities);
        }
        Ok(next)
    }

    fn finish(&mut self, kind: OutcomeKind, offer: Option<PendingOffer>, utilities: [i64; 2]) {
        self.phase = Phase::Terminal;
        let (terms, proposer) = match offer {
            Some(o) => (Some(o.terms), Some(o.from)),
            None => (None, None),
        };
        self.outcome = Some(Outcome { kind, terms, proposer, utilities, rounds_used: self.turn });
    }

    fn agreement_utilities(&self, offer: &PendingOffer) -> Result<[i64; 2], GameError> {
        Ok(match (&self.config, &offer.terms) {
            (GameConfig::Ultimatum(c), Terms::Split { split_to_p2 }) => ultimatum_payoffs(c.pool, *split_to_p2, true),
            (GameConfig::BuySell(c), Terms::Price { price }) => {
                let (s, b) = buysell_advantages(*price, c.seller_min, c.buyer_max);
                [s, b]
            }
            (GameConfig::ResourceExchange(c), Terms::Trade { give, take }) => {
                let trade = ExecutedTrade { proposer: offer.from, give: give.clone(), take: take.clone() };
                let holdings =
                    apply_trades(&c.endowments(), std::slice::from_ref(&trade)).map_err(IllegalMove::from)?;
                [c.goal_p1.score(&holdings[0]), c.goal_p2.score(&holdings[1])]
            }
            (config, terms) => {
                return Err(IllegalMove::from(TermsViolation::WrongGame {
                    expected: config.kind(),
                    found: terms.kind(),
                })
                .into())
            }
        })
    }

    /// Trades executed so far (at most one, on agreement).
    pub fn executed_trades(&self) -> Vec<ExecutedTrade> {
        match &self.outcome {
            Some(Outcome {
                kind: OutcomeKind::Agreement,
                terms: Some(Terms::Trade { give, take }),
                proposer: Some(p),
                ..
            }) => vec![ExecutedTrade { proposer: *p, give: give.clone(), take: take.clone() }],
            _ => Vec::new(),
        }
    }

    /// Marks the game as abandoned because an agent could not produce a valid
    /// move. Utilities fall back to the no-deal values.
    pub fn abandon(&self) -> GameState {
        let mut next = self.clone();
        next.pending_offer = None;
        let utilities = self.config.no_deal_utilities();
        next.finish(OutcomeKind::ProtocolFailure, None, utilities);
        next
    }

    /// What `role` is allowed to know about this game.
    pub fn view(&self, role: Role) -> StateView {
        let private = match &self.config {
            GameConfig::Ultimatum(_) => PrivateInfo::None,
            GameConfig::BuySell(c) => match role {
                Role::Player1 => PrivateInfo::SellerMin(c.seller_min),
                Role::Player2 => PrivateInfo::BuyerMax(c.buyer_max),
            },
            GameConfig::ResourceExchange(c) => PrivateInfo::Goal(c.goal(role).clone()),
        };
        let public = match &self.config {
            GameConfig::Ultimatum(c) => PublicInfo::Pool(c.pool),
            GameConfig::BuySell(_) => PublicInfo::None,
            GameConfig::ResourceExchange(_) => PublicInfo::Holdings(self.holdings()),
        };
        StateView {
            kind: self.kind(),
            role,
            seed: self.seed,
            phase: self.phase,
            current_speaker: self.current_speaker,
            turn: self.turn,
            max_turns: self.config.max_turns(),
            transcript: self.transcript.clone(),
            pending_offer: self.pending_offer.clone(),
            public,
            private,
        }
    }
}

/// Information every player sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PublicInfo {
    None,
    Pool(u32),
    /// Resource holdings are common knowledge.
    Holdings([ResourceBundle; 2]),
}

/// Information only the viewing player sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrivateInfo {
    None,
    SellerMin(u32),
    BuyerMax(u32),
    Goal(ResourceGoal),
}

/// One player's view of a game in progress. Never contains the opponent's
/// private parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateView {
    pub kind: GameKind,
    pub role: Role,
    pub seed: u64,
    pub phase: Phase,
    pub current_speaker: Role,
    pub turn: u32,
    pub max_turns: u32,
    pub transcript: Vec<AgentMessage>,
    pub pending_offer: Option<PendingOffer>,
    pub public: PublicInfo,
    pub private: PrivateInfo,
}

impl StateView {
    pub fn bounds(&self) -> Bounds {
        match (&self.public, self.kind) {
            (PublicInfo::Pool(pool), _) => Bounds::Ultimatum { pool: *pool },
            (PublicInfo::Holdings(h), _) => Bounds::ResourceExchange { holdings: h.clone() },
            (PublicInfo::None, _) => Bounds::BuySell,
        }
    }

    /// Proposals this player has already made.
    pub fn my_proposals(&self) -> usize {
        self.transcript.iter().filter(|m| m.speaker == self.role && matches!(m.action, Action::Propose { .. })).count()
    }

    /// Checks phase legality and bounds the same way the engine does.
    pub fn check_action(&self, action: &Action) -> Result<(), IllegalMove> {
        match (action, self.phase) {
            (_, Phase::Terminal) => Err(IllegalMove::GameOver),
            (Action::Propose { terms }, _) => Ok(self.bounds().check(terms, self.role)?),
            (Action::Accept, Phase::AwaitingProposal) => Err(IllegalMove::NothingToRespondTo("accept")),
            (Action::Reject { .. }, Phase::AwaitingProposal) => Err(IllegalMove::NothingToRespondTo("reject")),
            _ => Ok(()),
        }
    }
}

/// Pool shares: the proposed split if accepted, nothing otherwise.
pub fn ultimatum_payoffs(pool: u32, split_to_p2: u32, accepted: bool) -> [i64; 2] {
    if accepted {
        [i64::from(pool) - i64::from(split_to_p2), i64::from(split_to_p2)]
    } else {
        [0, 0]
    }
}

/// `(price - seller_min, buyer_max - price)`; either may be negative.
pub fn buysell_advantages(price: u32, seller_min: u32, buyer_max: u32) -> (i64, i64) {
    (i64::from(price) - i64::from(seller_min), i64::from(buyer_max) - i64::from(price))
}

/// Applies `trades` in order, failing on the first one that would drive a
/// holding negative.
pub fn apply_trades(
    endowments: &[ResourceBundle; 2],
    trades: &[ExecutedTrade],
) -> Result<[ResourceBundle; 2], TermsViolation> {
    let mut holdings = endowments.clone();
    for trade in trades {
        let p = trade.proposer.index();
        let r = trade.proposer.other().index();
        let short = |holder: Role, have: &ResourceBundle, want: &ResourceBundle| {
            want.iter().find(|(k, v)| have.get(k) < *v).map(|(k, v)| TermsViolation::InsufficientStock {
                holder,
                kind: k.to_string(),
                have: have.get(k),
                want: v,
            })
        };
        let proposer_left = holdings[p]
            .checked_sub(&trade.give)
            .ok_or_else(|| short(trade.proposer, &holdings[p], &trade.give).unwrap())?;
        let responder_left = holdings[r]
            .checked_sub(&trade.take)
            .ok_or_else(|| short(trade.proposer.other(), &holdings[r], &trade.take).unwrap())?;
        holdings[p] = proposer_left.saturating_add(&trade.take);
        holdings[r] = responder_left.saturating_add(&trade.give);
    }
    Ok(holdings)
}

/// Unweighted resource counts after applying `trades`.
pub fn resource_payoffs(
    endowments: &[ResourceBundle; 2],
    trades: &[ExecutedTrade],
) -> Result<[i64; 2], TermsViolation> {
    let h = apply_trades(endowments, trades)?;
    Ok([h[0].total() as i64, h[1].total() as i64])
}

/// Higher utility wins; equal utilities (including the all-zero outcome of a
/// rejected Ultimatum or an unsold Buy-Sell item) are a draw.
pub fn outcome_winner(outcome: &Outcome) -> Winner {
    let [u1, u2] = outcome.utilities;
    match u1.cmp(&u2) {
        std::cmp::Ordering::Greater => Winner::Player1,
        std::cmp::Ordering::Less => Winner::Player2,
        std::cmp::Ordering::Equal => Winner::Draw,
    }
}
