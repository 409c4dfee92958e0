//! Wire grammar between agents and the game engine.
//!
//! A message is a `<rationale>…</rationale>` block followed by exactly one
//! self-closing ASCII action tag:
//!
//! ```text
//! <rationale>Fair enough.</rationale><propose split_to_p2="30"/>
//! <rationale>Too low.</rationale><reject final="true"/>
//! <rationale>ठीक है</rationale><accept/>
//! ```
//!
//! The full grammar is documented in `docs/protocol.md`. Parsing is total:
//! every input yields either a message or a [`ParseError`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rationale text beyond this many characters is truncated.
pub const RATIONALE_MAX_CHARS: usize = 500;

/// Longest snippet carried in a [`ParseError`].
const SNIPPET_MAX_CHARS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GameKind {
    #[serde(rename = "ultimatum")]
    Ultimatum,
    #[serde(rename = "buysell")]
    BuySell,
    #[serde(rename = "resource")]
    ResourceExchange,
}

impl GameKind {
    pub const ALL: [GameKind; 3] = [GameKind::Ultimatum, GameKind::BuySell, GameKind::ResourceExchange];

    pub fn as_str(self) -> &'static str {
        match self {
            GameKind::Ultimatum => "ultimatum",
            GameKind::BuySell => "buysell",
            GameKind::ResourceExchange => "resource",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            GameKind::Ultimatum => "Ultimatum",
            GameKind::BuySell => "Buy-Sell",
            GameKind::ResourceExchange => "Resource Exchange",
        }
    }
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GameKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ultimatum" => Ok(GameKind::Ultimatum),
            "buysell" => Ok(GameKind::BuySell),
            "resource" | "resourceexchange" => Ok(GameKind::ResourceExchange),
            _ => Err(format!("unknown game kind `{s}` (expected ultimatum, buysell or resource)")),
        }
    }
}

/// Seat at the table. Player 1 always moves first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "p1")]
    Player1,
    #[serde(rename = "p2")]
    Player2,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Player1 => Role::Player2,
            Role::Player2 => Role::Player1,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Role::Player1 => 0,
            Role::Player2 => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Role::Player1 => "Player 1",
            Role::Player2 => "Player 2",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Counts per resource kind. Zero entries are never stored, so two bundles
/// holding the same quantities always compare equal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, u32>", into = "BTreeMap<String, u32>")]
pub struct ResourceBundle(BTreeMap<String, u32>);

impl ResourceBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: &str, count: u32) -> Self {
        self.set(kind, count);
        self
    }

    pub fn set(&mut self, kind: &str, count: u32) {
        if count == 0 {
            self.0.remove(kind);
        } else {
            self.0.insert(kind.to_string(), count);
        }
    }

    pub fn get(&self, kind: &str) -> u32 {
        self.0.get(kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// True when every count in `other` is available here.
    pub fn covers(&self, other: &ResourceBundle) -> bool {
        other.iter().all(|(k, v)| self.get(k) >= v)
    }

    /// Subtracts `other`, or returns `None` if any count would go negative.
    pub fn checked_sub(&self, other: &ResourceBundle) -> Option<ResourceBundle> {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            let have = self.get(k);
            out.set(k, have.checked_sub(v)?);
        }
        Some(out)
    }

    pub fn saturating_add(&self, other: &ResourceBundle) -> ResourceBundle {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.set(k, self.get(k).saturating_add(v));
        }
        out
    }

    /// Canonical attribute encoding: `X:5,Y:3`, kinds sorted, zeros omitted.
    pub fn to_attr(&self) -> String {
        self.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(",")
    }
}

impl From<BTreeMap<String, u32>> for ResourceBundle {
    fn from(map: BTreeMap<String, u32>) -> Self {
        ResourceBundle(map.into_iter().filter(|(_, v)| *v > 0).collect())
    }
}

impl From<ResourceBundle> for BTreeMap<String, u32> {
    fn from(b: ResourceBundle) -> Self {
        b.0
    }
}

impl<'a> FromIterator<(&'a str, u32)> for ResourceBundle {
    fn from_iter<I: IntoIterator<Item = (&'a str, u32)>>(iter: I) -> Self {
        let mut b = ResourceBundle::new();
        for (k, v) in iter {
            b.set(k, b.get(k).saturating_add(v));
        }
        b
    }
}

impl fmt::Display for ResourceBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("nothing");
        }
        let parts: Vec<String> = self.iter().map(|(k, v)| format!("{v} {k}")).collect();
        f.write_str(&parts.join(", "))
    }
}

/// Game-specific proposal terms.
///
/// `Split` and `Price` are absolute: `split_to_p2` is Player 2's share no
/// matter who proposes. `Trade` is relative to the proposer, who hands over
/// `give` and receives `take`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Terms {
    Split { split_to_p2: u32 },
    Price { price: u32 },
    Trade { give: ResourceBundle, take: ResourceBundle },
}

impl Terms {
    pub fn kind(&self) -> GameKind {
        match self {
            Terms::Split { .. } => GameKind::Ultimatum,
            Terms::Price { .. } => GameKind::BuySell,
            Terms::Trade { .. } => GameKind::ResourceExchange,
        }
    }
}

impl fmt::Display for Terms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terms::Split { split_to_p2 } => write!(f, "{split_to_p2} units to Player 2"),
            Terms::Price { price } => write!(f, "price {price}"),
            Terms::Trade { give, take } => write!(f, "give {give} for {take}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Propose {
        terms: Terms,
    },
    Accept,
    /// A final reject ends the game; otherwise the floor passes back to the
    /// proposer.
    Reject {
        #[serde(rename = "final", default)]
        is_final: bool,
    },
}

impl Action {
    pub fn propose(terms: Terms) -> Self {
        Action::Propose { terms }
    }

    pub fn terms(&self) -> Option<&Terms> {
        match self {
            Action::Propose { terms } => Some(terms),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Propose { terms } => write!(f, "propose {terms}"),
            Action::Accept => f.write_str("accept"),
            Action::Reject { is_final: true } => f.write_str("reject (final)"),
            Action::Reject { is_final: false } => f.write_str("reject"),
        }
    }
}

/// One turn's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub speaker: Role,
    pub rationale: String,
    pub action: Action,
    /// Verbatim agent output the message was parsed from.
    pub raw_text: String,
}

impl AgentMessage {
    /// Builds a message whose `raw_text` is its own canonical encoding.
    pub fn canonical(speaker: Role, rationale: &str, action: Action, bounds: &Bounds) -> Result<Self, ProtocolError> {
        let mut msg =
            AgentMessage { speaker, rationale: normalize_rationale(rationale), action, raw_text: String::new() };
        msg.raw_text = serialize_message(&msg, bounds)?;
        Ok(msg)
    }
}

/// Trims, caps at [`RATIONALE_MAX_CHARS`], trims again. Idempotent.
pub fn normalize_rationale(text: &str) -> String {
    let trimmed = text.trim();
    match trimmed.char_indices().nth(RATIONALE_MAX_CHARS) {
        Some((cut, _)) => trimmed[..cut].trim_end().to_string(),
        None => trimmed.to_string(),
    }
}

/// Limits a proposal must respect, as seen by the engine at the time of the
/// proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "game", rename_all = "snake_case")]
pub enum Bounds {
    Ultimatum {
        pool: u32,
    },
    BuySell,
    /// Current holdings indexed by [`Role::index`].
    ResourceExchange {
        holdings: [ResourceBundle; 2],
    },
}

impl Bounds {
    pub fn kind(&self) -> GameKind {
        match self {
            Bounds::Ultimatum { .. } => GameKind::Ultimatum,
            Bounds::BuySell => GameKind::BuySell,
            Bounds::ResourceExchange { .. } => GameKind::ResourceExchange,
        }
    }

    /// Checks `terms` proposed by `proposer` against these bounds.
    pub fn check(&self, terms: &Terms, proposer: Role) -> Result<(), TermsViolation> {
        match (self, terms) {
            (Bounds::Ultimatum { pool }, Terms::Split { split_to_p2 }) => {
                if split_to_p2 > pool {
                    Err(TermsViolation::SplitExceedsPool { split: *split_to_p2, pool: *pool })
                } else {
                    Ok(())
                }
            }
            (Bounds::BuySell, Terms::Price { .. }) => Ok(()),
            (Bounds::ResourceExchange { holdings }, Terms::Trade { give, take }) => {
                if give.is_empty() && take.is_empty() {
                    return Err(TermsViolation::EmptyTrade);
                }
                for (holder, bundle) in [(proposer, give), (proposer.other(), take)] {
                    let stock = &holdings[holder.index()];
                    for (kind, want) in bundle.iter() {
                        let have = stock.get(kind);
                        if want > have {
                            return Err(TermsViolation::InsufficientStock {
                                holder,
                                kind: kind.to_string(),
                                have,
                                want,
                            });
                        }
                    }
                }
                Ok(())
            }
            _ => Err(TermsViolation::WrongGame { expected: self.kind(), found: terms.kind() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermsViolation {
    #[error("terms belong to the {found} game, expected {expected}")]
    WrongGame { expected: GameKind, found: GameKind },
    #[error("split_to_p2={split} exceeds the pool of {pool}")]
    SplitExceedsPool { split: u32, pool: u32 },
    #[error("{holder} holds only {have} {kind}, trade needs {want}")]
    InsufficientStock { holder: Role, kind: String, have: u32, want: u32 },
    #[error("trade moves no resources")]
    EmptyTrade,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("invalid action: {0}")]
    InvalidAction(#[from] TermsViolation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    MissingActionTag,
    MalformedTerms,
    OutOfRangeTerms,
    MultipleActions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{kind:?} at char {offset}: {detail} (near `{snippet}`)")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Character (not byte) position of the offending text.
    pub offset: usize,
    pub snippet: String,
    pub detail: String,
}

/// Encodes `msg` in canonical form. Same input, same bytes.
pub fn serialize_message(msg: &AgentMessage, bounds: &Bounds) -> Result<String, ProtocolError> {
    let mut out = String::with_capacity(msg.rationale.len() + 48);
    out.push_str("<rationale>");
    escape_into(&normalize_rationale(&msg.rationale), &mut out);
    out.push_str("</rationale>");
    match &msg.action {
        Action::Propose { terms } => {
            bounds.check(terms, msg.speaker)?;
            match terms {
                Terms::Split { split_to_p2 } => out.push_str(&format!("<propose split_to_p2=\"{split_to_p2}\"/>")),
                Terms::Price { price } => out.push_str(&format!("<propose price=\"{price}\"/>")),
                Terms::Trade { give, take } => {
                    out.push_str(&format!("<propose give=\"{}\" take=\"{}\"/>", give.to_attr(), take.to_attr()))
                }
            }
        }
        Action::Accept => out.push_str("<accept/>"),
        Action::Reject { is_final: false } => out.push_str("<reject/>"),
        Action::Reject { is_final: true } => out.push_str("<reject final=\"true\"/>"),
    }
    Ok(out)
}

fn escape_into(text: &str, out: &mut String) {
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
}

fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let (rep, len) = if tail.starts_with("&lt;") {
            ('<', 4)
        } else if tail.starts_with("&gt;") {
            ('>', 4)
        } else if tail.starts_with("&amp;") {
            ('&', 5)
        } else {
            ('&', 1)
        };
        out.push(rep);
        rest = &tail[len..];
    }
    out.push_str(rest);
    out
}

const ACTION_TAGS: [&str; 3] = ["propose", "accept", "reject"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagName {
    Propose,
    Accept,
    Reject,
}

/// Parses model output into a message for `speaker`.
///
/// Surrounding prose in any script is ignored. Tags are ASCII and matched
/// case-insensitively; attribute names are case-sensitive. Text inside the
/// first `<rationale>` block is never scanned for action tags.
pub fn parse_message(text: &str, speaker: Role, bounds: &Bounds) -> Result<AgentMessage, ParseError> {
    let ctx = Ctx { text };
    let rationale_span = find_rationale(text);
    let rationale = rationale_span.map(|(_, inner, _)| normalize_rationale(&unescape(inner))).unwrap_or_default();

    let tags: Vec<(usize, TagName)> = find_action_tags(text)
        .into_iter()
        .filter(|(pos, _)| match rationale_span {
            Some((start, _, end)) => *pos < start || *pos >= end,
            None => true,
        })
        .collect();

    let (tag_pos, tag_name) = match tags.as_slice() {
        [] => {
            return Err(ctx.error(
                ParseErrorKind::MissingActionTag,
                text.len(),
                "expected one of <propose .../>, <accept/>, <reject/>",
            ))
        }
        [single] => *single,
        [_, second, ..] => {
            return Err(ctx.error(
                ParseErrorKind::MultipleActions,
                second.0,
                &format!("found {} action tags, expected exactly one", tags.len()),
            ))
        }
    };

    let attrs = parse_tag_attributes(text, tag_pos)
        .map_err(|detail| ctx.error(ParseErrorKind::MalformedTerms, tag_pos, &detail))?;

    let action = match tag_name {
        TagName::Accept => {
            if let Some((name, _)) = attrs.first() {
                return Err(ctx.error(
                    ParseErrorKind::MalformedTerms,
                    tag_pos,
                    &format!("<accept/> takes no attributes, found `{name}`"),
                ));
            }
            Action::Accept
        }
        TagName::Reject => {
            let mut is_final = false;
            for (name, value) in &attrs {
                match (name.as_str(), value.as_str()) {
                    ("final", "true") => is_final = true,
                    ("final", "false") => is_final = false,
                    ("final", other) => {
                        return Err(ctx.error(
                            ParseErrorKind::MalformedTerms,
                            tag_pos,
                            &format!("final must be \"true\" or \"false\", found \"{other}\""),
                        ))
                    }
                    (other, _) => {
                        return Err(ctx.error(
                            ParseErrorKind::MalformedTerms,
                            tag_pos,
                            &format!("unexpected attribute `{other}` on <reject/>"),
                        ))
                    }
                }
            }
            Action::Reject { is_final }
        }
        TagName::Propose => {
            let terms =
                parse_terms(&attrs, bounds.kind()).map_err(|(kind, detail)| ctx.error(kind, tag_pos, &detail))?;
            bounds
                .check(&terms, speaker)
                .map_err(|v| ctx.error(ParseErrorKind::OutOfRangeTerms, tag_pos, &v.to_string()))?;
            Action::Propose { terms }
        }
    };

    Ok(AgentMessage { speaker, rationale, action, raw_text: text.to_string() })
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn error(&self, kind: ParseErrorKind, byte_pos: usize, detail: &str) -> ParseError {
        let byte_pos = byte_pos.min(self.text.len());
        let offset = self.text[..byte_pos].chars().count();
        let snippet: String = self.text[byte_pos..].chars().take(SNIPPET_MAX_CHARS).collect();
        ParseError { kind, offset, snippet, detail: detail.to_string() }
    }
}

/// Returns (block start, inner text, block end) byte positions.
fn find_rationale(text: &str) -> Option<(usize, &str, usize)> {
    const OPEN: &str = "<rationale>";
    const CLOSE: &str = "</rationale>";
    let start = find_ascii_ci(text, OPEN, 0)?;
    let inner_start = start + OPEN.len();
    let close = find_ascii_ci(text, CLOSE, inner_start)?;
    Some((start, &text[inner_start..close], close + CLOSE.len()))
}

fn find_ascii_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let hay = haystack.as_bytes();
    let needle = needle.as_bytes();
    if needle.len() > hay.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()].eq_ignore_ascii_case(needle))
}

fn find_action_tags(text: &str) -> Vec<(usize, TagName)> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        if b != b'<' {
            continue;
        }
        for (idx, name) in ACTION_TAGS.iter().enumerate() {
            let end = i + 1 + name.len();
            if end > bytes.len() || !bytes[i + 1..end].eq_ignore_ascii_case(name.as_bytes()) {
                continue;
            }
            let delimited = match bytes.get(end) {
                None => true,
                Some(c) => c.is_ascii_whitespace() || *c == b'/' || *c == b'>',
            };
            if delimited {
                let tag = [TagName::Propose, TagName::Accept, TagName::Reject][idx];
                found.push((i, tag));
            }
        }
    }
    found
}

/// Parses `name="value"` pairs of the tag starting at `pos`.
fn parse_tag_attributes(text: &str, pos: usize) -> Result<Vec<(String, String)>, String> {
    let bytes = text.as_bytes();
    let mut i = pos + 1;
    while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
        i += 1;
    }
    let mut attrs: Vec<(String, String)> = Vec::new();
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        match bytes.get(i) {
            None => return Err("action tag is not closed".into()),
            Some(b'>') => return Ok(attrs),
            Some(b'/') => {
                return if bytes.get(i + 1) == Some(&b'>') {
                    Ok(attrs)
                } else {
                    Err("expected `/>` to close the action tag".into())
                };
            }
            Some(c) if c.is_ascii_alphabetic() || *c == b'_' => {
                let name_start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let name = &text[name_start..i];
                if bytes.get(i) != Some(&b'=') {
                    return Err(format!("attribute `{name}` must be written as {name}=\"…\""));
                }
                i += 1;
                if bytes.get(i) != Some(&b'"') {
                    return Err(format!("value of `{name}` must be double-quoted"));
                }
                i += 1;
                let value_start = i;
                while i < bytes.len() && bytes[i] != b'"' {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(format!("unterminated value for `{name}`"));
                }
                let value = &text[value_start..i];
                i += 1;
                if attrs.iter().any(|(n, _)| n == name) {
                    return Err(format!("duplicate attribute `{name}`"));
                }
                attrs.push((name.to_string(), value.to_string()));
            }
            Some(_) => {
                let bad: String = text[i..].chars().next().map(String::from).unwrap_or_default();
                return Err(format!("unexpected `{bad}` inside action tag"));
            }
        }
    }
}

type TermsResult<T> = Result<T, (ParseErrorKind, String)>;

fn parse_terms(attrs: &[(String, String)], kind: GameKind) -> TermsResult<Terms> {
    let expected: &[&str] = match kind {
        GameKind::Ultimatum => &["split_to_p2"],
        GameKind::BuySell => &["price"],
        GameKind::ResourceExchange => &["give", "take"],
    };
    for (name, _) in attrs {
        if !expected.contains(&name.as_str()) {
            return Err((
                ParseErrorKind::MalformedTerms,
                format!("unexpected attribute `{name}` for the {kind} game (expected {})", expected.join(", ")),
            ));
        }
    }
    let get = |name: &str| -> TermsResult<&str> {
        attrs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| (ParseErrorKind::MalformedTerms, format!("missing attribute `{name}`")))
    };
    Ok(match kind {
        GameKind::Ultimatum => Terms::Split { split_to_p2: parse_count(get("split_to_p2")?)? },
        GameKind::BuySell => Terms::Price { price: parse_count(get("price")?)? },
        GameKind::ResourceExchange => {
            Terms::Trade { give: parse_bundle(get("give")?)?, take: parse_bundle(get("take")?)? }
        }
    })
}

/// ASCII digits only; anything else (including non-Latin numerals) is malformed.
fn parse_count(raw: &str) -> TermsResult<u32> {
    let s = raw.trim();
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err((ParseErrorKind::MalformedTerms, format!("`{raw}` is not a non-negative integer in ASCII digits")));
    }
    s.parse::<u32>().map_err(|_| (ParseErrorKind::OutOfRangeTerms, format!("`{s}` is too large")))
}

fn parse_bundle(raw: &str) -> TermsResult<ResourceBundle> {
    let mut bundle = ResourceBundle::new();
    let mut seen: Vec<&str> = Vec::new();
    if raw.trim().is_empty() {
        return Ok(bundle);
    }
    for item in raw.split(',') {
        let item = item.trim();
        let (name, count) = item.split_once(':').ok_or_else(|| {
            (ParseErrorKind::MalformedTerms, format!("bundle item `{item}` must look like KIND:COUNT"))
        })?;
        let name = name.trim();
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err((ParseErrorKind::MalformedTerms, format!("invalid resource name `{name}`")));
        }
        if seen.contains(&name) {
            return Err((ParseErrorKind::MalformedTerms, format!("resource `{name}` listed twice")));
        }
        seen.push(name);
        bundle.set(name, parse_count(count)?);
    }
    Ok(bundle)
}
