//! Parsing and classification of Web3 sign-in messages.
//!
//! A sign-in message is free-form text that by convention carries a
//! handful of recognizable fields: a human-readable statement, the
//! issuing site's domain and display name, an anti-replay nonce, and
//! optional extension fields (wallet address, version, validity
//! window). This module decomposes raw text into those fields,
//! classifies nonce values by shape, and diffs messages from the same
//! issuer to locate variable content.

use std::ops::Range;

use once_cell::sync::Lazy;
use regex::Regex;

/// Every field category a message can carry; nothing else is recognized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FieldKind {
    Statement,
    Domain,
    Name,
    Nonce,
    Address,
    Version,
    ChainId,
    IssuedAt,
    ExpirationTime,
    NotBefore,
    RequestId,
}

impl FieldKind {
    /// Fields whose value rotates between logins. Everything else is
    /// static content — the message "body".
    pub fn is_variable(self) -> bool {
        matches!(
            self,
            FieldKind::Nonce
                | FieldKind::Address
                | FieldKind::IssuedAt
                | FieldKind::ExpirationTime
                | FieldKind::NotBefore
                | FieldKind::RequestId
        )
    }

    /// Fields that belong to the protocol machinery rather than to the
    /// human-readable body: the nonce plus all extension fields.
    pub fn is_machinery(self) -> bool {
        !matches!(
            self,
            FieldKind::Statement | FieldKind::Domain | FieldKind::Name
        )
    }
}

/// Shape classification for nonce-like tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum NonceValueKind {
    /// Exactly 10 decimal digits (unix seconds).
    Timestamp10,
    /// Exactly 13 decimal digits (unix milliseconds).
    Timestamp13,
    /// An RFC 3339 date-time, fractional seconds and offsets included.
    DateTime,
    /// Fallback for any other alphanumeric token.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpan {
    pub kind: FieldKind,
    pub value: String,
    pub span: Range<usize>,
}

/// A message decomposed into fields. `body` is `raw` with every
/// variable-field span excised; reinserting the values at their spans
/// reconstructs `raw` exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedMessage {
    pub raw: String,
    pub fields: Vec<FieldSpan>,
    pub body: String,
}

impl ParsedMessage {
    pub fn field(&self, kind: FieldKind) -> Option<&FieldSpan> {
        self.fields.iter().find(|f| f.kind == kind)
    }

    pub fn has(&self, kind: FieldKind) -> bool {
        self.field(kind).is_some()
    }

    /// The lines carrying machinery fields (nonce and extension fields),
    /// in message order. This is what survives when the body is emptied.
    pub fn machinery_lines(&self) -> String {
        let mut lines = Vec::new();
        let mut offset = 0;
        for line in self.raw.split_inclusive('\n') {
            let range = offset..offset + line.len();
            offset = range.end;
            let keep = self.fields.iter().any(|f| {
                f.kind.is_machinery() && f.span.start < range.end && f.span.end > range.start
            });
            if keep {
                lines.push(line.trim_end_matches('\n'));
            }
        }
        lines.join("\n")
    }

    /// Reinserts the variable-field values into the body's complement.
    /// Used by tests to check the round-trip invariant.
    pub fn reconstruct(&self) -> String {
        let mut out = String::with_capacity(self.raw.len());
        let mut cursor = 0;
        for field in self.fields.iter().filter(|f| f.kind.is_variable()) {
            out.push_str(&self.raw[cursor..field.span.start]);
            out.push_str(&field.value);
            cursor = field.span.end;
        }
        out.push_str(&self.raw[cursor..]);
        out
    }
}

/// Target metadata that makes scanning deterministic: the display name
/// is matched by containment instead of guessed, and the expected
/// domain is preferred over other authorities in the text.
#[derive(Debug, Clone, Default)]
pub struct ParseHints {
    pub expected_domain: Option<String>,
    pub expected_name: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MessageError {
    #[error("variable-field detection needs at least two messages")]
    NeedMultipleSamples,
}

// Class patterns shared by the parser, the simulator's verification
// regexes, and the guard's wildcards.
pub const ADDRESS_PATTERN: &str = "0x[0-9a-fA-F]{40}";
pub const UUID_PATTERN: &str =
    "[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}";
pub const DATETIME_PATTERN: &str =
    r"\d{4}-\d{2}-\d{2}[Tt]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:[Zz]|[+-]\d{2}:\d{2})";
pub const NUMBER_PATTERN: &str = "[0-9]+";

static ADDRESS_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(&format!(r"\b{ADDRESS_PATTERN}\b")).unwrap());
static UUID_RE: Lazy<Regex> = Lazy::new(|| Regex::new(&format!("^{UUID_PATTERN}$")).unwrap());
static DATETIME_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(&format!("^{DATETIME_PATTERN}$")).unwrap());
static DIGITS_RE: Lazy<Regex> = Lazy::new(|| Regex::new("^[0-9]+$").unwrap());
static AUTHORITY_RE: Lazy<Regex> = Lazy::new(|| {
    // dot-separated hostname whose final label looks like a TLD
    Regex::new(r"\b(?:[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?\.)+[A-Za-z]{2,}\b").unwrap()
});

static LABELS: Lazy<Vec<(Regex, FieldKind)>> = Lazy::new(|| {
    let spec: &[(&str, FieldKind)] = &[
        (
            r"(?i)\b(?:nonce|challenge|timestamp)\s*:\s*(\S+)",
            FieldKind::Nonce,
        ),
        (r"(?i)\bissued[ \-]at\s*:\s*(\S+)", FieldKind::IssuedAt),
        (
            r"(?i)\bexpiration[ \-]time\s*:\s*(\S+)",
            FieldKind::ExpirationTime,
        ),
        (r"(?i)\bnot[ \-]before\s*:\s*(\S+)", FieldKind::NotBefore),
        (r"(?i)\brequest[ \-]id\s*:\s*(\S+)", FieldKind::RequestId),
        (r"(?i)\bchain[ \-]?id\s*:\s*(\S+)", FieldKind::ChainId),
        (r"(?i)\bversion\s*:\s*(\S+)", FieldKind::Version),
    ];
    spec.iter()
        .map(|(pat, kind)| (Regex::new(pat).unwrap(), *kind))
        .collect()
});

// Capitalized tokens that open greetings or instructions, never names.
const NAME_STOPWORDS: &[&str] = &[
    "Welcome",
    "Please",
    "Sign",
    "Click",
    "This",
    "That",
    "Your",
    "You",
    "Wallet",
    "Nonce",
    "Timestamp",
    "Hello",
    "Hi",
    "The",
    "By",
    "To",
    "In",
    "On",
    "At",
    "And",
    "Or",
    "Of",
    "Terms",
    "Service",
    "Address",
    "Message",
    "Login",
    "Request",
    "No",
    "Not",
];

/// Classifies a nonce-like token by shape. Total and pure.
pub fn classify_nonce_value(token: &str) -> NonceValueKind {
    if DIGITS_RE.is_match(token) {
        return match token.len() {
            13 => NonceValueKind::Timestamp13,
            10 => NonceValueKind::Timestamp10,
            _ => NonceValueKind::Random,
        };
    }
    if DATETIME_RE.is_match(token) && chrono::DateTime::parse_from_rfc3339(token).is_ok() {
        return NonceValueKind::DateTime;
    }
    NonceValueKind::Random
}

pub fn is_address_token(token: &str) -> bool {
    token.len() == 42
        && token.starts_with("0x")
        && token[2..].bytes().all(|b| b.is_ascii_hexdigit())
}

pub fn is_uuid_token(token: &str) -> bool {
    UUID_RE.is_match(token)
}

/// Splits on runs of whitespace, keeping the separators as their own
/// tokens so that concatenating the result reproduces the input.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let first_ws = rest.chars().next().unwrap().is_whitespace();
        let split = rest
            .char_indices()
            .find(|(_, c)| c.is_whitespace() != first_ws)
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        tokens.push(&rest[..split]);
        rest = &rest[split..];
    }
    tokens
}

pub fn is_separator(token: &str) -> bool {
    token.chars().next().is_some_and(|c| c.is_whitespace())
}

fn find_ci(haystack: &str, needle: &str) -> Option<Range<usize>> {
    if needle.is_empty() {
        return None;
    }
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    // lowercase can change byte lengths outside ASCII; walk char indices
    if hay.len() == haystack.len() {
        return hay.find(&needle).map(|start| start..start + needle.len());
    }
    haystack
        .char_indices()
        .map(|(i, _)| i)
        .find(|&i| haystack[i..].to_lowercase().starts_with(&needle))
        .map(|start| {
            let mut end = start;
            let mut matched = String::new();
            for (off, c) in haystack[start..].char_indices() {
                if matched.len() >= needle.len() {
                    break;
                }
                matched.extend(c.to_lowercase());
                end = start + off + c.len_utf8();
            }
            start..end
        })
}

struct Candidate {
    kind: FieldKind,
    span: Range<usize>,
    priority: u8,
}

/// Decomposes a raw message into fields. Never fails: text in which no
/// field is recognized becomes a single all-covering statement.
pub fn parse_message(raw: &str, hints: &ParseHints) -> ParsedMessage {
    let mut candidates: Vec<Candidate> = Vec::new();

    for m in ADDRESS_RE.find_iter(raw) {
        candidates.push(Candidate {
            kind: FieldKind::Address,
            span: m.range(),
            priority: 0,
        });
    }
    for (re, kind) in LABELS.iter() {
        for caps in re.captures_iter(raw) {
            let value = caps.get(1).unwrap();
            candidates.push(Candidate {
                kind: *kind,
                span: value.range(),
                priority: 1,
            });
        }
    }

    if let Some(domain) = hints.expected_domain.as_deref() {
        if let Some(span) = find_ci(raw, domain) {
            candidates.push(Candidate {
                kind: FieldKind::Domain,
                span,
                priority: 2,
            });
        }
    }
    for m in AUTHORITY_RE.find_iter(raw) {
        candidates.push(Candidate {
            kind: FieldKind::Domain,
            span: m.range(),
            priority: 3,
        });
    }

    match hints.expected_name.as_deref() {
        Some(name) => {
            if let Some(span) = find_ci(raw, name) {
                candidates.push(Candidate {
                    kind: FieldKind::Name,
                    span,
                    priority: 4,
                });
            }
        }
        None => {
            if let Some(span) = heuristic_name(raw) {
                candidates.push(Candidate {
                    kind: FieldKind::Name,
                    span,
                    priority: 5,
                });
            }
        }
    }

    // Accept by priority, then position; a kind appears at most once and
    // spans never overlap.
    candidates.sort_by_key(|c| (c.priority, c.span.start));
    let mut accepted: Vec<FieldSpan> = Vec::new();
    for cand in candidates {
        if accepted.iter().any(|a| a.kind == cand.kind) {
            continue;
        }
        let overlaps = accepted
            .iter()
            .any(|a| cand.span.start < a.span.end && cand.span.end > a.span.start);
        if overlaps {
            continue;
        }
        accepted.push(FieldSpan {
            kind: cand.kind,
            value: raw[cand.span.clone()].to_string(),
            span: cand.span,
        });
    }
    accepted.sort_by_key(|f| f.span.start);

    // Remaining regions become statements.
    let mut fields = Vec::new();
    let mut cursor = 0;
    for f in &accepted {
        push_statement(raw, cursor..f.span.start, &mut fields);
        cursor = f.span.end;
    }
    push_statement(raw, cursor..raw.len(), &mut fields);
    fields.extend(accepted);
    fields.sort_by_key(|f| f.span.start);

    let mut body = String::with_capacity(raw.len());
    let mut cursor = 0;
    for f in fields.iter().filter(|f| f.kind.is_variable()) {
        body.push_str(&raw[cursor..f.span.start]);
        cursor = f.span.end;
    }
    body.push_str(&raw[cursor..]);

    ParsedMessage {
        raw: raw.to_string(),
        fields,
        body,
    }
}

fn push_statement(raw: &str, region: Range<usize>, fields: &mut Vec<FieldSpan>) {
    let text = &raw[region.clone()];
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return;
    }
    let start = region.start + (text.len() - text.trim_start().len());
    let span = start..start + trimmed.len();
    fields.push(FieldSpan {
        kind: FieldKind::Statement,
        value: trimmed.to_string(),
        span,
    });
}

/// Without a hint, the name is the first capitalized alphanumeric token
/// in the first two lines that neither opens a sentence nor is a common
/// greeting word.
fn heuristic_name(raw: &str) -> Option<Range<usize>> {
    let mut offset = 0;
    let mut lines_seen = 0;
    for line in raw.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let content = line.trim_end_matches('\n');
        if content.trim().is_empty() {
            continue;
        }
        lines_seen += 1;
        if lines_seen > 2 {
            break;
        }
        let mut sentence_start = true;
        for tok in tokenize(content) {
            let tok_start = tok.as_ptr() as usize - content.as_ptr() as usize;
            if is_separator(tok) {
                continue;
            }
            let stripped = tok.trim_matches(|c: char| !c.is_alphanumeric());
            if stripped.is_empty() {
                continue;
            }
            let opens_sentence = sentence_start;
            sentence_start = tok.ends_with(['.', '!', '?']);
            let mut chars = stripped.chars();
            let first = chars.next().unwrap();
            let qualifies = !opens_sentence
                && stripped.len() >= 2
                && first.is_uppercase()
                && stripped.chars().all(|c| c.is_alphanumeric())
                && !NAME_STOPWORDS.contains(&stripped);
            if qualifies {
                let inner = tok_start
                    + (tok.len() - tok.trim_start_matches(|c: char| !c.is_alphanumeric()).len());
                let start = line_start + inner;
                return Some(start..start + stripped.len());
            }
        }
    }
    None
}

/// A token position at which same-issuer messages disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpan {
    /// Index into the whitespace-preserving token sequence.
    pub token_index: usize,
    pub kind: NonceValueKind,
    /// Wallet-address tokens vary per user but are not nonces.
    pub is_address: bool,
}

impl VariableSpan {
    pub fn is_nonce(&self) -> bool {
        !self.is_address
    }
}

/// Compares two or more messages from the same issuer token by token and
/// reports the positions that differ, each classified by value shape.
pub fn detect_variable_spans(messages: &[&str]) -> Result<Vec<VariableSpan>, MessageError> {
    if messages.len() < 2 {
        return Err(MessageError::NeedMultipleSamples);
    }
    let token_lists: Vec<Vec<&str>> = messages.iter().map(|m| tokenize(m)).collect();
    let same_shape = token_lists.iter().all(|t| t.len() == token_lists[0].len());

    let mut spans = Vec::new();
    if same_shape {
        for idx in 0..token_lists[0].len() {
            let first = token_lists[0][idx];
            if token_lists.iter().all(|t| t[idx] == first) {
                continue;
            }
            spans.push(classify_position(idx, token_lists.iter().map(|t| t[idx])));
        }
    } else {
        // shape drift: mark every token of the first message that fails to
        // align with all the others under a longest-common-subsequence
        let base = &token_lists[0];
        let mut stable = vec![true; base.len()];
        for other in &token_lists[1..] {
            let matched = lcs_matched(base, other);
            for (i, ok) in matched.iter().enumerate() {
                stable[i] &= ok;
            }
        }
        for (idx, _) in base.iter().enumerate() {
            if !stable[idx] {
                spans.push(classify_position(idx, std::iter::once(base[idx])));
            }
        }
    }
    Ok(spans)
}

fn classify_position<'a>(idx: usize, tokens: impl Iterator<Item = &'a str>) -> VariableSpan {
    let tokens: Vec<&str> = tokens.collect();
    let is_address = tokens.iter().all(|t| is_address_token(t));
    let mut kinds = tokens.iter().map(|t| classify_nonce_value(t));
    let first = kinds.next().unwrap_or(NonceValueKind::Random);
    let kind = if kinds.all(|k| k == first) {
        first
    } else {
        NonceValueKind::Random
    };
    VariableSpan {
        token_index: idx,
        kind,
        is_address,
    }
}

/// For each token of `a`, whether it participates in an LCS with `b`.
pub fn lcs_matched(a: &[&str], b: &[&str]) -> Vec<bool> {
    let n = a.len();
    let m = b.len();
    let mut table = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if a[i] == b[j] {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let mut matched = vec![false; n];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            matched[i] = true;
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    matched
}
