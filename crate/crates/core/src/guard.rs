//! Wallet-side defense engine: message templates and alert decisions.
//!
//! Every login records the site's sign-in message under its origin
//! domain. Repeat logins diff the new message against the stored
//! template word by word; rotating values collapse into typed wildcards
//! (address, number, date-time, uuid) so one compact template describes
//! all of a site's messages. When a signature request arrives, the
//! engine searches every *other* site's template inside the new message
//! — a hit means some site's login message is being presented by a
//! foreign origin, the signature-phishing signature — and independently
//! warns when the requesting origin does not appear in the message text.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::message::{
    classify_nonce_value, is_address_token, is_separator, is_uuid_token, tokenize, NonceValueKind,
    ADDRESS_PATTERN, DATETIME_PATTERN, NUMBER_PATTERN, UUID_PATTERN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WildcardClass {
    #[serde(rename = "addr")]
    Address,
    #[serde(rename = "num")]
    Number,
    #[serde(rename = "dt")]
    DateTime,
    #[serde(rename = "uuid")]
    Uuid,
    #[serde(rename = "any")]
    Generic,
}

impl WildcardClass {
    pub fn pattern(self) -> &'static str {
        match self {
            WildcardClass::Address => ADDRESS_PATTERN,
            WildcardClass::Number => NUMBER_PATTERN,
            WildcardClass::DateTime => DATETIME_PATTERN,
            WildcardClass::Uuid => UUID_PATTERN,
            WildcardClass::Generic => r"\S+",
        }
    }

    fn matches(self, token: &str) -> bool {
        match self {
            WildcardClass::Address => is_address_token(token),
            WildcardClass::Number => !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()),
            WildcardClass::DateTime => classify_nonce_value(token) == NonceValueKind::DateTime,
            WildcardClass::Uuid => is_uuid_token(token),
            WildcardClass::Generic => !token.is_empty() && !is_separator(token),
        }
    }
}

/// The narrowest class containing both sides of a diff, or `Generic`.
fn narrowest_class(a: &str, b: &str) -> WildcardClass {
    for class in [
        WildcardClass::Uuid,
        WildcardClass::Address,
        WildcardClass::DateTime,
        WildcardClass::Number,
    ] {
        if class.matches(a) && class.matches(b) {
            return class;
        }
    }
    WildcardClass::Generic
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateToken {
    Literal { lit: String },
    Wildcard { wc: WildcardClass },
}

impl TemplateToken {
    pub fn literal(text: impl Into<String>) -> TemplateToken {
        TemplateToken::Literal { lit: text.into() }
    }

    pub fn wildcard(class: WildcardClass) -> TemplateToken {
        TemplateToken::Wildcard { wc: class }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTemplate {
    #[serde(skip)]
    pub origin_domain: String,
    pub tokens: Vec<TemplateToken>,
    pub updated_at: i64,
    pub sample_count: u32,
}

impl MessageTemplate {
    /// The first login stores the raw message as one all-literal token.
    pub fn from_first_login(origin_domain: &str, message: &str) -> MessageTemplate {
        let tokens = if message.is_empty() {
            Vec::new()
        } else {
            vec![TemplateToken::literal(message)]
        };
        MessageTemplate {
            origin_domain: origin_domain.to_string(),
            tokens,
            updated_at: chrono::Utc::now().timestamp(),
            sample_count: 1,
        }
    }
}

/// One diffable token: a literal word/separator or a typed wildcard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DiffTok<'a> {
    Lit(&'a str),
    Wc(WildcardClass),
}

fn expand(template: &MessageTemplate) -> Vec<DiffTok<'_>> {
    let mut out = Vec::new();
    for token in &template.tokens {
        match token {
            TemplateToken::Literal { lit } => {
                out.extend(tokenize(lit).into_iter().map(DiffTok::Lit))
            }
            TemplateToken::Wildcard { wc } => out.push(DiffTok::Wc(*wc)),
        }
    }
    out
}

fn coalesce(tokens: Vec<TemplateToken>) -> Vec<TemplateToken> {
    let mut out: Vec<TemplateToken> = Vec::new();
    for token in tokens {
        match (out.last_mut(), token) {
            (Some(TemplateToken::Literal { lit }), TemplateToken::Literal { lit: next }) => {
                lit.push_str(&next)
            }
            (_, token) => out.push(token),
        }
    }
    out
}

fn tok_matches(stored: DiffTok<'_>, new: &str) -> bool {
    match stored {
        DiffTok::Lit(text) => text == new,
        DiffTok::Wc(class) => !is_separator(new) && class.matches(new),
    }
}

/// Merges a stored template with a newly observed message. Equal tokens
/// stay literal, differing tokens become the narrowest wildcard class
/// covering both sides; when the token counts differ, tokens are aligned
/// by longest common subsequence and the new message's unmatched tokens
/// become generic wildcards. The result supersedes the stored template.
pub fn extract_template(stored: &MessageTemplate, new_message: &str) -> MessageTemplate {
    let stored_tokens = expand(stored);
    let new_tokens = tokenize(new_message);

    let aligned = stored_tokens.len() == new_tokens.len()
        && stored_tokens.iter().zip(&new_tokens).all(|(s, n)| match s {
            DiffTok::Lit(text) => is_separator(text) == is_separator(n),
            DiffTok::Wc(_) => !is_separator(n),
        });

    let merged = if aligned {
        stored_tokens
            .iter()
            .zip(&new_tokens)
            .map(|(s, n)| merge_pair(*s, n))
            .collect()
    } else {
        lcs_merge(&stored_tokens, &new_tokens)
    };

    MessageTemplate {
        origin_domain: stored.origin_domain.clone(),
        tokens: coalesce(merged),
        updated_at: chrono::Utc::now().timestamp(),
        sample_count: stored.sample_count.saturating_add(1),
    }
}

fn merge_pair(stored: DiffTok<'_>, new: &str) -> TemplateToken {
    match stored {
        DiffTok::Lit(text) if text == new => TemplateToken::literal(new),
        DiffTok::Lit(text) if is_separator(text) && is_separator(new) => {
            TemplateToken::literal(new)
        }
        DiffTok::Lit(text) => TemplateToken::wildcard(narrowest_class(text, new)),
        DiffTok::Wc(class) if class.matches(new) => TemplateToken::wildcard(class),
        DiffTok::Wc(_) => TemplateToken::wildcard(WildcardClass::Generic),
    }
}

fn lcs_merge(stored: &[DiffTok<'_>], new: &[&str]) -> Vec<TemplateToken> {
    let n = stored.len();
    let m = new.len();
    let mut table = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if tok_matches(stored[i], new[j]) {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if tok_matches(stored[i], new[j]) {
            out.push(merge_pair(stored[i], new[j]));
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            // stored-only token: the new shape dropped it
            i += 1;
        } else {
            out.push(gap_token(new[j]));
            j += 1;
        }
    }
    while j < m {
        out.push(gap_token(new[j]));
        j += 1;
    }
    out
}

fn gap_token(new: &str) -> TemplateToken {
    if is_separator(new) {
        TemplateToken::literal(new)
    } else {
        TemplateToken::wildcard(WildcardClass::Generic)
    }
}

/// Compiles a template into an unanchored matcher, so a template found
/// anywhere inside a longer message still counts — the containment
/// search that catches embedded-message reuse. Empty templates match
/// nothing.
pub fn compile_matcher(template: &MessageTemplate) -> Option<Regex> {
    if template.tokens.is_empty() {
        return None;
    }
    let mut pattern = String::from("(?s)");
    for token in &template.tokens {
        match token {
            TemplateToken::Literal { lit } => pattern.push_str(&regex::escape(lit)),
            TemplateToken::Wildcard { wc } => {
                pattern.push_str("(?:");
                pattern.push_str(wc.pattern());
                pattern.push(')');
            }
        }
    }
    Regex::new(&pattern).ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RedAlert {
    pub victim_domain: String,
}

/// The two independent alerts: red for a suspected blind message attack
/// (some other site's template matches), yellow for a message that does
/// not mention the requesting origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlertDecision {
    pub red: Option<RedAlert>,
    pub yellow: bool,
}

/// Lowercases and strips scheme, `www.` prefix, port, and trailing
/// slash, so `https://www.Site.example:443/` compares as `site.example`.
pub fn normalize_origin(origin: &str) -> String {
    let mut s = origin.trim().to_lowercase();
    for scheme in ["https://", "http://"] {
        if let Some(rest) = s.strip_prefix(scheme) {
            s = rest.to_string();
        }
    }
    if let Some(slash) = s.find('/') {
        s.truncate(slash);
    }
    if let Some(rest) = s.strip_prefix("www.") {
        s = rest.to_string();
    }
    if let Some(colon) = s.rfind(':') {
        if s[colon + 1..].bytes().all(|b| b.is_ascii_digit()) && colon + 1 < s.len() {
            s.truncate(colon);
        }
    }
    s
}

/// One template per domain, persisted as a single JSON file.
#[derive(Debug, Clone, Default)]
pub struct TemplateStore {
    templates: BTreeMap<String, MessageTemplate>,
}

impl TemplateStore {
    pub fn new() -> TemplateStore {
        TemplateStore::default()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn template(&self, domain: &str) -> Option<&MessageTemplate> {
        self.templates.get(&normalize_origin(domain))
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Records a login: the first message for a domain is stored raw,
    /// later ones refine the template. Exactly one template per domain.
    pub fn record_login(&mut self, origin_domain: &str, message: &str) {
        let key = normalize_origin(origin_domain);
        let next = match self.templates.get(&key) {
            Some(stored) => extract_template(stored, message),
            None => MessageTemplate::from_first_login(&key, message),
        };
        self.templates.insert(key, next);
    }

    pub fn serialized(&self) -> String {
        serde_json::to_string(&self.templates).expect("template store serializes")
    }

    pub fn load(path: &Path) -> std::io::Result<TemplateStore> {
        let text = std::fs::read_to_string(path)?;
        let mut templates: BTreeMap<String, MessageTemplate> = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        for (domain, template) in templates.iter_mut() {
            template.origin_domain = domain.clone();
        }
        Ok(TemplateStore { templates })
    }

    /// Write-replace so a crash never leaves a torn store behind.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.serialized())?;
        std::fs::rename(&tmp, path)
    }
}

/// Decides the alerts for one signature request: red when any other
/// domain's template is found inside the message, yellow when the
/// requesting origin does not occur in the message text.
pub fn check_signature_request(
    message: &str,
    origin_domain: &str,
    store: &TemplateStore,
) -> AlertDecision {
    let origin = normalize_origin(origin_domain);
    let mut red = None;
    for (domain, template) in &store.templates {
        if *domain == origin {
            continue;
        }
        if let Some(matcher) = compile_matcher(template) {
            if matcher.is_match(message) {
                red = Some(RedAlert {
                    victim_domain: domain.clone(),
                });
                break;
            }
        }
    }
    let yellow = !message.to_lowercase().contains(&origin);
    AlertDecision { red, yellow }
}
