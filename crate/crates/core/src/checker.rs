//! The vulnerability checkers, nonce-type inference, and risk classifier.
//!
//! Three checkers probe one aspect each of a target's authentication:
//!
//! * the message checker signs tampered messages (random string, emptied
//!   body, random prefix) to see what the server still accepts;
//! * the nonce checker diffs messages from two addresses to locate the
//!   nonce, then runs a five-AUTH sequence whose success pattern pins the
//!   nonce lifecycle (one-time, temporary, time-based, or not checked at
//!   all);
//! * the signature checker submits a null signature, a wrong signature,
//!   and a swapped address.
//!
//! A scan composes the three into a `Finding`, classifies the blind-
//! message-attack risk, and flags replay and multi-message exposure.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::crypto::{personal_sign, KeyPair, KeypairPool};
use crate::message::{
    classify_nonce_value, detect_variable_spans, is_separator, is_uuid_token, parse_message,
    tokenize, FieldKind, NonceValueKind, ParseHints, VariableSpan,
};
use crate::transport::{
    now_ms, now_s, render, render_template, resolve_builtins, resolve_path, rfc3339_ms, HttpClient,
    RequestItem, Role, SessionContext, TargetConfig, TraceEntry, TransportError, ValueGenerator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    V2,
    V3,
    Fail,
    NotApplicable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "ok",
            Verdict::V2 => "V2",
            Verdict::V3 => "V3",
            Verdict::Fail => "fail",
            Verdict::NotApplicable => "n/a",
        })
    }
}

/// Which fields the issued message carries (the design aspect).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MessageFields {
    pub has_domain: bool,
    pub has_name: bool,
    pub has_nonce: bool,
}

/// What the server actually verifies (the implementation aspect).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ServerChecks {
    pub message: Verdict,
    pub body: Verdict,
    pub nonce: Verdict,
    pub signature: Verdict,
    pub address: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NonceLifecycle {
    OneTime,
    Temporary,
    TimeBased,
    InvalidNonce,
    NoNonce,
}

impl std::fmt::Display for NonceLifecycle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NonceLifecycle::OneTime => "one-time",
            NonceLifecycle::Temporary => "temporary",
            NonceLifecycle::TimeBased => "time-based",
            NonceLifecycle::InvalidNonce => "invalid-nonce",
            NonceLifecycle::NoNonce => "no-nonce",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub probe: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub message_fields: MessageFields,
    pub server_checks: ServerChecks,
    pub nonce_kind: NonceLifecycle,
    pub evidence: Vec<Evidence>,
}

/// Blind-message-attack severity, totally ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum RiskLevel {
    Low,
    Medium,
    High,
    Critical,
}

impl RiskLevel {
    pub fn letter(self) -> &'static str {
        match self {
            RiskLevel::Critical => "C",
            RiskLevel::High => "H",
            RiskLevel::Medium => "M",
            RiskLevel::Low => "L",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub label: String,
    pub finding: Finding,
    pub risk: RiskLevel,
    pub replay_risk: bool,
    pub bmma_risk: bool,
    /// Wall-clock per checker phase; excluded from serialized reports so
    /// repeated runs stay byte-identical.
    #[serde(skip_serializing)]
    pub timing: Vec<(String, Duration)>,
    pub requests_issued: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("target '{0}' is broken: honest authentication failed ({1})")]
    TargetBroken(String, String),
    #[error("target '{0}': {1}")]
    Invalid(String, String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("targets not combinable: {0}")]
    NotCombinable(String),
}

/// Risk per the four-level model: critical when the server skips
/// message/signature/address verification outright, high when users
/// cannot identify the message source (or the body is rewritable),
/// medium when only the name identifies the site or the body check is
/// containment, low otherwise. Multiple hits keep the worst level.
pub fn classify_risk(finding: &Finding) -> RiskLevel {
    let fields = &finding.message_fields;
    let checks = &finding.server_checks;
    let mut level = RiskLevel::Low;
    if (!fields.has_domain && fields.has_name) || checks.body == Verdict::V3 {
        level = level.max(RiskLevel::Medium);
    }
    if (!fields.has_domain && !fields.has_name) || checks.body == Verdict::V2 {
        level = level.max(RiskLevel::High);
    }
    if checks.message == Verdict::V2
        || checks.signature == Verdict::Fail
        || checks.address == Verdict::Fail
    {
        level = level.max(RiskLevel::Critical);
    }
    level
}

/// Replay risk: no nonce, or a nonce the server never really checks.
/// Temporary and time-based nonces are only a short-term exposure and
/// are not flagged.
pub fn flag_replay(finding: &Finding) -> bool {
    matches!(
        finding.nonce_kind,
        NonceLifecycle::NoNonce | NonceLifecycle::InvalidNonce
    )
}

/// Multi-message risk: the body can be rewritten (V2) or merely has to
/// be contained (V3), so one crafted message can satisfy several sites.
pub fn flag_bmma(finding: &Finding) -> bool {
    matches!(finding.server_checks.body, Verdict::V2 | Verdict::V3)
        || finding.server_checks.message == Verdict::V2
}

#[derive(Debug, Clone)]
pub struct MessageCheck {
    pub has_domain: bool,
    pub has_name: bool,
    pub message: Verdict,
    pub body: Verdict,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone)]
pub struct NonceCheck {
    pub kind: NonceLifecycle,
    pub verdict: Verdict,
    pub spans: Vec<VariableSpan>,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone)]
pub struct SignatureCheck {
    pub signature: Verdict,
    pub address: Verdict,
    pub evidence: Vec<Evidence>,
}

struct AuthOutcome {
    token_issued: bool,
    detail: String,
}

struct StageInfo {
    status: u16,
    stage: Option<(String, String)>,
}

/// Drives the probes for one or more targets. Holds the seeded value
/// generator, so a scanner instance is deterministic for a given seed.
pub struct Scanner<'a> {
    client: &'a HttpClient,
    keys: &'a KeypairPool,
    gen: ValueGenerator,
    requests: u64,
}

impl<'a> Scanner<'a> {
    pub fn new(client: &'a HttpClient, keys: &'a KeypairPool, seed: u64) -> Scanner<'a> {
        assert!(
            keys.len() >= 2,
            "the nonce checker needs two distinct addresses"
        );
        Scanner {
            client,
            keys,
            gen: ValueGenerator::from_seed(seed),
            requests: 0,
        }
    }

    pub fn requests_issued(&self) -> u64 {
        self.requests
    }

    fn key(&self, index: usize) -> &KeyPair {
        self.keys.key(index)
    }

    fn execute_item(
        &mut self,
        item: &RequestItem,
        session: &mut SessionContext,
        local: BTreeMap<String, String>,
    ) -> Result<StageInfo, TransportError> {
        let local = resolve_builtins(item, session, &local, &mut self.gen);
        let request = render(item, session, &local)?;
        self.requests += 1;
        match self.client.execute(&request) {
            Ok(response) => {
                session.trace.push(TraceEntry {
                    role: item.role,
                    request: Some(request),
                    status: Some(response.status),
                    error: None,
                    extracted: BTreeMap::new(),
                    misses: Vec::new(),
                });
                // rejection stage/reason keep the evidence legible
                let stage = resolve_path(&response, "error.stage").map(|stage| {
                    (
                        stage,
                        resolve_path(&response, "error.reason").unwrap_or_default(),
                    )
                });
                crate::transport::extract_outputs(&response, &item.outputs, session);
                Ok(StageInfo {
                    status: response.status,
                    stage,
                })
            }
            Err(err) => {
                session.trace.push(TraceEntry {
                    role: item.role,
                    request: Some(request),
                    status: None,
                    error: Some(err.to_string()),
                    extracted: BTreeMap::new(),
                    misses: Vec::new(),
                });
                Err(err)
            }
        }
    }

    /// Starts a probe from scratch: runs QUERY (when the target has one)
    /// and returns the sign-in message plus the session carrying any
    /// other extracted bindings.
    fn fresh_query(
        &mut self,
        target: &TargetConfig,
        key_index: usize,
    ) -> Result<(String, SessionContext), ScanError> {
        let mut session = SessionContext::new();
        let addr = self.key(key_index).address().to_hex();
        session.bindings.insert("addr".into(), addr.clone());
        if let Some(query) = target.item(Role::Query) {
            let mut local = BTreeMap::new();
            local.insert("addr".to_string(), addr);
            self.execute_item(query, &mut session, local)
                .map_err(ScanError::Transport)?;
        }
        if let Some(message) = session.get("msg") {
            return Ok((message.to_string(), session));
        }
        // sites whose front-end composes the message locally describe it
        // as an AUTH input template
        let auth = target
            .item(Role::Auth)
            .ok_or_else(|| ScanError::Invalid(target.label.clone(), "no AUTH item".into()))?;
        match auth.inputs.get("msg") {
            Some(template) => {
                let local = resolve_builtins(auth, &session, &BTreeMap::new(), &mut self.gen);
                let message = render_template(template, auth, &session, &local)
                    .map_err(ScanError::Transport)?;
                session.bindings.insert("msg".into(), message.clone());
                Ok((message, session))
            }
            None => Err(ScanError::Invalid(
                target.label.clone(),
                "target yields no sign-in message".into(),
            )),
        }
    }

    /// Sends one AUTH with explicit message/signature/address overrides
    /// and reports whether a token was issued.
    fn auth_in_session(
        &mut self,
        target: &TargetConfig,
        session: &mut SessionContext,
        message: &str,
        signature: &str,
        address: &str,
    ) -> AuthOutcome {
        let auth = match target.item(Role::Auth) {
            Some(item) => item,
            None => {
                return AuthOutcome {
                    token_issued: false,
                    detail: "no AUTH item".into(),
                }
            }
        };
        let mut local = BTreeMap::new();
        local.insert("msg".to_string(), message.to_string());
        local.insert("sig".to_string(), signature.to_string());
        local.insert("addr".to_string(), address.to_string());
        let info = match self.execute_item(auth, session, local) {
            Ok(info) => info,
            Err(err) => {
                return AuthOutcome {
                    token_issued: false,
                    detail: format!("inconclusive: {err}"),
                }
            }
        };
        let status = info.status;
        let entry = session.trace.last().expect("auth trace entry");
        let mut token_issued = entry
            .extracted
            .get(&target.token_key)
            .map(|v| !v.is_empty())
            .unwrap_or(false);
        let mut detail = if token_issued {
            format!("status={status} token issued")
        } else {
            match &info.stage {
                Some((stage, reason)) => {
                    format!("status={status} rejected at {stage}: {reason}")
                }
                None => format!("status={status} no token"),
            }
        };
        // some sites confirm only via ACCESS: a 2xx AUTH without a token
        // binding falls back to replaying the token-less confirmation
        if !token_issued && (200..300).contains(&status) {
            if let Some(access) = target.item(Role::Access) {
                if let Ok(info) = self.execute_item(access, session, BTreeMap::new()) {
                    if (200..300).contains(&info.status) {
                        token_issued = true;
                        detail = format!("status={status} access confirmed");
                    }
                }
            }
        }
        AuthOutcome {
            token_issued,
            detail,
        }
    }

    fn sign_with(&self, message: &str, key_index: usize) -> String {
        personal_sign(message, self.key(key_index)).to_hex()
    }

    /// Message checker: design flags plus the three tampering probes.
    pub fn check_message(&mut self, target: &TargetConfig) -> Result<MessageCheck, ScanError> {
        let mut evidence = Vec::new();
        let hints = ParseHints {
            expected_domain: Some(target.host.clone()),
            expected_name: target.expected_name.clone(),
        };

        let (baseline, _) = self.fresh_query(target, 0)?;
        let parsed = parse_message(&baseline, &hints);
        let has_domain = parsed.has(FieldKind::Domain);
        let has_name = parsed.has(FieldKind::Name);
        evidence.push(Evidence {
            probe: "message:fields".into(),
            detail: format!("domain={has_domain} name={has_name}"),
        });

        // (1) replace the whole message with a random string
        let (_, mut session) = self.fresh_query(target, 0)?;
        let random = self.gen.rand_alnum(32);
        let sig = self.sign_with(&random, 0);
        let addr = self.key(0).address().to_hex();
        let outcome = self.auth_in_session(target, &mut session, &random, &sig, &addr);
        let message_verdict = if outcome.token_issued {
            Verdict::V2
        } else {
            Verdict::Pass
        };
        evidence.push(Evidence {
            probe: "message:random-string".into(),
            detail: outcome.detail,
        });

        // (2) empty the body, keeping the machinery lines
        let (genuine, mut session) = self.fresh_query(target, 0)?;
        let emptied = parse_message(&genuine, &hints).machinery_lines();
        let sig = self.sign_with(&emptied, 0);
        let outcome = self.auth_in_session(target, &mut session, &emptied, &sig, &addr);
        let body_emptied = outcome.token_issued;
        evidence.push(Evidence {
            probe: "body:emptied".into(),
            detail: outcome.detail,
        });

        // (3) prepend random characters to a genuine message
        let (genuine, mut session) = self.fresh_query(target, 0)?;
        let prefixed = format!("{}\n{genuine}", self.gen.rand_letters(12));
        let sig = self.sign_with(&prefixed, 0);
        let outcome = self.auth_in_session(target, &mut session, &prefixed, &sig, &addr);
        let body_prefixed = outcome.token_issued;
        evidence.push(Evidence {
            probe: "body:prefixed".into(),
            detail: outcome.detail,
        });

        let body = if body_emptied {
            Verdict::V2
        } else if body_prefixed {
            Verdict::V3
        } else {
            Verdict::Pass
        };
        Ok(MessageCheck {
            has_domain,
            has_name,
            message: message_verdict,
            body,
            evidence,
        })
    }

    /// Nonce checker: locates variable fields by cross-address diff,
    /// then classifies the lifecycle from the five-AUTH success pattern:
    /// replay, cross-address message, similar value, removed value.
    pub fn check_nonce(&mut self, target: &TargetConfig) -> Result<NonceCheck, ScanError> {
        let mut evidence = Vec::new();

        let (msg_a, _) = self.fresh_query(target, 0)?;
        let (msg_b, _) = self.fresh_query(target, 1)?;
        let spans =
            detect_variable_spans(&[msg_a.as_str(), msg_b.as_str()]).expect("two samples provided");
        let nonce_spans: Vec<&VariableSpan> = spans.iter().filter(|s| s.is_nonce()).collect();
        evidence.push(Evidence {
            probe: "nonce:detect".into(),
            detail: format!(
                "variable positions={} nonce positions={}",
                spans.len(),
                nonce_spans.len()
            ),
        });
        if nonce_spans.is_empty() {
            return Ok(NonceCheck {
                kind: NonceLifecycle::NoNonce,
                verdict: Verdict::NotApplicable,
                spans,
                evidence,
            });
        }

        let addr0 = self.key(0).address().to_hex();
        let mut successes = 0usize;
        let mut failed = false;

        // 1st: honest QUERY + AUTH
        let (msg1, mut session1) = self.fresh_query(target, 0)?;
        let sig1 = self.sign_with(&msg1, 0);
        let outcome = self.auth_in_session(target, &mut session1, &msg1, &sig1, &addr0);
        evidence.push(Evidence {
            probe: "nonce:auth-1-honest".into(),
            detail: outcome.detail.clone(),
        });
        if !outcome.token_issued {
            return Err(ScanError::TargetBroken(
                target.label.clone(),
                outcome.detail,
            ));
        }
        successes += 1;

        // 2nd: replay the identical request
        let outcome = self.auth_in_session(target, &mut session1, &msg1, &sig1, &addr0);
        evidence.push(Evidence {
            probe: "nonce:auth-2-replay".into(),
            detail: outcome.detail,
        });
        if outcome.token_issued {
            successes += 1;
        } else {
            failed = true;
        }

        // 3rd: another address's message, signed by the old key
        if !failed {
            let (msg3, mut session3) = self.fresh_query(target, 1)?;
            let sig3 = self.sign_with(&msg3, 0);
            let outcome = self.auth_in_session(target, &mut session3, &msg3, &sig3, &addr0);
            evidence.push(Evidence {
                probe: "nonce:auth-3-cross".into(),
                detail: outcome.detail,
            });
            if outcome.token_issued {
                successes += 1;
            } else {
                failed = true;
                evidence.push(Evidence {
                    probe: "nonce:auth-3-cross".into(),
                    detail: "nonce appears bound to the requesting address".into(),
                });
            }
        }

        // 4th: substitute a freshly generated similar value
        if !failed {
            let (msg4, mut session4) = self.fresh_query(target, 0)?;
            let (replaced, used_time_value) = self.replace_spans(&msg4, &spans);
            let sig4 = self.sign_with(&replaced, 0);
            let outcome = self.auth_in_session(target, &mut session4, &replaced, &sig4, &addr0);
            let mut detail = outcome.detail;
            if used_time_value {
                detail.push_str("; similar value was a current timestamp");
            }
            evidence.push(Evidence {
                probe: "nonce:auth-4-similar".into(),
                detail,
            });
            if outcome.token_issued {
                successes += 1;
            } else {
                failed = true;
            }
        }

        // 5th: remove the nonce value (labels stay)
        if !failed {
            let (msg5, mut session5) = self.fresh_query(target, 0)?;
            let removed = remove_spans(&msg5, &spans);
            let sig5 = self.sign_with(&removed, 0);
            let outcome = self.auth_in_session(target, &mut session5, &removed, &sig5, &addr0);
            evidence.push(Evidence {
                probe: "nonce:auth-5-removed".into(),
                detail: outcome.detail,
            });
            if outcome.token_issued {
                successes += 1;
            }
        }

        let kind = match successes {
            1 => NonceLifecycle::OneTime,
            2 | 3 => NonceLifecycle::Temporary,
            4 => NonceLifecycle::TimeBased,
            _ => NonceLifecycle::InvalidNonce,
        };

        let verdict = match kind {
            NonceLifecycle::InvalidNonce => {
                let time_valued = nonce_spans.iter().any(|s| {
                    matches!(
                        s.kind,
                        NonceValueKind::Timestamp10
                            | NonceValueKind::Timestamp13
                            | NonceValueKind::DateTime
                    )
                });
                if time_valued {
                    // a server that rejects future-dated values does run a
                    // time check; accepting everything else makes it the
                    // no-expiry flaw rather than a missing check
                    let (msg6, mut session6) = self.fresh_query(target, 0)?;
                    let future = self.replace_spans_future(&msg6, &spans);
                    let sig6 = self.sign_with(&future, 0);
                    let outcome =
                        self.auth_in_session(target, &mut session6, &future, &sig6, &addr0);
                    evidence.push(Evidence {
                        probe: "nonce:auth-6-future".into(),
                        detail: outcome.detail,
                    });
                    if outcome.token_issued {
                        Verdict::V2
                    } else {
                        Verdict::V3
                    }
                } else {
                    Verdict::V2
                }
            }
            _ => Verdict::Pass,
        };

        Ok(NonceCheck {
            kind,
            verdict,
            spans,
            evidence,
        })
    }

    /// Replaces every non-address variable token with a freshly generated
    /// value of the same shape. Returns whether any replacement was a
    /// current timestamp (the Temporary/TimeBased ambiguity note).
    fn replace_spans(&mut self, message: &str, spans: &[VariableSpan]) -> (String, bool) {
        let mut tokens: Vec<String> = tokenize(message).iter().map(|t| t.to_string()).collect();
        let mut used_time = false;
        for span in spans.iter().filter(|s| s.is_nonce()) {
            if let Some(slot) = tokens.get_mut(span.token_index) {
                let (value, time) = similar_value(slot, &mut self.gen);
                used_time |= time;
                *slot = value;
            }
        }
        (tokens.concat(), used_time)
    }

    fn replace_spans_future(&mut self, message: &str, spans: &[VariableSpan]) -> String {
        let mut tokens: Vec<String> = tokenize(message).iter().map(|t| t.to_string()).collect();
        for span in spans.iter().filter(|s| s.is_nonce()) {
            if let Some(slot) = tokens.get_mut(span.token_index) {
                if let Some(value) = future_value(slot) {
                    *slot = value;
                }
            }
        }
        tokens.concat()
    }

    /// Signature checker: three independent probes on three fresh
    /// messages.
    pub fn check_signature(&mut self, target: &TargetConfig) -> Result<SignatureCheck, ScanError> {
        let mut evidence = Vec::new();
        let addr0 = self.key(0).address().to_hex();
        let addr1 = self.key(1).address().to_hex();

        // null signature
        let (msg, mut session) = self.fresh_query(target, 0)?;
        let outcome = self.auth_in_session(target, &mut session, &msg, "", &addr0);
        let null_ok = outcome.token_issued;
        evidence.push(Evidence {
            probe: "signature:null".into(),
            detail: outcome.detail,
        });

        // well-formed but wrong signature (signed by a different key)
        let (msg, mut session) = self.fresh_query(target, 0)?;
        let wrong = self.sign_with(&msg, 1);
        let outcome = self.auth_in_session(target, &mut session, &msg, &wrong, &addr0);
        let wrong_ok = outcome.token_issued;
        evidence.push(Evidence {
            probe: "signature:invalid".into(),
            detail: outcome.detail,
        });

        // correct signature, different claimed address
        let (msg, mut session) = self.fresh_query(target, 0)?;
        let sig = self.sign_with(&msg, 0);
        let outcome = self.auth_in_session(target, &mut session, &msg, &sig, &addr1);
        let swap_ok = outcome.token_issued;
        evidence.push(Evidence {
            probe: "address:swap".into(),
            detail: outcome.detail,
        });

        Ok(SignatureCheck {
            signature: if null_ok || wrong_ok {
                Verdict::Fail
            } else {
                Verdict::Pass
            },
            address: if swap_ok {
                Verdict::Fail
            } else {
                Verdict::Pass
            },
            evidence,
        })
    }

    /// Replays one captured (message, signature) at each delay and
    /// returns the last delay that still authenticated — a lower bound
    /// on the nonce's validity period.
    pub fn probe_nonce_expiry(
        &mut self,
        target: &TargetConfig,
        kind: NonceLifecycle,
        schedule: &[Duration],
    ) -> Result<Option<Duration>, ScanError> {
        if !matches!(kind, NonceLifecycle::Temporary | NonceLifecycle::TimeBased) {
            return Err(ScanError::Invalid(
                target.label.clone(),
                format!("expiry probing applies to temporary or time-based nonces, not {kind}"),
            ));
        }
        if schedule.is_empty() {
            return Ok(None);
        }
        let addr = self.key(0).address().to_hex();
        let (message, _) = self.fresh_query(target, 0)?;
        let signature = self.sign_with(&message, 0);
        let captured = Instant::now();
        let mut bound = None;
        let mut delays: Vec<Duration> = schedule.to_vec();
        delays.sort();
        for delay in delays {
            let elapsed = captured.elapsed();
            if elapsed < delay {
                std::thread::sleep(delay - elapsed);
            }
            let mut session = SessionContext::new();
            let outcome = self.auth_in_session(target, &mut session, &message, &signature, &addr);
            if outcome.token_issued {
                bound = Some(delay);
            } else {
                break;
            }
        }
        Ok(bound)
    }

    /// Full scan: honest baseline, then message → nonce → signature, then
    /// classification. Every probe starts from a fresh QUERY.
    pub fn scan(&mut self, target: &TargetConfig) -> Result<ScanReport, ScanError> {
        self.requests = 0;
        let mut timing = Vec::new();
        let mut evidence = Vec::new();

        let started = Instant::now();
        let (message, mut session) = self.fresh_query(target, 0)?;
        let sig = self.sign_with(&message, 0);
        let addr = self.key(0).address().to_hex();
        let outcome = self.auth_in_session(target, &mut session, &message, &sig, &addr);
        if !outcome.token_issued {
            return Err(ScanError::TargetBroken(
                target.label.clone(),
                outcome.detail,
            ));
        }
        evidence.push(Evidence {
            probe: "baseline:honest".into(),
            detail: outcome.detail,
        });
        timing.push(("baseline".to_string(), started.elapsed()));

        let started = Instant::now();
        let message_check = self.check_message(target)?;
        timing.push(("message".to_string(), started.elapsed()));

        let started = Instant::now();
        let nonce_check = self.check_nonce(target)?;
        timing.push(("nonce".to_string(), started.elapsed()));

        let started = Instant::now();
        let signature_check = self.check_signature(target)?;
        timing.push(("signature".to_string(), started.elapsed()));

        evidence.extend(message_check.evidence.clone());
        evidence.extend(nonce_check.evidence.clone());
        evidence.extend(signature_check.evidence.clone());

        let finding = Finding {
            message_fields: MessageFields {
                has_domain: message_check.has_domain,
                has_name: message_check.has_name,
                has_nonce: nonce_check.kind != NonceLifecycle::NoNonce,
            },
            server_checks: ServerChecks {
                message: message_check.message,
                body: message_check.body,
                nonce: nonce_check.verdict,
                signature: signature_check.signature,
                address: signature_check.address,
            },
            nonce_kind: nonce_check.kind,
            evidence,
        };
        Ok(ScanReport {
            label: target.label.clone(),
            risk: classify_risk(&finding),
            replay_risk: flag_replay(&finding),
            bmma_risk: flag_bmma(&finding),
            finding,
            timing,
            requests_issued: self.requests,
        })
    }
}

/// Generates a value of the same shape as `token`: current time for
/// timestamps and datetimes, a fresh uuid for uuids, random digits of
/// equal length for digit runs, random alphanumerics otherwise.
fn similar_value(token: &str, gen: &mut ValueGenerator) -> (String, bool) {
    match classify_nonce_value(token) {
        NonceValueKind::Timestamp13 => (now_ms().to_string(), true),
        NonceValueKind::Timestamp10 => (now_s().to_string(), true),
        NonceValueKind::DateTime => (rfc3339_ms(now_ms()), true),
        NonceValueKind::Random => {
            if is_uuid_token(token) {
                (gen.uuid4(), false)
            } else if token.bytes().all(|b| b.is_ascii_digit()) {
                (gen.rand_digits(token.len()), false)
            } else {
                (gen.rand_alnum(token.chars().count()), false)
            }
        }
    }
}

/// A future-dated twin of a time-valued token, 24 hours ahead.
fn future_value(token: &str) -> Option<String> {
    const DAY_MS: u64 = 86_400_000;
    match classify_nonce_value(token) {
        NonceValueKind::Timestamp13 => Some((now_ms() + DAY_MS).to_string()),
        NonceValueKind::Timestamp10 => Some((now_s() + DAY_MS / 1000).to_string()),
        NonceValueKind::DateTime => Some(rfc3339_ms(now_ms() + DAY_MS)),
        NonceValueKind::Random => None,
    }
}

/// Removes the non-address variable values (and the separator before
/// each) while keeping their labels intact.
fn remove_spans(message: &str, spans: &[VariableSpan]) -> String {
    let mut tokens: Vec<String> = tokenize(message).iter().map(|t| t.to_string()).collect();
    let mut indices: Vec<usize> = spans
        .iter()
        .filter(|s| s.is_nonce())
        .map(|s| s.token_index)
        .collect();
    indices.sort_unstable_by(|a, b| b.cmp(a));
    for idx in indices {
        if idx >= tokens.len() {
            continue;
        }
        tokens.remove(idx);
        if idx > 0 && idx - 1 < tokens.len() && is_separator(&tokens[idx - 1]) {
            tokens.remove(idx - 1);
        }
    }
    tokens.concat()
}

/// Input to the multi-message construction: one vulnerable target with
/// its finding and a freshly queried genuine message.
#[derive(Debug)]
pub struct BmmaInput<'a> {
    pub label: &'a str,
    pub finding: &'a Finding,
    pub genuine_message: &'a str,
}

/// Builds one message that authenticates against every input target
/// with a single signature: a decoy statement, each containment-checked
/// (V3) target's genuine message verbatim, and for each unchecked-body
/// (V2) target only its labeled machinery fields with freshly generated
/// values.
pub fn craft_bmma_message(
    inputs: &[BmmaInput<'_>],
    gen: &mut ValueGenerator,
) -> Result<String, ScanError> {
    if inputs.is_empty() {
        return Err(ScanError::NotCombinable("no targets supplied".into()));
    }
    for input in inputs {
        let checks = &input.finding.server_checks;
        let combinable =
            matches!(checks.body, Verdict::V2 | Verdict::V3) || checks.message == Verdict::V2;
        if !combinable {
            return Err(ScanError::NotCombinable(format!(
                "target '{}' verifies its message body",
                input.label
            )));
        }
    }

    let mut out = String::from("Welcome! Please sign this message to continue.\n");
    for input in inputs {
        let checks = &input.finding.server_checks;
        out.push('\n');
        if checks.body == Verdict::V3 && checks.message != Verdict::V2 {
            // containment check: the genuine message embedded verbatim
            // still matches, live nonce included
            out.push_str(input.genuine_message);
            out.push('\n');
        } else {
            out.push_str(&refreshed_machinery_lines(input.genuine_message, gen));
            out.push('\n');
        }
    }
    while out.ends_with('\n') {
        out.pop();
    }
    Ok(out)
}

/// The machinery lines of a message with every variable value replaced
/// by a fresh one of the same shape; static fields (version, labels)
/// stay verbatim, wallet-address lines are dropped.
fn refreshed_machinery_lines(message: &str, gen: &mut ValueGenerator) -> String {
    let parsed = parse_message(message, &ParseHints::default());
    let mut lines = Vec::new();
    let mut offset = 0;
    for line in message.split_inclusive('\n') {
        let range = offset..offset + line.len();
        offset = range.end;
        let fields: Vec<_> = parsed
            .fields
            .iter()
            .filter(|f| f.span.start < range.end && f.span.end > range.start)
            .collect();
        let machinery = fields.iter().any(|f| f.kind.is_machinery());
        if !machinery {
            continue;
        }
        if fields
            .iter()
            .all(|f| matches!(f.kind, FieldKind::Address | FieldKind::Statement))
        {
            continue;
        }
        let mut text = line.trim_end_matches('\n').to_string();
        let mut edits: Vec<(usize, usize, String)> = Vec::new();
        for field in &fields {
            if !field.kind.is_variable() || field.kind == FieldKind::Address {
                continue;
            }
            let fresh = match field.kind {
                FieldKind::IssuedAt | FieldKind::NotBefore => rfc3339_ms(now_ms()),
                FieldKind::ExpirationTime => rfc3339_ms(now_ms() + 86_400_000),
                _ => similar_value(&field.value, gen).0,
            };
            let start = field.span.start - range.start;
            edits.push((start, field.span.end - range.start, fresh));
        }
        edits.sort_by_key(|(start, _, _)| std::cmp::Reverse(*start));
        for (start, end, fresh) in edits {
            if end <= text.len() {
                text.replace_range(start..end, &fresh);
            }
        }
        lines.push(text);
    }
    lines.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finding(fields: (bool, bool), checks: ServerChecks, nonce_kind: NonceLifecycle) -> Finding {
        Finding {
            message_fields: MessageFields {
                has_domain: fields.0,
                has_name: fields.1,
                has_nonce: nonce_kind != NonceLifecycle::NoNonce,
            },
            server_checks: checks,
            nonce_kind,
            evidence: vec![],
        }
    }

    fn checks(
        message: Verdict,
        body: Verdict,
        nonce: Verdict,
        signature: Verdict,
        address: Verdict,
    ) -> ServerChecks {
        ServerChecks {
            message,
            body,
            nonce,
            signature,
            address,
        }
    }

    use Verdict::*;

    #[test]
    fn risk_examples() {
        // name without domain, everything verified
        let f = finding(
            (false, true),
            checks(Pass, Pass, Pass, Pass, Pass),
            NonceLifecycle::Temporary,
        );
        assert_eq!(classify_risk(&f), RiskLevel::Medium);
        // neither domain nor name
        let f = finding(
            (false, false),
            checks(Pass, Pass, Pass, Pass, Pass),
            NonceLifecycle::OneTime,
        );
        assert_eq!(classify_risk(&f), RiskLevel::High);
        // well-formed message, solid checks
        let f = finding(
            (true, true),
            checks(Pass, Pass, Pass, Pass, Pass),
            NonceLifecycle::OneTime,
        );
        assert_eq!(classify_risk(&f), RiskLevel::Low);
        // message not checked at all
        let f = finding(
            (true, true),
            checks(V2, V2, V2, Pass, Pass),
            NonceLifecycle::InvalidNonce,
        );
        assert_eq!(classify_risk(&f), RiskLevel::Critical);
        // containment body check
        let f = finding(
            (true, true),
            checks(Pass, V3, Pass, Pass, Pass),
            NonceLifecycle::OneTime,
        );
        assert_eq!(classify_risk(&f), RiskLevel::Medium);
        // rewritable body
        let f = finding(
            (true, true),
            checks(Pass, V2, Pass, Pass, Pass),
            NonceLifecycle::TimeBased,
        );
        assert_eq!(classify_risk(&f), RiskLevel::High);
        // signature skipped
        let f = finding(
            (true, true),
            checks(Pass, Pass, Pass, Fail, Pass),
            NonceLifecycle::OneTime,
        );
        assert_eq!(classify_risk(&f), RiskLevel::Critical);
    }

    #[test]
    fn replay_flag_follows_nonce_kind() {
        for (kind, expected) in [
            (NonceLifecycle::NoNonce, true),
            (NonceLifecycle::InvalidNonce, true),
            (NonceLifecycle::OneTime, false),
            (NonceLifecycle::Temporary, false),
            (NonceLifecycle::TimeBased, false),
        ] {
            let nonce = if kind == NonceLifecycle::NoNonce {
                NotApplicable
            } else {
                Pass
            };
            let f = finding((true, true), checks(Pass, Pass, nonce, Pass, Pass), kind);
            assert_eq!(flag_replay(&f), expected, "{kind:?}");
        }
    }

    #[test]
    fn bmma_flag_follows_body_and_message() {
        let f = finding(
            (false, true),
            checks(Pass, V3, NotApplicable, Pass, Pass),
            NonceLifecycle::NoNonce,
        );
        assert!(flag_bmma(&f));
        let f = finding(
            (false, true),
            checks(Pass, V2, Pass, Pass, Pass),
            NonceLifecycle::TimeBased,
        );
        assert!(flag_bmma(&f));
        let f = finding(
            (true, true),
            checks(Pass, Pass, Pass, Pass, Pass),
            NonceLifecycle::OneTime,
        );
        assert!(!flag_bmma(&f));
    }

    #[test]
    fn risk_is_monotone_in_verdicts() {
        // worsening any single aspect never lowers the level
        let base = finding(
            (true, true),
            checks(Pass, Pass, Pass, Pass, Pass),
            NonceLifecycle::OneTime,
        );
        let base_level = classify_risk(&base);
        let worsened: Vec<Finding> = vec![
            {
                let mut f = base.clone();
                f.message_fields.has_domain = false;
                f
            },
            {
                let mut f = base.clone();
                f.message_fields.has_domain = false;
                f.message_fields.has_name = false;
                f
            },
            {
                let mut f = base.clone();
                f.server_checks.body = V3;
                f
            },
            {
                let mut f = base.clone();
                f.server_checks.body = V2;
                f
            },
            {
                let mut f = base.clone();
                f.server_checks.message = V2;
                f
            },
            {
                let mut f = base.clone();
                f.server_checks.signature = Fail;
                f
            },
        ];
        for f in worsened {
            assert!(classify_risk(&f) >= base_level);
        }
        // and V2 body dominates V3 body
        let mut v3 = base.clone();
        v3.server_checks.body = V3;
        let mut v2 = base.clone();
        v2.server_checks.body = V2;
        assert!(classify_risk(&v2) >= classify_risk(&v3));
    }

    #[test]
    fn similar_values_match_shape() {
        let mut gen = ValueGenerator::from_seed(5);
        let (v, t) = similar_value("1712345678901", &mut gen);
        assert_eq!(v.len(), 13);
        assert!(t);
        let (v, t) = similar_value("84726193", &mut gen);
        assert_eq!(v.len(), 8);
        assert!(v.bytes().all(|b| b.is_ascii_digit()));
        assert!(!t);
        let (v, _) = similar_value("66ffb8f1-5eb1-4477-9558-36a60eb1b51f", &mut gen);
        assert!(is_uuid_token(&v));
        let (v, t) = similar_value("2025-03-07T11:22:33.000Z", &mut gen);
        assert_eq!(classify_nonce_value(&v), NonceValueKind::DateTime);
        assert!(t);
    }

    #[test]
    fn remove_spans_keeps_labels() {
        let msg = "Hello\nNonce: abc123\nBye";
        let spans = vec![VariableSpan {
            token_index: tokenize(msg).iter().position(|t| *t == "abc123").unwrap(),
            kind: NonceValueKind::Random,
            is_address: false,
        }];
        assert_eq!(remove_spans(msg, &spans), "Hello\nNonce:\nBye");
    }

    #[test]
    fn craft_rejects_strict_targets() {
        let strict = finding(
            (true, true),
            checks(Pass, Pass, Pass, Pass, Pass),
            NonceLifecycle::OneTime,
        );
        let mut gen = ValueGenerator::from_seed(0);
        let err = craft_bmma_message(
            &[BmmaInput {
                label: "strict",
                finding: &strict,
                genuine_message: "m",
            }],
            &mut gen,
        )
        .unwrap_err();
        assert!(matches!(err, ScanError::NotCombinable(_)));
        assert!(matches!(
            craft_bmma_message(&[], &mut gen).unwrap_err(),
            ScanError::NotCombinable(_)
        ));
    }

    #[test]
    fn craft_embeds_v3_and_refreshes_v2_fields() {
        let v3 = finding(
            (false, true),
            checks(Pass, V3, NotApplicable, Pass, Pass),
            NonceLifecycle::NoNonce,
        );
        let v2 = finding(
            (true, true),
            checks(Pass, V2, V2, Pass, Pass),
            NonceLifecycle::InvalidNonce,
        );
        let genuine_v3 = "Please sign this message to connect to Somewhere.";
        let genuine_v2 =
            "Welcome to Other!\n\nVersion: 2\nNonce: 84800972\nIssued At: 2025-03-07T11:22:33.000Z\nExpiration Time: 2025-03-08T11:22:33.000Z";
        let mut gen = ValueGenerator::from_seed(1);
        let crafted = craft_bmma_message(
            &[
                BmmaInput {
                    label: "a",
                    finding: &v3,
                    genuine_message: genuine_v3,
                },
                BmmaInput {
                    label: "b",
                    finding: &v2,
                    genuine_message: genuine_v2,
                },
            ],
            &mut gen,
        )
        .unwrap();
        assert!(crafted.contains(genuine_v3));
        assert!(crafted.contains("Version: 2"));
        assert!(crafted.contains("Nonce: "));
        // values are fresh, statics stay
        assert!(!crafted.contains("84726193"));
        assert!(!crafted.contains("2025-03-07T11:22:33.000Z"));
        assert!(!crafted.contains("Welcome to Other!"));
    }
}
