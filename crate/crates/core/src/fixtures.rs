//! Canned simulator fleets and corpora used by the CLI and the
//! verification suites.
//!
//! The main fleet is 29 synthetic sites (site01–site29) whose knob
//! settings reproduce the spread of real-world deployment flaws: which
//! message fields exist, how the body is compared, and how each nonce
//! lifecycle behaves. Rows 1–25 model logins, rows 26–29 model
//! signature-gated profile updates.

use std::collections::BTreeMap;

use crate::crypto::KeypairPool;
use crate::sim::{BodyCheck, ExtField, SimNonce, VulnProfile};
use crate::transport::{rfc3339_ms, RequestItem, Role, TargetConfig, ValueGenerator};

const TEMPORARY_TTL_MS: u64 = 30_000;
const TIMEBASED_WINDOW_MS: u64 = 60_000;

struct Row {
    name: &'static str,
    statement: &'static str,
    include_domain: bool,
    include_name: bool,
    nonce: SimNonce,
    body: BodyCheck,
    message_check: bool,
    ext: Vec<ExtField>,
}

fn rows() -> Vec<Row> {
    use BodyCheck::{Exact, RegexContains};
    use SimNonce::{None as NoNonce, OneTime, Temporary, TimeBased, Unchecked};
    let temporary = Temporary {
        ttl_ms: TEMPORARY_TTL_MS,
    };
    let windowed = TimeBased {
        window_ms: Some(TIMEBASED_WINDOW_MS),
    };
    let no_expiry = TimeBased { window_ms: None };
    vec![
        // 01
        Row {
            name: "Aldergate",
            statement: "Sign this request to browse your collection. Signing is free and will not submit a transaction.",
            include_domain: false,
            include_name: true,
            nonce: temporary.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 02
        Row {
            name: "Birchmoor",
            statement: "This request will not trigger a blockchain transaction or cost any gas fees.\nYour authentication status resets after 24 hours.",
            include_domain: true,
            include_name: true,
            nonce: OneTime,
            body: Exact,
            message_check: true,
            ext: vec![ExtField::Address],
        },
        // 03
        Row {
            name: "Cobaltine",
            statement: "Click sign to verify ownership of your wallet and log in. No password needed.",
            include_domain: true,
            include_name: true,
            nonce: OneTime,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 04
        Row {
            name: "Dunewick",
            statement: "Sign this note to link your wallet with Dunewick.",
            include_domain: false,
            include_name: false,
            nonce: NoNonce,
            body: RegexContains,
            message_check: true,
            ext: vec![],
        },
        // 05
        Row {
            name: "Emberlyn",
            statement: "I accept the Emberlyn terms of use and confirm this login request.",
            include_domain: true,
            include_name: true,
            nonce: OneTime,
            body: RegexContains,
            message_check: true,
            ext: vec![ExtField::Address],
        },
        // 06
        Row {
            name: "Fernshaw",
            statement: "Log in by signing this one-off message with your wallet key.",
            include_domain: true,
            include_name: true,
            nonce: windowed.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 07
        Row {
            name: "Gildenrow",
            statement: "Welcome back, collector. Confirm the session by signing below.",
            include_domain: false,
            include_name: true,
            nonce: temporary.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 08
        Row {
            name: "Hollyvale",
            statement: "auth-login-v3 confirm session start",
            include_domain: false,
            include_name: false,
            nonce: no_expiry,
            body: BodyCheck::None,
            message_check: true,
            ext: vec![],
        },
        // 09
        Row {
            name: "Ironquill",
            statement: "Verify wallet ownership to enter the trading floor.",
            include_domain: true,
            include_name: true,
            nonce: windowed.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 10
        Row {
            name: "Jessamine",
            statement: "Signing in only proves key ownership. Nothing leaves your wallet.",
            include_domain: true,
            include_name: true,
            nonce: temporary.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 11
        Row {
            name: "Kestrelmoor",
            statement: "One signature, one session. Review the details before signing.",
            include_domain: false,
            include_name: true,
            nonce: temporary.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 12
        Row {
            name: "Lanternfell",
            statement: "This is your sign-in request. It expires with your session.",
            include_domain: true,
            include_name: true,
            nonce: Unchecked,
            body: BodyCheck::None,
            message_check: false,
            ext: vec![ExtField::Address],
        },
        // 13
        Row {
            name: "Mossgrove",
            statement: "wallet-login: approve to continue",
            include_domain: false,
            include_name: false,
            nonce: NoNonce,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 14
        Row {
            name: "Nightbloom",
            statement: "Approve this signature request to open your dashboard.",
            include_domain: false,
            include_name: false,
            nonce: OneTime,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 15
        Row {
            name: "Oakhaven",
            statement: "Session handshake. Sign to play.",
            include_domain: false,
            include_name: false,
            nonce: windowed.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 16
        Row {
            name: "Pinecrest",
            statement: "Your signature proves account ownership and starts a session.",
            include_domain: true,
            include_name: true,
            nonce: OneTime,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 17
        Row {
            name: "Quillshade",
            statement: "quillshade-community-login",
            include_domain: false,
            include_name: true,
            nonce: NoNonce,
            body: BodyCheck::None,
            message_check: false,
            ext: vec![],
        },
        // 18
        Row {
            name: "Rowanbrook",
            statement: "Track rankings after a quick wallet login. Sign to proceed.",
            include_domain: false,
            include_name: false,
            nonce: temporary.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 19
        Row {
            name: "Silverbirch",
            statement: "Complete quests and earn rewards once signed in.",
            include_domain: false,
            include_name: true,
            nonce: windowed.clone(),
            body: BodyCheck::None,
            message_check: true,
            ext: vec![],
        },
        // 20
        Row {
            name: "Thornefield",
            statement: "Sign in with your wallet to join the campaign board.",
            include_domain: true,
            include_name: true,
            nonce: Unchecked,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 21
        Row {
            name: "Umberlight",
            statement: "Planet command console login. Sign to take the helm.",
            include_domain: true,
            include_name: true,
            nonce: Unchecked,
            body: BodyCheck::None,
            message_check: true,
            ext: vec![
                ExtField::Version("2".to_string()),
                ExtField::IssuedAt,
                ExtField::ExpirationTime,
            ],
        },
        // 22
        Row {
            name: "Violetmere",
            statement: "Game session request. Approving costs nothing.",
            include_domain: false,
            include_name: false,
            nonce: windowed.clone(),
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 23
        Row {
            name: "Willowbend",
            statement: "Squad up: sign this message to enter the lobby.",
            include_domain: false,
            include_name: false,
            nonce: windowed,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 24
        Row {
            name: "Xanthite",
            statement: "Certify your identity to claim course badges.",
            include_domain: false,
            include_name: true,
            nonce: OneTime,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 25
        Row {
            name: "Yarrowfield",
            statement: "Readers sign in with a wallet signature. No email required.",
            include_domain: false,
            include_name: true,
            nonce: temporary,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 26 — profile update, token from the earlier login is not checked
        Row {
            name: "Jessamine",
            statement: "update_profile",
            include_domain: false,
            include_name: false,
            nonce: NoNonce,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 27
        Row {
            name: "Pinecrest",
            statement: "profile:update:v2",
            include_domain: false,
            include_name: false,
            nonce: NoNonce,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 28
        Row {
            name: "Zephyrine",
            statement: "confirm-profile-change",
            include_domain: false,
            include_name: false,
            nonce: NoNonce,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
        // 29
        Row {
            name: "Ashdown",
            statement: "apply pending profile changes",
            include_domain: false,
            include_name: false,
            nonce: NoNonce,
            body: Exact,
            message_check: true,
            ext: vec![],
        },
    ]
}

fn profile_from_row(index: usize, row: Row) -> VulnProfile {
    let label = format!("site{:02}", index + 1);
    VulnProfile {
        host: format!("{label}.example"),
        label,
        display_name: row.name.to_string(),
        include_domain: row.include_domain,
        include_name: row.include_name,
        statement: row.statement.to_string(),
        nonce_kind: row.nonce,
        body_check: row.body,
        message_check: row.message_check,
        sig_check: true,
        addr_check: true,
        token_ttl_ms: 600_000,
        ext_fields: row.ext,
    }
}

/// The 29-site detection fleet: one profile per known deployment-flaw pattern.
pub fn fixture_fleet() -> Vec<VulnProfile> {
    rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| profile_from_row(i, row))
        .collect()
}

/// Five minimal profiles, one per nonce lifecycle, for exercising the
/// five-AUTH inference in isolation.
pub fn fixture_nonce_five() -> Vec<VulnProfile> {
    let kinds: Vec<(&str, SimNonce)> = vec![
        ("nonce-one-time", SimNonce::OneTime),
        (
            "nonce-temporary",
            SimNonce::Temporary {
                ttl_ms: TEMPORARY_TTL_MS,
            },
        ),
        (
            "nonce-time-based",
            SimNonce::TimeBased {
                window_ms: Some(TIMEBASED_WINDOW_MS),
            },
        ),
        ("nonce-unchecked", SimNonce::Unchecked),
        ("nonce-none", SimNonce::None),
    ];
    kinds
        .into_iter()
        .map(|(label, nonce_kind)| VulnProfile {
            label: label.to_string(),
            display_name: "Proving Ground".to_string(),
            host: format!("{label}.example"),
            include_domain: true,
            include_name: true,
            statement: format!("Lifecycle check bench for {label}."),
            nonce_kind,
            body_check: BodyCheck::None,
            message_check: true,
            sig_check: true,
            addr_check: true,
            token_ttl_ms: 600_000,
            ext_fields: vec![],
        })
        .collect()
}

/// A temporary-nonce profile with a deliberately short ttl so expiry
/// probing finishes in seconds.
pub fn fixture_expiry_profile(ttl_ms: u64) -> VulnProfile {
    VulnProfile {
        label: "expiry-bench".to_string(),
        display_name: "Expiry Bench".to_string(),
        host: "expiry-bench.example".to_string(),
        include_domain: true,
        include_name: true,
        statement: "Short-lived nonce bench.".to_string(),
        nonce_kind: SimNonce::Temporary { ttl_ms },
        body_check: BodyCheck::None,
        message_check: true,
        sig_check: true,
        addr_check: true,
        token_ttl_ms: 600_000,
        ext_fields: vec![],
    }
}

/// Builds the scanner-facing target configs for a fleet being served at
/// `base_url` (e.g. `http://127.0.0.1:8787`).
pub fn fleet_targets(base_url: &str, profiles: &[VulnProfile]) -> Vec<TargetConfig> {
    profiles
        .iter()
        .map(|profile| {
            let base = format!("{}/p/{}", base_url.trim_end_matches('/'), profile.label);
            let query = RequestItem {
                role: Role::Query,
                method: "POST".into(),
                url: format!("{base}/query"),
                headers: BTreeMap::new(),
                body: Some(r#"{"address":"{{ addr }}"}"#.into()),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::from([("msg".to_string(), "data.auth.message".to_string())]),
            };
            let auth = RequestItem {
                role: Role::Auth,
                method: "POST".into(),
                url: format!("{base}/auth"),
                headers: BTreeMap::new(),
                body: Some(
                    r#"{"message":"{{ msg }}","signature":"{{ sig }}","address":"{{ addr }}"}"#
                        .into(),
                ),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::from([("token".to_string(), "data.auth.token".to_string())]),
            };
            let access = RequestItem {
                role: Role::Access,
                method: "GET".into(),
                url: format!("{base}/access"),
                headers: BTreeMap::from([(
                    "Authorization".to_string(),
                    "Bearer {{ token }}".to_string(),
                )]),
                body: None,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::from([("access_status".to_string(), "status".to_string())]),
            };
            TargetConfig {
                label: profile.label.clone(),
                host: profile.host.clone(),
                expected_name: Some(profile.display_name.clone()),
                token_key: "token".into(),
                requests: vec![query, auth, access],
            }
        })
        .collect()
}

/// One site's message corpus: five messages for template extraction and
/// five more for testing.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SiteCorpus {
    pub label: String,
    pub domain: String,
    pub extraction: Vec<String>,
    pub test: Vec<String>,
}

/// Deterministic per-site message sets for the 25 login profiles.
pub fn guard_corpus(seed: u64) -> Vec<SiteCorpus> {
    let profiles: Vec<VulnProfile> = fixture_fleet().into_iter().take(25).collect();
    let pool = KeypairPool::from_seed(seed, 25);
    let base_ms: u64 = 1_760_000_000_000;
    profiles
        .iter()
        .enumerate()
        .map(|(row, profile)| {
            let mut gen = ValueGenerator::from_seed(seed ^ ((row as u64 + 1) << 8));
            let address = pool.key(row).address().to_hex();
            let messages: Vec<String> = (0..10u64)
                .map(|i| {
                    let at = base_ms + (row as u64) * 1000 + i * 60_000;
                    let nonce = match profile.nonce_kind {
                        SimNonce::TimeBased { .. } => at.to_string(),
                        SimNonce::None => String::new(),
                        _ => gen.uuid4(),
                    };
                    profile.compose(&crate::sim::SlotValues {
                        address: address.clone(),
                        nonce,
                        issued_at: rfc3339_ms(at),
                        expiration: rfc3339_ms(at + 86_400_000),
                    })
                })
                .collect();
            SiteCorpus {
                label: profile.label.clone(),
                domain: profile.host.clone(),
                extraction: messages[..5].to_vec(),
                test: messages[5..].to_vec(),
            }
        })
        .collect()
}

/// Labels of the fleet rows whose servers skip body verification (the
/// guard's documented blind spot).
pub fn body_unchecked_labels() -> Vec<String> {
    fixture_fleet()
        .into_iter()
        .take(25)
        .filter(|p| p.body_check == BodyCheck::None)
        .map(|p| p.label)
        .collect()
}

pub fn serialize_profiles(profiles: &[VulnProfile]) -> String {
    serde_json::to_string_pretty(profiles).expect("profiles serialize")
}

pub fn load_profiles(document: &str) -> Result<Vec<VulnProfile>, serde_json::Error> {
    serde_json::from_str(document)
}

pub fn serialize_corpus(corpus: &[SiteCorpus]) -> String {
    serde_json::to_string_pretty(&serde_json::json!({ "sites": corpus })).expect("corpus")
}

pub fn load_corpus(document: &str) -> Result<Vec<SiteCorpus>, serde_json::Error> {
    #[derive(serde::Deserialize)]
    struct Doc {
        sites: Vec<SiteCorpus>,
    }
    serde_json::from_str::<Doc>(document).map(|d| d.sites)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fleet_has_29_rows_with_unique_labels() {
        let fleet = fixture_fleet();
        assert_eq!(fleet.len(), 29);
        let mut labels: Vec<&str> = fleet.iter().map(|p| p.label.as_str()).collect();
        labels.dedup();
        assert_eq!(labels.len(), 29);
    }

    #[test]
    fn body_unchecked_rows_are_the_known_five() {
        assert_eq!(
            body_unchecked_labels(),
            vec!["site08", "site12", "site17", "site19", "site21"]
        );
    }

    #[test]
    fn corpus_is_deterministic_and_complete() {
        let a = guard_corpus(42);
        let b = guard_corpus(42);
        assert_eq!(a.len(), 25);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.extraction, y.extraction);
            assert_eq!(x.test, y.test);
            assert_eq!(x.extraction.len(), 5);
            assert_eq!(x.test.len(), 5);
        }
    }

    #[test]
    fn corpus_statements_do_not_cross_match() {
        // no site's message text appears inside another site's message
        let corpus = guard_corpus(7);
        for a in &corpus {
            for b in &corpus {
                if a.label == b.label {
                    continue;
                }
                assert!(
                    !b.test[0].contains(&a.extraction[0]),
                    "{} message embedded in {}",
                    a.label,
                    b.label
                );
            }
        }
    }

    #[test]
    fn profiles_round_trip_through_json() {
        let fleet = fixture_fleet();
        let text = serialize_profiles(&fleet);
        let loaded = load_profiles(&text).unwrap();
        assert_eq!(loaded.len(), fleet.len());
        assert_eq!(loaded[7].label, "site08");
        assert!(matches!(
            loaded[7].nonce_kind,
            SimNonce::TimeBased { window_ms: None }
        ));
    }

    #[test]
    fn targets_carry_reserved_placeholders() {
        let fleet = fixture_fleet();
        let targets = fleet_targets("http://127.0.0.1:9999", &fleet);
        assert_eq!(targets.len(), 29);
        let auth = targets[0].item(Role::Auth).unwrap();
        let body = auth.body.as_ref().unwrap();
        for key in ["msg", "sig", "addr"] {
            assert!(body.contains(&format!("{{{{ {key} }}}}")));
        }
        assert_eq!(targets[0].token_key, "token");
    }
}
