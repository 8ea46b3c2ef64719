//! End-to-end checks of the scanner against live simulator profiles.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use web3auth_core::checker::{NonceLifecycle, RiskLevel, ScanError, Scanner};
use web3auth_core::crypto::{personal_sign, KeypairPool};
use web3auth_core::fixtures::{fixture_expiry_profile, fixture_fleet, fleet_targets};
use web3auth_core::sim::{spawn_fleet, BodyCheck, ExtField, SimNonce, Site, VulnProfile};
use web3auth_core::transport::{
    now_ms, run_sequence, ConcreteRequest, ExecutePolicy, HeaderProfile, HttpClient, RateLimiter,
    RequestItem, Role, TargetConfig, ValueGenerator,
};

fn low_risk_profile() -> VulnProfile {
    VulnProfile {
        label: "solid".into(),
        display_name: "Solid Market".into(),
        host: "solid.example".into(),
        include_domain: true,
        include_name: true,
        statement: "Signing proves wallet ownership and costs nothing.".into(),
        nonce_kind: SimNonce::OneTime,
        body_check: BodyCheck::Exact,
        message_check: true,
        sig_check: true,
        addr_check: true,
        token_ttl_ms: 600_000,
        ext_fields: vec![ExtField::Address],
    }
}

fn test_client() -> HttpClient {
    HttpClient::new(
        ExecutePolicy {
            timeout: Duration::from_secs(5),
            min_interval: Duration::ZERO,
            headers_profile: HeaderProfile::ChromeLike,
        },
        Arc::new(RateLimiter::new()),
    )
}

#[test]
fn honest_sequence_binds_token_and_access_succeeds() {
    let handle = spawn_fleet(vec![low_risk_profile()], 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &[low_risk_profile()]);
    let client = test_client();
    let pool = KeypairPool::from_seed(11, 2);
    let key = pool.key(0).clone();
    let mut gen = ValueGenerator::from_seed(1);

    let mut overrides = std::collections::HashMap::new();
    overrides.insert(
        Role::Query,
        BTreeMap::from([("addr".to_string(), key.address().to_hex())]),
    );
    let session = run_sequence(
        &client,
        &targets[0],
        &overrides,
        &[Role::Query, Role::Auth],
        &mut gen,
        |role, session| {
            let mut local = BTreeMap::new();
            if role == Role::Auth {
                let msg = session.get("msg").expect("message bound after QUERY");
                local.insert("msg".to_string(), msg.to_string());
                local.insert("sig".to_string(), personal_sign(msg, &key).to_hex());
                local.insert("addr".to_string(), key.address().to_hex());
            }
            local
        },
    );
    assert!(session.get("token").is_some_and(|t| !t.is_empty()));
    assert_eq!(session.trace.len(), 3);
    let access = session.trace.last().unwrap();
    assert_eq!(access.role, Role::Access);
    assert_eq!(access.status, Some(200));
    assert_eq!(session.get("access_status"), Some("200"));
    // final bindings are exactly the union of extraction events
    let extracted: std::collections::BTreeSet<&str> = session
        .trace
        .iter()
        .flat_map(|e| e.extracted.keys())
        .map(String::as_str)
        .collect();
    let bound: std::collections::BTreeSet<&str> =
        session.bindings.keys().map(String::as_str).collect();
    assert_eq!(bound, extracted);
}

#[test]
fn empty_signature_binds_no_token() {
    let handle = spawn_fleet(vec![low_risk_profile()], 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &[low_risk_profile()]);
    let client = test_client();
    let pool = KeypairPool::from_seed(11, 2);
    let key = pool.key(0).clone();
    let mut gen = ValueGenerator::from_seed(1);

    let mut overrides = std::collections::HashMap::new();
    overrides.insert(
        Role::Query,
        BTreeMap::from([("addr".to_string(), key.address().to_hex())]),
    );
    overrides.insert(
        Role::Auth,
        BTreeMap::from([
            ("sig".to_string(), String::new()),
            ("addr".to_string(), key.address().to_hex()),
        ]),
    );
    let session = run_sequence(
        &client,
        &targets[0],
        &overrides,
        &[Role::Query],
        &mut gen,
        |_, _| BTreeMap::new(),
    );
    assert_eq!(session.get("token"), None);
    let auth = session.trace.iter().find(|e| e.role == Role::Auth).unwrap();
    assert_eq!(auth.status, Some(401));
    // the ACCESS item could not render without a token
    let access = session
        .trace
        .iter()
        .find(|e| e.role == Role::Access)
        .unwrap();
    assert!(access
        .error
        .as_deref()
        .unwrap_or_default()
        .contains("token"));
}

#[test]
fn sequence_without_query_starts_at_auth() {
    let mut profile = low_risk_profile();
    profile.label = "composed".into();
    profile.message_check = false;
    profile.nonce_kind = SimNonce::Unchecked;
    profile.ext_fields.clear();
    let handle = spawn_fleet(vec![profile], 0).unwrap();
    let client = test_client();
    let pool = KeypairPool::from_seed(3, 1);
    let key = pool.key(0).clone();
    let mut gen = ValueGenerator::from_seed(9);

    let message = "locally composed sign-in request";
    let target = TargetConfig {
        label: "composed".into(),
        host: "composed.example".into(),
        expected_name: None,
        token_key: "token".into(),
        requests: vec![RequestItem {
            role: Role::Auth,
            method: "POST".into(),
            url: format!("{}/p/composed/auth", handle.base_url),
            headers: BTreeMap::new(),
            body: Some(
                r#"{"message":"{{ msg }}","signature":"{{ sig }}","address":"{{ addr }}"}"#.into(),
            ),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::from([("token".to_string(), "data.auth.token".to_string())]),
        }],
    };
    let overrides = std::collections::HashMap::from([(
        Role::Auth,
        BTreeMap::from([
            ("msg".to_string(), message.to_string()),
            ("sig".to_string(), personal_sign(message, &key).to_hex()),
            ("addr".to_string(), key.address().to_hex()),
        ]),
    )]);
    let session = run_sequence(&client, &target, &overrides, &[], &mut gen, |_, _| {
        BTreeMap::new()
    });
    assert_eq!(session.trace.len(), 1);
    assert_eq!(session.trace[0].role, Role::Auth);
    assert!(session.get("token").is_some());
}

#[test]
fn query_endpoint_returns_message() {
    let handle = spawn_fleet(vec![low_risk_profile()], 0).unwrap();
    let client = test_client();
    let request = ConcreteRequest {
        method: "POST".into(),
        url: format!("{}/p/solid/query", handle.base_url),
        headers: BTreeMap::new(),
        body: Some(r#"{"address":"0x0000000000000000000000000000000000000001"}"#.into()),
    };
    let response = client.execute(&request).unwrap();
    assert_eq!(response.status, 200);
    assert!(response.body.contains("Welcome to Solid Market!"));
}

#[test]
fn scan_of_protected_profile_is_low_and_deterministic() {
    let handle = spawn_fleet(vec![low_risk_profile()], 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &[low_risk_profile()]);
    let client = test_client();
    let pool = KeypairPool::from_seed(0, 2);

    let mut scanner = Scanner::new(&client, &pool, 42);
    let first = scanner.scan(&targets[0]).unwrap();
    assert_eq!(first.risk, RiskLevel::Low);
    assert!(!first.replay_risk);
    assert!(!first.bmma_risk);
    assert_eq!(first.finding.nonce_kind, NonceLifecycle::OneTime);

    let mut scanner = Scanner::new(&client, &pool, 42);
    let second = scanner.scan(&targets[0]).unwrap();
    assert_eq!(first.finding, second.finding);
    assert_eq!(first.requests_issued, second.requests_issued);
}

#[test]
fn front_end_composed_message_template_is_scannable() {
    // QUERY-less target: the message comes from an AUTH input template
    // with generator placeholders
    let mut profile = low_risk_profile();
    profile.label = "frontend".into();
    profile.message_check = false;
    profile.nonce_kind = SimNonce::Unchecked;
    profile.ext_fields.clear();
    let handle = spawn_fleet(vec![profile], 0).unwrap();
    let client = test_client();
    let pool = KeypairPool::from_seed(0, 2);

    let target = TargetConfig {
        label: "frontend".into(),
        host: "frontend.example".into(),
        expected_name: None,
        token_key: "token".into(),
        requests: vec![RequestItem {
            role: Role::Auth,
            method: "POST".into(),
            url: format!("{}/p/frontend/auth", handle.base_url),
            headers: BTreeMap::new(),
            body: Some(
                r#"{"message":"{{ msg }}","signature":"{{ sig }}","address":"{{ addr }}"}"#.into(),
            ),
            inputs: BTreeMap::from([(
                "msg".to_string(),
                "frontend.example login at {{ now_ms }}".to_string(),
            )]),
            outputs: BTreeMap::from([("token".to_string(), "data.auth.token".to_string())]),
        }],
    };
    let mut scanner = Scanner::new(&client, &pool, 7);
    let report = scanner.scan(&target).unwrap();
    // everything is accepted by this deliberately naive backend
    assert_eq!(report.risk, RiskLevel::Critical);
}

#[test]
fn expiry_probe_brackets_the_ttl() {
    let profile = fixture_expiry_profile(2_000);
    let handle = spawn_fleet(vec![profile.clone()], 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &[profile]);
    let client = test_client();
    let pool = KeypairPool::from_seed(0, 2);
    let mut scanner = Scanner::new(&client, &pool, 1);

    let bound = scanner
        .probe_nonce_expiry(
            &targets[0],
            NonceLifecycle::Temporary,
            &[Duration::from_secs(1), Duration::from_secs(3)],
        )
        .unwrap();
    assert_eq!(bound, Some(Duration::from_secs(1)));

    // empty schedule yields no bound
    let bound = scanner
        .probe_nonce_expiry(&targets[0], NonceLifecycle::Temporary, &[])
        .unwrap();
    assert_eq!(bound, None);

    // and the probe refuses lifecycles it cannot bound
    let err = scanner
        .probe_nonce_expiry(
            &targets[0],
            NonceLifecycle::OneTime,
            &[Duration::from_secs(1)],
        )
        .unwrap_err();
    assert!(matches!(err, ScanError::Invalid(_, _)));
}

#[test]
fn lax_signature_profiles_are_flagged() {
    let mut no_recovery = low_risk_profile();
    no_recovery.label = "no-recovery".into();
    no_recovery.sig_check = false;
    no_recovery.addr_check = false;
    let mut trusts_claim = low_risk_profile();
    trusts_claim.label = "trusts-claim".into();
    trusts_claim.addr_check = false;

    let profiles = vec![no_recovery, trusts_claim];
    let handle = spawn_fleet(profiles.clone(), 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &profiles);
    let client = test_client();
    let pool = KeypairPool::from_seed(0, 2);

    let mut scanner = Scanner::new(&client, &pool, 5);
    let check = scanner.check_signature(&targets[0]).unwrap();
    assert_eq!(check.signature, web3auth_core::checker::Verdict::Fail);
    let report = scanner.scan(&targets[0]).unwrap();
    assert_eq!(report.risk, RiskLevel::Critical);

    let check = scanner.check_signature(&targets[1]).unwrap();
    assert_eq!(check.address, web3auth_core::checker::Verdict::Fail);
}

#[test]
fn genuine_body_inside_decoy_text_still_authenticates() {
    // a containment-checked site accepts its message embedded in a
    // longer crafted one
    let fleet: Vec<VulnProfile> = fixture_fleet()
        .into_iter()
        .filter(|p| p.label == "site04")
        .collect();
    let handle = spawn_fleet(fleet.clone(), 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &fleet);
    let client = test_client();
    let pool = KeypairPool::from_seed(0, 2);

    let mut scanner = Scanner::new(&client, &pool, 2);
    let report = scanner.scan(&targets[0]).unwrap();
    assert_eq!(
        report.finding.server_checks.body,
        web3auth_core::checker::Verdict::V3
    );

    let victim = pool.key(1).clone();
    let mut session = web3auth_core::transport::SessionContext::new();
    let query = targets[0].item(Role::Query).unwrap();
    let local = BTreeMap::from([("addr".to_string(), victim.address().to_hex())]);
    let request = web3auth_core::transport::render(query, &session, &local).unwrap();
    let response = client.execute(&request).unwrap();
    web3auth_core::transport::extract_outputs(&response, &query.outputs, &mut session);
    let genuine = session.get("msg").unwrap().to_string();

    let mut gen = ValueGenerator::from_seed(6);
    let crafted = web3auth_core::checker::craft_bmma_message(
        &[web3auth_core::checker::BmmaInput {
            label: "site04",
            finding: &report.finding,
            genuine_message: &genuine,
        }],
        &mut gen,
    )
    .unwrap();
    assert_ne!(crafted, genuine);
    assert!(crafted.contains(&genuine));

    let auth = targets[0].item(Role::Auth).unwrap();
    let local = BTreeMap::from([
        ("msg".to_string(), crafted.clone()),
        ("sig".to_string(), personal_sign(&crafted, &victim).to_hex()),
        ("addr".to_string(), victim.address().to_hex()),
    ]);
    let request = web3auth_core::transport::render(
        auth,
        &web3auth_core::transport::SessionContext::new(),
        &local,
    )
    .unwrap();
    let response = client.execute(&request).unwrap();
    assert_eq!(response.status, 200);
    assert!(response.body.contains("token"));
}

#[test]
fn honest_client_succeeds_against_every_fleet_profile() {
    let pool = KeypairPool::from_seed(5, 1);
    let key = pool.key(0);
    for profile in fixture_fleet() {
        let site = Site::new(profile);
        let addr = key.address().to_hex();
        let message = site.handle_query(&addr, now_ms());
        let sig = personal_sign(&message, key).to_hex();
        site.handle_auth(&message, &sig, &addr, now_ms())
            .unwrap_or_else(|e| panic!("honest auth failed for {}: {e:?}", site.profile.label));
    }
}
