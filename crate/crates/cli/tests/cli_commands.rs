//! Exit-code and file contracts of the command layer.

use std::net::TcpListener;
use std::path::Path;

use web3auth_cli::{
    cmd_fixtures, cmd_guard, cmd_scan, cmd_sim, scan_targets, GuardAction, OutputFormat,
    ScanOptions, EXIT_ERROR, EXIT_FINDINGS, EXIT_OK, EXIT_RED_ALERT, EXIT_YELLOW_ALERT,
};
use web3auth_core::fixtures::{fixture_fleet, fleet_targets, load_corpus, load_profiles};
use web3auth_core::report::render_json;
use web3auth_core::sim::spawn_fleet;
use web3auth_core::transport::serialize_targets;

fn loopback_options() -> ScanOptions {
    ScanOptions {
        interval_ms: 0,
        timeout_ms: 2_000,
        seed: 0,
        jobs: 2,
    }
}

fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

#[test]
fn scan_rejects_empty_and_malformed_target_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.json", r#"{"targets":[]}"#);
    assert_eq!(
        cmd_scan(&empty, None, OutputFormat::Json, &loopback_options()),
        EXIT_ERROR
    );
    let malformed = write(dir.path(), "bad.json", "{nope");
    assert_eq!(
        cmd_scan(&malformed, None, OutputFormat::Json, &loopback_options()),
        EXIT_ERROR
    );
    let missing = dir.path().join("absent.json");
    assert_eq!(
        cmd_scan(&missing, None, OutputFormat::Json, &loopback_options()),
        EXIT_ERROR
    );
}

#[test]
fn scan_marks_unreachable_targets_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let doc = r#"{"targets":[{"label":"gone","host":"gone.example","requests":[
        {"role":"QUERY","method":"POST","url":"http://127.0.0.1:9/q",
         "body":"{\"address\":\"{{ addr }}\"}","outputs":{"msg":"data.auth.message"}},
        {"role":"AUTH","method":"POST","url":"http://127.0.0.1:9/a",
         "body":"{\"message\":\"{{ msg }}\",\"signature\":\"{{ sig }}\",\"address\":\"{{ addr }}\"}",
         "outputs":{"token":"data.auth.token"}}]}]}"#;
    let path = write(dir.path(), "targets.json", doc);
    let out = dir.path().join("report.md");
    let exit = cmd_scan(
        &path,
        Some(&out),
        OutputFormat::Markdown,
        &loopback_options(),
    );
    assert_eq!(exit, EXIT_ERROR);
    let report = std::fs::read_to_string(&out).unwrap();
    assert!(report.contains("Inconclusive"));
}

#[test]
fn scan_exit_codes_follow_worst_risk() {
    // an all-protections profile alone: exit 0
    let fleet = fixture_fleet();
    let solid: Vec<_> = fleet
        .iter()
        .filter(|p| p.label == "site02")
        .cloned()
        .collect();
    let handle = spawn_fleet(solid.clone(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let targets = fleet_targets(&handle.base_url, &solid);
    let path = write(dir.path(), "targets.json", &serialize_targets(&targets));
    assert_eq!(
        cmd_scan(&path, None, OutputFormat::Json, &loopback_options()),
        EXIT_OK
    );

    // adding a flawed profile: exit 2
    let mixed: Vec<_> = fleet
        .iter()
        .filter(|p| ["site02", "site08"].contains(&p.label.as_str()))
        .cloned()
        .collect();
    let handle = spawn_fleet(mixed.clone(), 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &mixed);
    let path = write(dir.path(), "mixed.json", &serialize_targets(&targets));
    assert_eq!(
        cmd_scan(&path, None, OutputFormat::Markdown, &loopback_options()),
        EXIT_FINDINGS
    );
}

#[test]
fn repeated_scans_are_byte_identical() {
    let fleet = fixture_fleet();
    let picks: Vec<_> = fleet
        .iter()
        .filter(|p| ["site02", "site08", "site21"].contains(&p.label.as_str()))
        .cloned()
        .collect();
    let handle = spawn_fleet(picks.clone(), 0).unwrap();
    let targets = fleet_targets(&handle.base_url, &picks);
    let first = render_json(&scan_targets(&targets, &loopback_options()));
    let second = render_json(&scan_targets(&targets, &loopback_options()));
    assert_eq!(first, second);
}

#[test]
fn guard_record_then_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.json");
    let message = "Welcome to Somewhere!\n\nSign in at https://somewhere.example/login to continue.\nNonce: 11111111-2222-3333-4444-555555555555";

    // checking against a missing store is an operational error
    assert_eq!(
        cmd_guard(GuardAction::Check, "somewhere.example", message, &store),
        EXIT_ERROR
    );

    assert_eq!(
        cmd_guard(GuardAction::Record, "somewhere.example", message, &store),
        EXIT_OK
    );
    assert!(store.exists());

    // own origin, domain present in the message: clean
    assert_eq!(
        cmd_guard(GuardAction::Check, "somewhere.example", message, &store),
        EXIT_OK
    );
    // foreign origin replaying the message: red
    assert_eq!(
        cmd_guard(GuardAction::Check, "evil.example", message, &store),
        EXIT_RED_ALERT
    );
    // unknown message lacking the origin: yellow only
    assert_eq!(
        cmd_guard(
            GuardAction::Check,
            "evil.example",
            "something unrelated",
            &store
        ),
        EXIT_YELLOW_ALERT
    );
}

#[test]
fn fixtures_emit_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        cmd_fixtures("fleet", dir.path(), "http://127.0.0.1:8787", 0),
        EXIT_OK
    );
    let profiles =
        load_profiles(&std::fs::read_to_string(dir.path().join("profiles.json")).unwrap()).unwrap();
    assert_eq!(profiles.len(), 29);
    let targets = web3auth_core::transport::load_targets(
        &std::fs::read_to_string(dir.path().join("targets.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(targets.len(), 29);

    assert_eq!(
        cmd_fixtures("guard-corpus", dir.path(), "http://127.0.0.1:8787", 0),
        EXIT_OK
    );
    let corpus =
        load_corpus(&std::fs::read_to_string(dir.path().join("guard_corpus.json")).unwrap())
            .unwrap();
    assert_eq!(corpus.len(), 25);
    assert!(corpus
        .iter()
        .all(|s| s.extraction.len() == 5 && s.test.len() == 5));

    assert_eq!(
        cmd_fixtures("bogus", dir.path(), "http://127.0.0.1:8787", 0),
        EXIT_ERROR
    );
}

#[test]
fn sim_rejects_bad_profile_files_and_busy_ports() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.json", "[]");
    assert_eq!(cmd_sim(&empty, 0), EXIT_ERROR);
    let malformed = write(dir.path(), "bad.json", "{");
    assert_eq!(cmd_sim(&malformed, 0), EXIT_ERROR);

    // occupy a port, then ask the fleet to bind it
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let profiles = write(
        dir.path(),
        "profiles.json",
        &web3auth_core::fixtures::serialize_profiles(&fixture_fleet()[..1]),
    );
    assert_eq!(cmd_sim(&profiles, port), EXIT_ERROR);
}
