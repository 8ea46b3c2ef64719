//! Command implementations behind the `web3auth` binary: scan a target
//! collection, serve the simulator fleet, drive the guard store, and
//! emit fixture files. Each command returns its process exit code so
//! the behaviors stay testable without spawning the binary.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use web3auth_core::checker::{RiskLevel, Scanner};
use web3auth_core::crypto::KeypairPool;
use web3auth_core::fixtures;
use web3auth_core::guard::{check_signature_request, TemplateStore};
use web3auth_core::report::{render_json, render_markdown, RowOutcome};
use web3auth_core::sim::spawn_fleet;
use web3auth_core::transport::{
    load_targets, ExecutePolicy, HeaderProfile, HttpClient, RateLimiter, TargetConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FINDINGS: i32 = 2;
pub const EXIT_RED_ALERT: i32 = 3;
pub const EXIT_YELLOW_ALERT: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Markdown,
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub interval_ms: u64,
    pub timeout_ms: u64,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for ScanOptions {
    fn default() -> ScanOptions {
        ScanOptions {
            interval_ms: 60_000,
            timeout_ms: 10_000,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Scans every target, optionally in parallel. Each target gets its own
/// seeded scanner, so results do not depend on the job count; the rate
/// limiter and key pool are shared.
pub fn scan_targets(targets: &[TargetConfig], options: &ScanOptions) -> Vec<RowOutcome> {
    let limiter = Arc::new(RateLimiter::new());
    let client = HttpClient::new(
        ExecutePolicy {
            timeout: Duration::from_millis(options.timeout_ms.max(1)),
            min_interval: Duration::from_millis(options.interval_ms),
            headers_profile: HeaderProfile::ChromeLike,
        },
        limiter,
    );
    let pool = KeypairPool::from_seed(options.seed, 4);
    let jobs = options.jobs.max(1).min(targets.len().max(1));

    let run_one = |index: usize, target: &TargetConfig| -> RowOutcome {
        let mut scanner = Scanner::new(
            &client,
            &pool,
            options.seed ^ ((index as u64 + 1) * 0x9e3779b9),
        );
        match scanner.scan(target) {
            Ok(report) => RowOutcome::Done(report),
            Err(err) => RowOutcome::Inconclusive {
                label: target.label.clone(),
                reason: err.to_string(),
            },
        }
    };

    if jobs <= 1 {
        return targets
            .iter()
            .enumerate()
            .map(|(i, t)| run_one(i, t))
            .collect();
    }

    let cursor = AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<RowOutcome>>> = (0..targets.len())
        .map(|_| std::sync::Mutex::new(None))
        .collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::Relaxed);
                if index >= targets.len() {
                    break;
                }
                let outcome = run_one(index, &targets[index]);
                *slots[index].lock().unwrap() = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

fn write_output(path: Option<&Path>, content: &str) -> std::io::Result<()> {
    match path {
        Some(path) => std::fs::write(path, content),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

/// `scan`: load targets, probe them all, write the report. Exit 0 when
/// every target is low risk, 2 when anything reaches medium or worse, 1
/// on operational failure (bad file, no targets, unreachable target).
pub fn cmd_scan(
    targets_path: &Path,
    out: Option<&Path>,
    format: OutputFormat,
    options: &ScanOptions,
) -> i32 {
    let document = match std::fs::read_to_string(targets_path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", targets_path.display());
            return EXIT_ERROR;
        }
    };
    let targets = match load_targets(&document) {
        Ok(targets) => targets,
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_ERROR;
        }
    };
    if targets.is_empty() {
        eprintln!("error: no targets");
        return EXIT_ERROR;
    }

    let rows = scan_targets(&targets, options);
    let rendered = match format {
        OutputFormat::Json => render_json(&rows),
        OutputFormat::Markdown => render_markdown(&rows),
    };
    if let Err(err) = write_output(out, &rendered) {
        eprintln!("error: cannot write report: {err}");
        return EXIT_ERROR;
    }

    let mut exit = EXIT_OK;
    for row in &rows {
        match row {
            RowOutcome::Done(report) => {
                if report.risk > RiskLevel::Low && exit == EXIT_OK {
                    exit = EXIT_FINDINGS;
                }
            }
            RowOutcome::Inconclusive { label, reason } => {
                eprintln!("warning: {label} inconclusive: {reason}");
                exit = EXIT_ERROR;
            }
        }
    }
    exit
}

/// `sim`: serve a profile fleet until interrupted.
pub fn cmd_sim(profiles_path: &Path, port: u16) -> i32 {
    let document = match std::fs::read_to_string(profiles_path) {
        Ok(text) => text,
        Err(err) => {
            eprintln!("error: cannot read {}: {err}", profiles_path.display());
            return EXIT_ERROR;
        }
    };
    let profiles = match fixtures::load_profiles(&document) {
        Ok(profiles) => profiles,
        Err(err) => {
            eprintln!("error: malformed profile file: {err}");
            return EXIT_ERROR;
        }
    };
    if profiles.is_empty() {
        eprintln!("error: empty profile list");
        return EXIT_ERROR;
    }
    let labels: Vec<String> = profiles.iter().map(|p| p.label.clone()).collect();
    let handle = match spawn_fleet(profiles, port) {
        Ok(handle) => handle,
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_ERROR;
        }
    };
    println!("serving {} profiles at {}", labels.len(), handle.base_url);
    for label in &labels {
        println!("  {}", handle.profile_base(label));
    }
    loop {
        std::thread::sleep(Duration::from_secs(3600));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardAction {
    Record,
    Check,
}

/// `guard`: record a login into the template store, or check a
/// signature request against it. Check exits 3 on a red alert, 4 on a
/// yellow-only alert, 0 when clean.
pub fn cmd_guard(action: GuardAction, origin: &str, message: &str, store_path: &Path) -> i32 {
    match action {
        GuardAction::Record => {
            let mut store = if store_path.exists() {
                match TemplateStore::load(store_path) {
                    Ok(store) => store,
                    Err(err) => {
                        eprintln!("error: cannot load store: {err}");
                        return EXIT_ERROR;
                    }
                }
            } else {
                TemplateStore::new()
            };
            store.record_login(origin, message);
            if let Err(err) = store.save(store_path) {
                eprintln!("error: cannot save store: {err}");
                return EXIT_ERROR;
            }
            println!(
                "recorded login for {origin} ({} domains tracked)",
                store.len()
            );
            EXIT_OK
        }
        GuardAction::Check => {
            let store = match TemplateStore::load(store_path) {
                Ok(store) => store,
                Err(err) => {
                    eprintln!("error: cannot load store {}: {err}", store_path.display());
                    return EXIT_ERROR;
                }
            };
            let decision = check_signature_request(message, origin, &store);
            println!("{}", serde_json::to_string_pretty(&decision).unwrap());
            if decision.red.is_some() {
                EXIT_RED_ALERT
            } else if decision.yellow {
                EXIT_YELLOW_ALERT
            } else {
                EXIT_OK
            }
        }
    }
}

/// Reads a guard message from an inline argument, a file, or stdin
/// (`--message-file -`).
pub fn read_message_source(
    message: Option<&str>,
    message_file: Option<&Path>,
) -> Result<String, String> {
    match (message, message_file) {
        (Some(text), None) => Ok(text.to_string()),
        (None, Some(path)) if path == Path::new("-") => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| format!("cannot read stdin: {e}"))?;
            Ok(buf)
        }
        (None, Some(path)) => std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display())),
        _ => Err("exactly one of --message or --message-file is required".into()),
    }
}

/// `fixtures`: emit the canned artifacts. `fleet` writes the 29-profile
/// fleet plus matching target configs; `guard-corpus` writes the 25-site
/// extraction/test message sets.
pub fn cmd_fixtures(kind: &str, out_dir: &Path, base_url: &str, seed: u64) -> i32 {
    if let Err(err) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {err}", out_dir.display());
        return EXIT_ERROR;
    }
    match kind {
        "fleet" => {
            let fleet = fixtures::fixture_fleet();
            let profiles_path = out_dir.join("profiles.json");
            let targets_path = out_dir.join("targets.json");
            let targets = fixtures::fleet_targets(base_url, &fleet);
            let result = std::fs::write(&profiles_path, fixtures::serialize_profiles(&fleet))
                .and_then(|_| {
                    std::fs::write(
                        &targets_path,
                        web3auth_core::transport::serialize_targets(&targets),
                    )
                });
            match result {
                Ok(()) => {
                    println!(
                        "wrote {} profiles to {}",
                        fleet.len(),
                        profiles_path.display()
                    );
                    println!(
                        "wrote {} targets to {}",
                        targets.len(),
                        targets_path.display()
                    );
                    EXIT_OK
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    EXIT_ERROR
                }
            }
        }
        "guard-corpus" => {
            let corpus = fixtures::guard_corpus(seed);
            let path = out_dir.join("guard_corpus.json");
            match std::fs::write(&path, fixtures::serialize_corpus(&corpus)) {
                Ok(()) => {
                    println!(
                        "wrote {} sites x {} messages to {}",
                        corpus.len(),
                        corpus[0].extraction.len() + corpus[0].test.len(),
                        path.display()
                    );
                    EXIT_OK
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    EXIT_ERROR
                }
            }
        }
        other => {
            eprintln!("error: unknown fixture kind '{other}' (expected fleet or guard-corpus)");
            EXIT_ERROR
        }
    }
}

/// Default guard store location when `--store` is not given.
pub fn default_store_path() -> PathBuf {
    PathBuf::from("guard_store.json")
}
