//! Security toolkit for Web3 challenge-response authentication.
//!
//! Three pieces work together:
//!
//! * a **scanner** ([`checker`]) that probes a deployment's QUERY/AUTH/
//!   ACCESS endpoints with tampered messages, signatures, and nonces,
//!   classifies the blind-message-attack risk, and flags replay and
//!   multi-message exposure;
//! * a **guard engine** ([`guard`]) that learns one message template per
//!   site and alerts when another site's template shows up in a
//!   signature request;
//! * a **simulator** ([`sim`]) serving reference servers with
//!   configurable verification flaws, so every detection claim can be
//!   reproduced locally.
//!
//! [`message`] parses sign-in messages, [`crypto`] implements
//! EIP-191 personal signatures over secp256k1, [`transport`] renders and
//! executes templated HTTP requests, and [`fixtures`] provides the
//! canned fleet and corpora.

pub mod checker;
pub mod crypto;
pub mod fixtures;
pub mod guard;
pub mod message;
pub mod report;
pub mod sim;
pub mod transport;
