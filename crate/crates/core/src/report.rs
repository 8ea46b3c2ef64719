//! Report rendering: a markdown grid mirroring the detection-result
//! columns (message design, server verification, risk, replay,
//! multi-message) plus a JSON form with full evidence.

use serde::Serialize;

use crate::checker::ScanReport;

/// Outcome of scanning one target: a full report, or a note that the
/// target could not be assessed.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RowOutcome {
    Done(ScanReport),
    Inconclusive { label: String, reason: String },
}

impl RowOutcome {
    pub fn label(&self) -> &str {
        match self {
            RowOutcome::Done(report) => &report.label,
            RowOutcome::Inconclusive { label, .. } => label,
        }
    }
}

fn mark(present: bool) -> &'static str {
    if present {
        "yes"
    } else {
        "no"
    }
}

fn risk_mark(flag: bool) -> &'static str {
    if flag {
        "RISK"
    } else {
        "-"
    }
}

/// One row per target, columns in the order: message design (domain,
/// name, nonce), server verification (message, body, nonce, signature,
/// address), then risk level and the two advanced-attack flags.
pub fn render_markdown(rows: &[RowOutcome]) -> String {
    let mut out = String::new();
    out.push_str(
        "| # | Target | Domain | Name | Nonce | Message | Body | Nonce check | Signature | Address | BMA | RA | BMMA |\n",
    );
    out.push_str(
        "|---|--------|--------|------|-------|---------|------|-------------|-----------|---------|-----|----|------|\n",
    );
    for (index, row) in rows.iter().enumerate() {
        match row {
            RowOutcome::Done(report) => {
                let f = &report.finding;
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    index + 1,
                    report.label,
                    mark(f.message_fields.has_domain),
                    mark(f.message_fields.has_name),
                    mark(f.message_fields.has_nonce),
                    f.server_checks.message,
                    f.server_checks.body,
                    f.server_checks.nonce,
                    f.server_checks.signature,
                    f.server_checks.address,
                    report.risk.letter(),
                    risk_mark(report.replay_risk),
                    risk_mark(report.bmma_risk),
                ));
            }
            RowOutcome::Inconclusive { label, reason } => {
                out.push_str(&format!(
                    "| {} | {} | - | - | - | - | - | - | - | - | Inconclusive | - | - |\n",
                    index + 1,
                    label,
                ));
                out.push_str(&format!("<!-- {label}: {reason} -->\n"));
            }
        }
    }
    out
}

/// Full JSON report. Timing is not serialized, so repeated runs against
/// a static fleet are byte-identical for a fixed seed.
pub fn render_json(rows: &[RowOutcome]) -> String {
    serde_json::to_string_pretty(&serde_json::json!({ "reports": rows }))
        .expect("reports serialize")
}
