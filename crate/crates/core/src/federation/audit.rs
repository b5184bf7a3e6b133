//! Privacy audit of a message transcript: every message must decode into the
//! typed schema (which has no row-carrying variant), every site aggregate
//! must be a named finite scalar over at least two rows, and no vector in any
//! payload may exceed a size bound that does not depend on site sizes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wire::{site_origin, Message, Payload, COORDINATOR};
use crate::error::Result;
use crate::site_ops::Response;

/// Longest array allowed anywhere in a payload.
pub const MAX_VECTOR_LEN: usize = 4096;
/// Fewest rows an aggregate entry may summarise.
pub const MIN_AGGREGATE_ROWS: u64 = 2;

const AGGREGATE_NAMES: [&str; 15] = [
    "n",
    "positives",
    "loglik",
    "max_abs_eta",
    "grad",
    "hess",
    "xtx",
    "xty",
    "sum_t1",
    "sum_t0",
    "fallback_rows",
    "s11",
    "s00",
    "s01",
    "rows",
];

fn allowed_name(name: &str) -> bool {
    let base = name.split('[').next().unwrap_or(name);
    if AGGREGATE_NAMES.contains(&base) {
        return true;
    }
    // Per-fold Gram sums: `sum<f>[i]`, `prod<f>[i]`.
    ["sum", "prod"].iter().any(|p| {
        base.strip_prefix(p).is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub messages: usize,
    pub requests: usize,
    pub responses: usize,
    pub failures: usize,
    pub aggregate_entries: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn longest_array(v: &serde_json::Value) -> usize {
    match v {
        serde_json::Value::Array(a) => a.iter().map(longest_array).max().unwrap_or(0).max(a.len()),
        serde_json::Value::Object(o) => o.values().map(longest_array).max().unwrap_or(0),
        _ => 0,
    }
}

fn check_message(msg: &Message, report: &mut AuditReport) {
    let id = msg.file_name();
    let mut flag = |v: String| report.violations.push(format!("{id}: {v}"));
    match &msg.payload {
        Payload::Request { .. } => {
            report.requests += 1;
            if msg.origin != COORDINATOR {
                flag(format!("request sent by {}", msg.origin));
            }
        }
        Payload::Failure { site, .. } => {
            report.failures += 1;
            if msg.origin != site_origin(*site) {
                flag(format!("failure for site {site} sent by {}", msg.origin));
            }
        }
        Payload::Response { response } => {
            report.responses += 1;
            let site = match response {
                Response::Summary(s) => s.site,
                Response::Models(m) => m.site,
                Response::Aggregate(a) => a.site,
                Response::Ack { site } => *site,
            };
            if msg.origin != site_origin(site) {
                flag(format!("response for site {site} sent by {}", msg.origin));
            }
            if let Response::Aggregate(a) = response {
                for e in &a.entries {
                    report.aggregate_entries += 1;
                    if !allowed_name(&e.name) {
                        flag(format!("unexpected aggregate entry `{}`", e.name));
                    }
                    if !e.value.is_finite() {
                        flag(format!("non-finite aggregate entry `{}`", e.name));
                    }
                    if e.count < MIN_AGGREGATE_ROWS {
                        flag(format!("aggregate entry `{}` summarises {} row(s)", e.name, e.count));
                    }
                }
            }
        }
    }
    match serde_json::to_value(&msg.payload) {
        Ok(v) => {
            let len = longest_array(&v);
            if len > MAX_VECTOR_LEN {
                flag(format!("payload carries a vector of length {len}"));
            }
        }
        Err(e) => flag(format!("payload does not re-encode: {e}")),
    }
}

pub fn audit_transcript(messages: &[Message]) -> AuditReport {
    let mut report = AuditReport {
        messages: messages.len(),
        requests: 0,
        responses: 0,
        failures: 0,
        aggregate_entries: 0,
        violations: Vec::new(),
    };
    for m in messages {
        check_message(m, &mut report);
    }
    report
}

/// Audits every `*.json` file in an outbox directory, including files that
/// do not decode (each is a violation).
pub fn audit_outbox(dir: &Path) -> Result<AuditReport> {
    let mut names: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let mut decoded = Vec::new();
    let mut undecodable = Vec::new();
    for p in &names {
        match Message::decode(&std::fs::read_to_string(p)?) {
            Ok(m) => {
                if m.file_name() != p.file_name().and_then(|n| n.to_str()).unwrap_or_default() {
                    undecodable.push(format!("{}: file name does not match its header", p.display()));
                }
                decoded.push(m)
            }
            Err(e) => undecodable.push(format!("{}: {e}", p.display())),
        }
    }
    let mut report = audit_transcript(&decoded);
    report.messages = names.len();
    report.violations.extend(undecodable);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::site_ops::Aggregate;

    fn aggregate_msg(name: &str, count: u64) -> Message {
        let mut a = Aggregate::new(1);
        a.push(name, 1.0, count);
        Message::new(1, site_origin(1), "x_reply", Payload::Response { response: Response::Aggregate(a) })
    }

    #[test]
    fn names_and_counts_are_checked() {
        assert!(audit_transcript(&[aggregate_msg("sum_t1", 10)]).passed());
        assert!(audit_transcript(&[aggregate_msg("prod3[17]", 10)]).passed());
        assert!(!audit_transcript(&[aggregate_msg("y", 10)]).passed());
        assert!(!audit_transcript(&[aggregate_msg("sum_t1", 1)]).passed());
        assert!(!audit_transcript(&[aggregate_msg("prodx[1]", 10)]).passed());
    }

    #[test]
    fn spoofed_origin_is_flagged() {
        let mut m = aggregate_msg("n", 5);
        m.origin = site_origin(2);
        assert!(!audit_transcript(&[m]).passed());
    }

    #[test]
    fn row_dump_in_a_file_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("000001_site0_rows.json"),
            r#"{"round":1,"origin":"site0","kind":"rows","payload":{"type":"rows","y":[1.0,2.0]},"schema_version":1}"#,
        )
        .unwrap();
        let r = audit_outbox(dir.path()).unwrap();
        assert_eq!(r.messages, 1);
        assert!(!r.passed());
    }
}
