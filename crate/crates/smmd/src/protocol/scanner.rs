//! Structural transcript audit for the honest-but-curious model: every frame
//! must contain only ciphertexts, masked ring values, aggregate scalar
//! losses, or control metadata. Plaintext-typed fields are whitelisted to
//! loss totals, sequence/round counters, scales, shapes, and config echoes;
//! anything else numeric (raw hidden representations, labels, per-sample
//! gradients) is a violation.

use crate::error::{Error, Result};
use serde_json::Value;

#[derive(Debug, Default)]
pub struct ScanReport {
    pub frames: usize,
    /// Hex big-integer fields seen (ciphertexts, masked values, key parts).
    pub hex_fields: usize,
    /// Whitelisted plaintext numerics seen (losses, counters, config echo).
    pub whitelisted_numbers: usize,
    pub violations: Vec<String>,
}

impl ScanReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Numeric fields allowed anywhere in a frame, by normalized path (array
/// indices stripped). `Hello` config echoes are allowed wholesale under
/// `payload.config`.
const ALLOWED_NUMERIC_PATHS: &[&str] = &[
    "seq",
    "payload.round",
    "payload.request_id",
    "payload.scale",
    "payload.loss",
    "payload.layers.layer_index",
    "payload.layers.scale",
    "payload.layers.rows.#len",
    "payload.items.scale",
    "payload.items.shape",
];

fn is_hexish(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_hexdigit())
}

/// Audits a full transcript (both directions). Frames must parse as
/// `smmd/1` messages; unparseable frames are violations, not errors.
pub fn scan_frames(frames: &[Vec<u8>]) -> Result<ScanReport> {
    let mut report = ScanReport { frames: frames.len(), ..Default::default() };
    for (i, frame) in frames.iter().enumerate() {
        match serde_json::from_slice::<Value>(frame) {
            Ok(value) => scan_value(&value, &format!("frame {i}"), "", &mut report),
            Err(e) => report.violations.push(format!("frame {i}: not valid JSON: {e}")),
        }
    }
    Ok(report)
}

fn scan_value(v: &Value, frame: &str, path: &str, report: &mut ScanReport) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let child_path = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                scan_value(child, frame, &child_path, report);
            }
        }
        Value::Array(items) => {
            for item in items {
                // indices are stripped so whitelisting is per-field
                scan_value(item, frame, path, report);
            }
        }
        Value::Number(_) => {
            if numeric_allowed(path) {
                report.whitelisted_numbers += 1;
            } else {
                report.violations.push(format!(
                    "{frame}: plaintext numeric field {path:?} is not whitelisted"
                ));
            }
        }
        Value::String(s) => {
            if is_payload_value_field(path) {
                if is_hexish(s) {
                    report.hex_fields += 1;
                } else {
                    report
                        .violations
                        .push(format!("{frame}: non-hex payload value at {path:?}"));
                }
            }
        }
        Value::Bool(_) | Value::Null => {}
    }
}

fn numeric_allowed(path: &str) -> bool {
    if path.starts_with("payload.config.") {
        return true;
    }
    if path == "payload.shape" || path.ends_with(".shape") {
        return true;
    }
    ALLOWED_NUMERIC_PATHS.contains(&path)
}

/// Fields that must carry hex big integers (ciphertexts or ring elements).
fn is_payload_value_field(path: &str) -> bool {
    path.ends_with(".values") || path.ends_with(".rows") || path == "payload.n" || path == "payload.g"
}

/// Convenience: scan and fail loudly on any violation.
pub fn assert_clean_transcript(frames: &[Vec<u8>]) -> Result<ScanReport> {
    let report = scan_frames(frames)?;
    if !report.clean() {
        return Err(Error::Protocol(format!(
            "transcript scanner found {} violation(s): {}",
            report.violations.len(),
            report.violations.join("; ")
        )));
    }
    Ok(report)
}
