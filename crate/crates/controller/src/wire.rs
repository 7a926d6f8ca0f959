//! Line protocol between anchors and the controller.
//!
//! One report per line, a flat JSON object:
//!
//! ```text
//! {"v":1,"a":"A3","r":0,"g":"T1","s":-67.5,"t":1700000000000}
//! ```
//!
//! `v` format version, `a` anchor id, `r` receiver index, `g` tag id,
//! `s` RSSI in dBm with at most one fractional digit, `t` anchor reception
//! time in Unix milliseconds. Unknown keys are ignored. Ids are 1 to 64
//! characters from `[A-Za-z0-9_.:-]` so they can be written to CSV verbatim.

use serde::Deserialize;
use serde_json::value::RawValue;
use thiserror::Error;
use wanderloc_core::RawReport;

pub const WIRE_VERSION: u64 = 1;
pub const MAX_LINE_BYTES: usize = 1024;
pub const MAX_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("invalid report: {0}")]
    Invalid(String),
    #[error("unsupported format version {0}")]
    VersionUnsupported(String),
}

fn malformed(msg: impl std::fmt::Display) -> WireError {
    WireError::Malformed(msg.to_string())
}

fn invalid(msg: impl std::fmt::Display) -> WireError {
    WireError::Invalid(msg.to_string())
}

// Every field is taken raw so that type and range problems can be told apart.
#[derive(Deserialize)]
struct Fields<'a> {
    #[serde(borrow)]
    v: Option<&'a RawValue>,
    #[serde(borrow)]
    a: Option<&'a RawValue>,
    #[serde(borrow)]
    r: Option<&'a RawValue>,
    #[serde(borrow)]
    g: Option<&'a RawValue>,
    #[serde(borrow)]
    s: Option<&'a RawValue>,
    #[serde(borrow)]
    t: Option<&'a RawValue>,
}

fn required<'a>(field: Option<&'a RawValue>, name: &str) -> Result<&'a str, WireError> {
    field
        .map(|v| v.get())
        .ok_or_else(|| malformed(format!("missing field {name:?}")))
}

fn is_integer_literal(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn parse_id(raw: &str, name: &str) -> Result<String, WireError> {
    let id: String = serde_json::from_str(raw).map_err(|_| malformed(format!("{name:?} must be a string")))?;
    let ok_char = |c: char| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | ':' | '-');
    if id.is_empty() || id.len() > MAX_ID_LEN || !id.chars().all(ok_char) {
        return Err(invalid(format!("bad {name:?} id {id:?}")));
    }
    Ok(id)
}

fn parse_rssi(raw: &str) -> Result<f64, WireError> {
    if !raw.starts_with(|c: char| c == '-' || c.is_ascii_digit()) {
        return Err(malformed("\"s\" must be a number"));
    }
    if raw.contains(['e', 'E']) {
        return Err(invalid("\"s\" must be plain decimal"));
    }
    if let Some((_, frac)) = raw.split_once('.') {
        if frac.len() > 1 {
            return Err(invalid(format!("\"s\" has more than one fractional digit: {raw}")));
        }
    }
    raw.parse::<f64>().map_err(|_| malformed(format!("bad number {raw}")))
}

/// Parses one line, with or without its trailing newline.
pub fn parse_report(line: &str) -> Result<RawReport<f64>, WireError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.len() > MAX_LINE_BYTES {
        return Err(malformed(format!("line longer than {MAX_LINE_BYTES} bytes")));
    }
    let fields: Fields = serde_json::from_str(line).map_err(malformed)?;

    let v = required(fields.v, "v")?;
    if v != "1" {
        return Err(WireError::VersionUnsupported(v.to_owned()));
    }
    let anchor = parse_id(required(fields.a, "a")?, "a")?;
    let tag = parse_id(required(fields.g, "g")?, "g")?;

    let r = required(fields.r, "r")?;
    if !is_integer_literal(r) {
        return Err(malformed("\"r\" must be an integer"));
    }
    let receiver = match r {
        "0" => 0,
        "1" => 1,
        _ => return Err(invalid(format!("receiver index {r} not in {{0,1}}"))),
    };

    let rssi = parse_rssi(required(fields.s, "s")?)?;

    let t = required(fields.t, "t")?;
    if !is_integer_literal(t) {
        return Err(malformed("\"t\" must be an integer"));
    }
    let timestamp: i64 = t.parse().map_err(|_| invalid(format!("timestamp {t} out of range")))?;

    RawReport::new(anchor, receiver, tag, rssi, timestamp).map_err(invalid)
}

/// Byte-level entry point for socket input. Never panics.
pub fn parse_report_bytes(line: &[u8]) -> Result<RawReport<f64>, WireError> {
    if line.len() > MAX_LINE_BYTES + 2 {
        return Err(malformed(format!("line longer than {MAX_LINE_BYTES} bytes")));
    }
    let text = std::str::from_utf8(line).map_err(|_| malformed("not UTF-8"))?;
    parse_report(text)
}

/// Encodes a report as one line without the newline. RSSI is rounded to 0.1 dB.
pub fn format_report(report: &RawReport<f64>) -> String {
    // -0.0 would print as "-0.0"; keep the canonical form
    let s = (report.rssi * 10.0).round() / 10.0 + 0.0;
    format!(
        "{{\"v\":{WIRE_VERSION},\"a\":\"{}\",\"r\":{},\"g\":\"{}\",\"s\":{:.1},\"t\":{}}}",
        report.anchor_id, report.receiver_index, report.tag_id, s, report.timestamp
    )
}
