//! Log records and the hash chain over them.
//!
//! `digest = SHA-256(prev_digest ‖ canonical payload bytes)`, where
//! `prev_digest` is taken as its 64 ASCII hex characters. Record 0 links to
//! [`GENESIS`].

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use vitaldx_core::canonical;
use vitaldx_core::engine::Input;
use vitaldx_core::ids::PatientId;
use vitaldx_core::time::Timestamp;

pub const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub seq: u64,
    pub recorded_at: Timestamp,
    pub patient_id: Option<PatientId>,
    pub kind: String,
    pub payload: Value,
    pub prev_digest: String,
    pub digest: String,
}

/// What a record carries: one accepted engine input and the time it was
/// applied at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub at: Timestamp,
    pub input: Input,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("invalid chain at seq {seq}: {reason}")]
    InvalidChain { seq: u64, reason: String },
}

impl ChainError {
    pub fn seq(&self) -> u64 {
        match self {
            ChainError::InvalidChain { seq, .. } => *seq,
        }
    }

    fn at(seq: u64, reason: impl Into<String>) -> Self {
        ChainError::InvalidChain { seq, reason: reason.into() }
    }
}

pub fn link_digest(prev_digest: &str, payload: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prev_digest.as_bytes());
    hasher.update(canonical::to_canonical_bytes(payload));
    hex::encode(hasher.finalize())
}

impl LogRecord {
    /// The record's line in the log file, without the newline.
    pub fn to_line(&self) -> String {
        canonical::to_canonical_string(self)
    }

    pub fn entry(&self) -> Result<Entry, ChainError> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| ChainError::at(self.seq, format!("payload is not an input entry: {e}")))
    }
}

/// Tail of a chain: everything needed to append the next record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Head {
    pub next_seq: u64,
    pub digest: String,
}

impl Default for Head {
    fn default() -> Self {
        Self { next_seq: 0, digest: GENESIS.to_string() }
    }
}

impl Head {
    /// Builds the record that extends the chain with `entry` and advances
    /// the head past it.
    pub fn seal(&mut self, entry: &Entry) -> LogRecord {
        let payload = serde_json::to_value(entry).expect("entries serialize");
        let digest = link_digest(&self.digest, &payload);
        let record = LogRecord {
            seq: self.next_seq,
            recorded_at: entry.at,
            patient_id: entry.input.patient_id(),
            kind: entry.input.name().to_string(),
            payload,
            prev_digest: self.digest.clone(),
            digest: digest.clone(),
        };
        self.next_seq += 1;
        self.digest = digest;
        record
    }
}

/// Checks one record against the head that should precede it: position,
/// linkage, digest, and that the unhashed header fields agree with the
/// payload.
pub fn check_record(head: &Head, record: &LogRecord) -> Result<(), ChainError> {
    let seq = head.next_seq;
    if record.seq != seq {
        return Err(ChainError::at(seq, format!("expected seq {seq}, found {}", record.seq)));
    }
    if record.prev_digest != head.digest {
        return Err(ChainError::at(seq, "prev_digest does not match the preceding record"));
    }
    if record.digest != link_digest(&record.prev_digest, &record.payload) {
        return Err(ChainError::at(seq, "digest does not match the payload"));
    }
    let entry = record.entry()?;
    if record.recorded_at != entry.at
        || record.kind != entry.input.name()
        || record.patient_id != entry.input.patient_id()
    {
        return Err(ChainError::at(seq, "header fields disagree with the payload"));
    }
    Ok(())
}

/// Verifies parsed records; returns the head digest.
pub fn verify_chain(records: &[LogRecord]) -> Result<String, ChainError> {
    let mut head = Head::default();
    for record in records {
        check_record(&head, record)?;
        head.next_seq += 1;
        head.digest = record.digest.clone();
    }
    Ok(head.digest)
}

/// Parses and verifies raw log text line by line. A line that does not
/// parse, or is not in canonical form, fails at the seq it should hold.
pub fn verify_text(text: &[u8]) -> Result<(Vec<LogRecord>, Head), ChainError> {
    let mut head = Head::default();
    let mut records = Vec::new();
    let body = text.strip_suffix(b"\n").unwrap_or(text);
    if body.is_empty() {
        return Ok((records, head));
    }
    for line in body.split(|b| *b == b'\n') {
        let seq = head.next_seq;
        let line = std::str::from_utf8(line).map_err(|_| ChainError::at(seq, "line is not UTF-8"))?;
        let record: LogRecord =
            serde_json::from_str(line).map_err(|e| ChainError::at(seq, format!("unreadable record: {e}")))?;
        if record.to_line() != line {
            return Err(ChainError::at(seq, "record is not in canonical form"));
        }
        check_record(&head, &record)?;
        head.next_seq += 1;
        head.digest = record.digest.clone();
        records.push(record);
    }
    Ok((records, head))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tick(s: i64) -> Entry {
        Entry { at: Timestamp::from_seconds(s), input: Input::Tick }
    }

    fn log(n: i64) -> Vec<LogRecord> {
        let mut head = Head::default();
        (0..n).map(|i| head.seal(&tick(i * 60))).collect()
    }

    fn text(records: &[LogRecord]) -> Vec<u8> {
        records.iter().flat_map(|r| format!("{}\n", r.to_line()).into_bytes()).collect()
    }

    #[test]
    fn empty_log_is_valid_at_genesis() {
        assert_eq!(verify_chain(&[]).unwrap(), GENESIS);
        let (records, head) = verify_text(b"").unwrap();
        assert!(records.is_empty());
        assert_eq!(head, Head::default());
    }

    #[test]
    fn first_record_links_to_genesis() {
        let records = log(3);
        assert_eq!(records[0].prev_digest, GENESIS);
        assert_eq!(records[1].prev_digest, records[0].digest);
        assert_eq!(verify_chain(&records).unwrap(), records[2].digest);
    }

    #[test]
    fn tampered_payload_fails_at_its_seq() {
        let mut records = log(10);
        records[5].payload["at"] = serde_json::json!("1970-01-01T00:05:01Z");
        assert_eq!(verify_chain(&records).unwrap_err().seq(), 5);
    }

    #[test]
    fn header_must_agree_with_payload() {
        let mut records = log(4);
        records[2].kind = "flush".into();
        assert_eq!(verify_chain(&records).unwrap_err().seq(), 2);
    }

    #[test]
    fn gap_in_seq_is_rejected() {
        let mut records = log(4);
        records.remove(1);
        assert_eq!(verify_chain(&records).unwrap_err().seq(), 1);
    }

    #[test]
    fn broken_line_fails_at_its_seq() {
        let records = log(4);
        let mut bytes = text(&records);
        let second_line = bytes.iter().position(|b| *b == b'\n').unwrap() + 1;
        bytes[second_line] = b'[';
        assert_eq!(verify_text(&bytes).unwrap_err().seq(), 1);
    }

    #[test]
    fn missing_trailing_newline_is_fine() {
        let records = log(2);
        let mut bytes = text(&records);
        bytes.pop();
        assert_eq!(verify_text(&bytes).unwrap().0, records);
    }
}
