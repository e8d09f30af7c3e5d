//! Canonical JSON: UTF-8, lexicographically sorted object keys, no
//! insignificant whitespace. All digests in the system are taken over this form.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serializes `value` canonically.
///
/// Keys are sorted because `serde_json::Value` objects are `BTreeMap`-backed
/// (the `preserve_order` feature must stay disabled).
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("engine types serialize to JSON");
    serde_json::to_string(&value).expect("JSON values always serialize")
}

pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    to_canonical_string(value).into_bytes()
}

/// Lowercase hex SHA-256 of the given bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Lowercase hex SHA-256 of the canonical serialization of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&to_canonical_bytes(value))
}
