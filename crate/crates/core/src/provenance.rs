//! Stable hashing of configuration values.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serializes `value` to JSON with object keys sorted, without whitespace.
pub fn canonical_json<S: Serialize + ?Sized>(value: &S) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so a round trip sorts them.
    let v = serde_json::to_value(value).expect("config serializes to JSON");
    serde_json::to_string(&v).expect("JSON value serializes")
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn canonical_hash<S: Serialize + ?Sized>(value: &S) -> String {
    hex::encode(Sha256::digest(canonical_json(value).as_bytes()))
}
