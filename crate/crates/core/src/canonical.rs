//! Canonical JSON encoding and content digests.
//!
//! Canonical form: object keys sorted, no insignificant whitespace, integers
//! printed verbatim and every other number printed in scientific notation
//! with 17 significant digits. Two values that compare equal always produce
//! the same bytes, so the SHA-256 of the canonical form is a stable digest.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Serialize `value` to its canonical JSON string.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    Ok(canonical_value(&v))
}

/// Render an already-built JSON value canonically.
pub fn canonical_value(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(0.0)));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string escape")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("key escape"));
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// 17 significant digits, always in exponent form (`1.0000000000000000e-1`).
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical JSON form of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(sha256_hex(to_canonical_string(value)?.as_bytes()))
}

/// Digest of a JSON object with one field removed (used for self-digesting
/// documents, where the digest field cannot cover itself).
pub fn digest_without_field(value: &Value, field: &str) -> String {
    let mut copy = value.clone();
    if let Value::Object(map) = &mut copy {
        map.remove(field);
    }
    sha256_hex(canonical_value(&copy).as_bytes())
}
