//! Canonical single-line serialization of values and prediction records.
//!
//! Spacing is fixed: `{ "key": value, "key2": value }`, `[1, 2]`, empty
//! containers as `{}` and `[]`. Sets are written as ascending lists,
//! infinities as the sentinel strings `"__INF__"` / `"__-INF__"`, and floats
//! in shortest round-trip form.

use serde_json::Value as Json;

use crate::value::Value;

pub const POS_INF_SENTINEL: &str = "__INF__";
pub const NEG_INF_SENTINEL: &str = "__-INF__";

pub fn canonical_serialize(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v);
    out
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Int(i) => out.push_str(&i.to_string()),
        Value::Float(f) if f.is_infinite() => {
            let s = if *f > 0.0 {
                POS_INF_SENTINEL
            } else {
                NEG_INF_SENTINEL
            };
            out.push('"');
            out.push_str(s);
            out.push('"');
        }
        Value::Float(f) => out.push_str(&format!("{f:?}")),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Null => out.push_str("null"),
        Value::Str(s) => out.push_str(&quote(s)),
        Value::List(items) | Value::Set(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item);
            }
            out.push(']');
        }
    }
}

pub(crate) fn quote(s: &str) -> String {
    serde_json::to_string(s).unwrap_or_else(|_| "\"\"".to_string())
}

/// Writes `{ "k1": v1, "k2": v2 }` from already-serialized values, keeping
/// the given key order.
pub fn canonical_object<K: AsRef<str>>(entries: &[(K, String)]) -> String {
    if entries.is_empty() {
        return "{}".to_string();
    }
    let body = entries
        .iter()
        .map(|(k, v)| format!("{}: {}", quote(k.as_ref()), v))
        .collect::<Vec<_>>()
        .join(", ");
    format!("{{ {body} }}")
}

/// The `{ "final_output": ..., "variables": { ... } }` line, with variables
/// in the order given.
pub fn serialize_record(final_output: &Value, variables: &[(String, Value)]) -> String {
    let vars: Vec<(&str, String)> = variables
        .iter()
        .map(|(k, v)| (k.as_str(), canonical_serialize(v)))
        .collect();
    canonical_object(&[
        ("final_output", canonical_serialize(final_output)),
        ("variables", canonical_object(&vars)),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot decode value: {0}")]
pub struct DecodeError(pub String);

/// Decodes a strict JSON value into a [`Value`]: integers that fit i64 stay
/// integers, other numbers become floats, sentinel strings become
/// infinities, arrays become lists. Objects are rejected.
pub fn decode_json(j: &Json) -> Result<Value, DecodeError> {
    Ok(match j {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => {
                let f = n
                    .as_f64()
                    .ok_or_else(|| DecodeError(format!("unrepresentable number {n}")))?;
                Value::Float(f)
            }
        },
        Json::String(s) if s == POS_INF_SENTINEL => Value::Float(f64::INFINITY),
        Json::String(s) if s == NEG_INF_SENTINEL => Value::Float(f64::NEG_INFINITY),
        Json::String(s) => Value::Str(s.clone()),
        Json::Array(items) => Value::List(items.iter().map(decode_json).collect::<Result<_, _>>()?),
        Json::Object(_) => return Err(DecodeError("objects are not values".to_string())),
    })
}

/// Parses canonical text back into a value (sets come back as lists).
pub fn parse_canonical(text: &str) -> Result<Value, DecodeError> {
    let j: Json = serde_json::from_str(text).map_err(|e| DecodeError(e.to_string()))?;
    decode_json(&j)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_example_line_is_byte_exact() {
        let line = serialize_record(
            &Value::Int(3),
            &[
                ("cnt".to_string(), Value::Int(2)),
                (
                    "buf".to_string(),
                    Value::List(vec![Value::Int(1), Value::Int(2)]),
                ),
            ],
        );
        assert_eq!(
            line,
            r#"{ "final_output": 3, "variables": { "cnt": 2, "buf": [1, 2] } }"#
        );
    }

    #[test]
    fn sets_ascend_and_infinities_use_sentinels() {
        let s = Value::set_from([Value::Int(3), Value::Int(1), Value::Int(2)]).unwrap();
        assert_eq!(canonical_serialize(&s), "[1, 2, 3]");
        assert_eq!(canonical_serialize(&Value::Float(f64::INFINITY)), "\"__INF__\"");
        assert_eq!(
            canonical_serialize(&Value::Float(f64::NEG_INFINITY)),
            "\"__-INF__\""
        );
        let mixed = Value::set_from([
            Value::Str("b".into()),
            Value::Bool(true),
            Value::Float(1.5),
            Value::Int(-2),
        ])
        .unwrap();
        assert_eq!(canonical_serialize(&mixed), r#"[-2, 1.5, true, "b"]"#);
    }

    #[test]
    fn number_and_string_forms() {
        assert_eq!(canonical_serialize(&Value::Float(2.0)), "2.0");
        assert_eq!(canonical_serialize(&Value::Float(0.1)), "0.1");
        assert_eq!(canonical_serialize(&Value::Float(1e300)), "1e300");
        assert_eq!(canonical_serialize(&Value::Str("a\"b\n".into())), r#""a\"b\n""#);
        assert_eq!(canonical_serialize(&Value::List(vec![])), "[]");
        assert_eq!(serialize_record(&Value::Null, &[]), r#"{ "final_output": null, "variables": {} }"#);
    }

    #[test]
    fn decode_round_trip_of_scalars() {
        for v in [
            Value::Int(-7),
            Value::Float(2.5),
            Value::Float(1e300),
            Value::Float(f64::NEG_INFINITY),
            Value::Str("__INF__x".into()),
            Value::Bool(false),
            Value::Null,
        ] {
            let back = parse_canonical(&canonical_serialize(&v)).unwrap();
            assert_eq!(back, v);
            assert_eq!(back.type_name(), v.type_name());
        }
    }
}
