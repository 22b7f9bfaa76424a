//! Runtime values shared by the interpreter, the reward functions and the
//! evaluation protocol.
//!
//! Equality is *canonical*: integers and floats compare by numeric value
//! (`2 == 2.0`), sets compare as their sorted member sequences, and there is
//! no NaN anywhere (the interpreter rejects it at the producing operation), so
//! equality and ordering are total.

use std::cmp::Ordering;
use std::fmt;

/// A MiniImp value.
///
/// `Set` members are kept sorted under [`canonical_cmp`] and deduplicated
/// under canonical equality; use [`Value::set_from`] to build one.
#[derive(Debug, Clone)]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Null,
    List(Vec<Value>),
    Set(Vec<Value>),
}

/// Returned when a non-hashable value is inserted into a set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unhashable;

impl Value {
    /// Builds a set, rejecting members that are not integer, float, boolean
    /// or string.
    pub fn set_from<I: IntoIterator<Item = Value>>(items: I) -> Result<Value, Unhashable> {
        let mut members = Vec::new();
        for item in items {
            insert_member(&mut members, item)?;
        }
        Ok(Value::Set(members))
    }

    pub fn is_hashable(&self) -> bool {
        matches!(
            self,
            Value::Int(_) | Value::Float(_) | Value::Bool(_) | Value::Str(_)
        )
    }

    pub fn is_atomic(&self) -> bool {
        !matches!(self, Value::List(_) | Value::Set(_))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Bool(_) => "bool",
            Value::Str(_) => "str",
            Value::Null => "null",
            Value::List(_) => "list",
            Value::Set(_) => "set",
        }
    }

    /// Numeric view used by probes; booleans are deliberately not numeric.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }
}

/// Inserts into a sorted, deduplicated member vector.
pub(crate) fn insert_member(members: &mut Vec<Value>, item: Value) -> Result<(), Unhashable> {
    if !item.is_hashable() {
        return Err(Unhashable);
    }
    match members.binary_search_by(|m| canonical_cmp(m, &item)) {
        Ok(_) => {}
        Err(pos) => members.insert(pos, item),
    }
    Ok(())
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        values_equal(self, other)
    }
}

impl Eq for Value {}

/// Canonical equality: numeric coercion between integers and floats, exact
/// comparison for everything else, elementwise for lists and sets. A set is
/// never equal to a list.
pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::List(xs), Value::List(ys)) | (Value::Set(xs), Value::Set(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| values_equal(x, y))
        }
        (Value::List(_) | Value::Set(_), _) | (_, Value::List(_) | Value::Set(_)) => false,
        _ => canonical_cmp(a, b) == Ordering::Equal,
    }
}

/// Compares a decoded prediction (or expected output) against a ground-truth
/// value, recovering set-ness from the truth: a set-valued truth matches a
/// list only if the list holds exactly its members in ascending canonical
/// order. Everything else falls back to [`values_equal`].
pub fn matches_truth(pred: &Value, truth: &Value) -> bool {
    match (truth, pred) {
        (Value::Set(ts), Value::List(ps) | Value::Set(ps))
        | (Value::List(ts), Value::List(ps)) => {
            ts.len() == ps.len() && ps.iter().zip(ts).all(|(p, t)| matches_truth(p, t))
        }
        _ => values_equal(pred, truth),
    }
}

fn kind_rank(v: &Value) -> u8 {
    match v {
        Value::Int(_) | Value::Float(_) => 0,
        Value::Bool(_) => 1,
        Value::Str(_) => 2,
        Value::Null => 3,
        Value::List(_) => 4,
        Value::Set(_) => 5,
    }
}

/// Total order over values: numbers (by value) < booleans < strings < null <
/// lists < sets; lists and sets compare lexicographically.
pub fn canonical_cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Float(x), Value::Float(y)) => cmp_f64(*x, *y),
        (Value::Int(x), Value::Float(y)) => cmp_int_float(*x, *y),
        (Value::Float(x), Value::Int(y)) => cmp_int_float(*y, *x).reverse(),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        (Value::Null, Value::Null) => Ordering::Equal,
        (Value::List(xs), Value::List(ys)) | (Value::Set(xs), Value::Set(ys)) => {
            for (x, y) in xs.iter().zip(ys) {
                let ord = canonical_cmp(x, y);
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            xs.len().cmp(&ys.len())
        }
        _ => kind_rank(a).cmp(&kind_rank(b)),
    }
}

fn cmp_f64(x: f64, y: f64) -> Ordering {
    // NaN never reaches a Value; treat it as equal rather than panic.
    x.partial_cmp(&y).unwrap_or(Ordering::Equal)
}

/// Exact comparison of an i64 against an f64 without rounding the integer.
pub(crate) fn cmp_int_float(i: i64, f: f64) -> Ordering {
    if f.is_nan() {
        return Ordering::Equal;
    }
    // 2^63 is exactly representable; i64 lies in [-2^63, 2^63).
    const TWO_63: f64 = 9_223_372_036_854_775_808.0;
    if f >= TWO_63 {
        return Ordering::Less;
    }
    if f < -TWO_63 {
        return Ordering::Greater;
    }
    let whole = f.trunc();
    let whole_int = whole as i64;
    match i.cmp(&whole_int) {
        Ordering::Equal => {
            let frac = f - whole;
            if frac > 0.0 {
                Ordering::Less
            } else if frac < 0.0 {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        }
        ord => ord,
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::evalsuite::canonical_serialize(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_float_coercion() {
        assert_eq!(Value::Int(2), Value::Float(2.0));
        assert_ne!(Value::Int(2), Value::Float(2.5));
        assert_eq!(
            cmp_int_float(i64::MAX, 9_223_372_036_854_775_808.0),
            Ordering::Less
        );
        assert_eq!(cmp_int_float(-3, -2.5), Ordering::Less);
        assert_eq!(cmp_int_float(-2, -2.5), Ordering::Greater);
        assert_eq!(cmp_int_float(5, f64::INFINITY), Ordering::Less);
        assert_eq!(cmp_int_float(5, f64::NEG_INFINITY), Ordering::Greater);
    }

    #[test]
    fn infinities() {
        let pinf = Value::Float(f64::INFINITY);
        let ninf = Value::Float(f64::NEG_INFINITY);
        assert_eq!(pinf, pinf.clone());
        assert_ne!(pinf, ninf);
    }

    #[test]
    fn sets_are_order_free_and_deduplicated() {
        let a = Value::set_from([Value::Int(3), Value::Int(1), Value::Int(2)]).unwrap();
        let b = Value::set_from([Value::Int(2), Value::Int(3), Value::Int(1), Value::Float(1.0)])
            .unwrap();
        assert_eq!(a, b);
        if let Value::Set(m) = &b {
            assert_eq!(m.len(), 3);
        }
        assert_eq!(
            Value::set_from([Value::List(vec![])]),
            Err(Unhashable)
        );
        assert_eq!(Value::set_from([Value::Null]), Err(Unhashable));
    }

    #[test]
    fn set_never_equals_list() {
        let s = Value::set_from([Value::Int(1)]).unwrap();
        assert_ne!(s, Value::List(vec![Value::Int(1)]));
    }

    #[test]
    fn set_truth_requires_ascending_list() {
        let truth = Value::set_from([Value::Int(2), Value::Int(1)]).unwrap();
        let asc = Value::List(vec![Value::Int(1), Value::Int(2)]);
        let desc = Value::List(vec![Value::Int(2), Value::Int(1)]);
        assert!(matches_truth(&asc, &truth));
        assert!(!matches_truth(&desc, &truth));
        assert!(!matches_truth(&asc, &Value::List(vec![Value::Int(2), Value::Int(1)])));
        let nested = Value::List(vec![truth.clone()]);
        assert!(matches_truth(&Value::List(vec![asc]), &nested));
    }

    #[test]
    fn mixed_kind_order() {
        let mut v = vec![
            Value::Str("a".into()),
            Value::Bool(true),
            Value::Float(0.5),
            Value::Int(-1),
            Value::Bool(false),
        ];
        v.sort_by(canonical_cmp);
        assert_eq!(
            v,
            vec![
                Value::Int(-1),
                Value::Float(0.5),
                Value::Bool(false),
                Value::Bool(true),
                Value::Str("a".into())
            ]
        );
    }
}
