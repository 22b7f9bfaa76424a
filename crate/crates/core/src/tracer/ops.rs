//! Primitive value operations shared by the tracing interpreter and the
//! reference evaluator. Control flow lives in the evaluators; only the
//! per-operator semantics live here.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::lang::{BinaryOp, Builtin, Literal, UnaryOp};
use crate::value::{canonical_cmp, insert_member, values_equal, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuntimeErrorKind {
    TypeMismatch,
    DivisionByZero,
    IndexOutOfRange,
    UndefinedVariable,
    IntegerOverflow,
    UnhashableSetMember,
    /// A float operation produced NaN.
    NotANumber,
    /// Empty `min`/`max`, zero `range` step.
    InvalidArgument,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpError {
    pub kind: RuntimeErrorKind,
    pub detail: String,
}

impl OpError {
    pub fn new(kind: RuntimeErrorKind, detail: impl Into<String>) -> OpError {
        OpError {
            kind,
            detail: detail.into(),
        }
    }
}

pub type OpResult<T> = Result<T, OpError>;

fn type_error(what: &str, a: &Value, b: &Value) -> OpError {
    OpError::new(
        RuntimeErrorKind::TypeMismatch,
        format!("unsupported operand types for {what}: {} and {}", a.type_name(), b.type_name()),
    )
}

fn overflow(what: &str) -> OpError {
    OpError::new(RuntimeErrorKind::IntegerOverflow, format!("integer overflow in {what}"))
}

pub fn float(f: f64) -> OpResult<Value> {
    if f.is_nan() {
        Err(OpError::new(RuntimeErrorKind::NotANumber, "operation produced NaN"))
    } else {
        Ok(Value::Float(f))
    }
}

pub fn literal(lit: &Literal) -> Value {
    match lit {
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(f) => Value::Float(*f),
        Literal::Str(s) => Value::Str(s.clone()),
        Literal::Bool(b) => Value::Bool(*b),
        Literal::Null => Value::Null,
    }
}

enum Num {
    Int(i64),
    Float(f64),
}

fn num(v: &Value) -> Option<Num> {
    match v {
        Value::Int(i) => Some(Num::Int(*i)),
        Value::Float(f) => Some(Num::Float(*f)),
        _ => None,
    }
}

fn as_float(n: &Num) -> f64 {
    match n {
        Num::Int(i) => *i as f64,
        Num::Float(f) => *f,
    }
}

pub fn truthy(v: &Value, context: &str) -> OpResult<bool> {
    match v {
        Value::Bool(b) => Ok(*b),
        other => Err(OpError::new(
            RuntimeErrorKind::TypeMismatch,
            format!("{context} must be a bool, got {}", other.type_name()),
        )),
    }
}

pub fn unary(op: UnaryOp, v: Value) -> OpResult<Value> {
    match (op, v) {
        (UnaryOp::Neg, Value::Int(i)) => i.checked_neg().map(Value::Int).ok_or_else(|| overflow("negation")),
        (UnaryOp::Neg, Value::Float(f)) => Ok(Value::Float(-f)),
        (UnaryOp::Not, Value::Bool(b)) => Ok(Value::Bool(!b)),
        (op, v) => Err(OpError::new(
            RuntimeErrorKind::TypeMismatch,
            format!(
                "bad operand type for unary {}: {}",
                if op == UnaryOp::Neg { "-" } else { "not" },
                v.type_name()
            ),
        )),
    }
}

/// Strict binary operators. `and`/`or` are accepted here only with two
/// boolean operands; evaluators implement their short-circuit.
pub fn binary(op: BinaryOp, a: &Value, b: &Value) -> OpResult<Value> {
    use BinaryOp::*;
    match op {
        Eq => Ok(Value::Bool(values_equal(a, b))),
        Ne => Ok(Value::Bool(!values_equal(a, b))),
        Lt | Le | Gt | Ge => {
            let ord = compare(a, b)?;
            Ok(Value::Bool(match op {
                Lt => ord == Ordering::Less,
                Le => ord != Ordering::Greater,
                Gt => ord == Ordering::Greater,
                _ => ord != Ordering::Less,
            }))
        }
        And | Or => {
            let x = truthy(a, "operand of and/or")?;
            let y = truthy(b, "operand of and/or")?;
            Ok(Value::Bool(if op == And { x && y } else { x || y }))
        }
        Add => match (a, b) {
            (Value::Str(x), Value::Str(y)) => Ok(Value::Str(format!("{x}{y}"))),
            (Value::List(x), Value::List(y)) => {
                Ok(Value::List(x.iter().chain(y).cloned().collect()))
            }
            _ => arith(op, a, b),
        },
        _ => arith(op, a, b),
    }
}

fn compare(a: &Value, b: &Value) -> OpResult<Ordering> {
    match (a, b) {
        (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_))
        | (Value::Str(_), Value::Str(_)) => Ok(canonical_cmp(a, b)),
        _ => Err(type_error("comparison", a, b)),
    }
}

fn arith(op: BinaryOp, a: &Value, b: &Value) -> OpResult<Value> {
    use BinaryOp::*;
    let (Some(x), Some(y)) = (num(a), num(b)) else {
        return Err(type_error(op.symbol(), a, b));
    };
    if let (Num::Int(x), Num::Int(y)) = (&x, &y) {
        let (x, y) = (*x, *y);
        return match op {
            Add => x.checked_add(y).map(Value::Int).ok_or_else(|| overflow("+")),
            Sub => x.checked_sub(y).map(Value::Int).ok_or_else(|| overflow("-")),
            Mul => x.checked_mul(y).map(Value::Int).ok_or_else(|| overflow("*")),
            Div => {
                if y == 0 {
                    Err(OpError::new(RuntimeErrorKind::DivisionByZero, "integer division by zero"))
                } else {
                    float(x as f64 / y as f64)
                }
            }
            FloorDiv => {
                if y == 0 {
                    return Err(OpError::new(
                        RuntimeErrorKind::DivisionByZero,
                        "integer floor division by zero",
                    ));
                }
                let q = x.checked_div(y).ok_or_else(|| overflow("//"))?;
                let adjust = x % y != 0 && ((x < 0) != (y < 0));
                Ok(Value::Int(if adjust { q - 1 } else { q }))
            }
            Mod => {
                if y == 0 {
                    return Err(OpError::new(RuntimeErrorKind::DivisionByZero, "integer modulo by zero"));
                }
                let r = x.checked_rem(y).unwrap_or(0);
                Ok(Value::Int(if r != 0 && ((r < 0) != (y < 0)) { r + y } else { r }))
            }
            _ => unreachable!("non-arithmetic operator"),
        };
    }
    let (x, y) = (as_float(&x), as_float(&y));
    match op {
        Add => float(x + y),
        Sub => float(x - y),
        Mul => float(x * y),
        Div => float(x / y),
        FloorDiv => {
            if y == 0.0 {
                return Err(OpError::new(RuntimeErrorKind::DivisionByZero, "float floor division by zero"));
            }
            float((x / y).floor())
        }
        Mod => {
            if y == 0.0 {
                return Err(OpError::new(RuntimeErrorKind::DivisionByZero, "float modulo by zero"));
            }
            let m = x % y;
            float(if m != 0.0 && ((m < 0.0) != (y < 0.0)) { m + y } else { m })
        }
        _ => unreachable!("non-arithmetic operator"),
    }
}

fn resolve_index(len: usize, idx: &Value) -> OpResult<usize> {
    let Value::Int(i) = idx else {
        return Err(OpError::new(
            RuntimeErrorKind::TypeMismatch,
            format!("indices must be integers, not {}", idx.type_name()),
        ));
    };
    let len_i = len as i64;
    let pos = if *i < 0 { i + len_i } else { *i };
    if pos < 0 || pos >= len_i {
        return Err(OpError::new(
            RuntimeErrorKind::IndexOutOfRange,
            format!("index {i} out of range for length {len}"),
        ));
    }
    Ok(pos as usize)
}

pub fn index(base: &Value, idx: &Value) -> OpResult<Value> {
    match base {
        Value::List(items) => Ok(items[resolve_index(items.len(), idx)?].clone()),
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            Ok(Value::Str(chars[resolve_index(chars.len(), idx)?].to_string()))
        }
        other => Err(OpError::new(
            RuntimeErrorKind::TypeMismatch,
            format!("{} is not indexable", other.type_name()),
        )),
    }
}

pub fn index_assign(target: &mut Value, idx: &Value, v: Value) -> OpResult<()> {
    match target {
        Value::List(items) => {
            let pos = resolve_index(items.len(), idx)?;
            items[pos] = v;
            Ok(())
        }
        other => Err(OpError::new(
            RuntimeErrorKind::TypeMismatch,
            format!("{} does not support item assignment", other.type_name()),
        )),
    }
}

pub fn append(target: &mut Value, v: Value) -> OpResult<()> {
    match target {
        Value::List(items) => {
            items.push(v);
            Ok(())
        }
        Value::Set(members) => insert_member(members, v).map_err(|_| unhashable()),
        other => Err(OpError::new(
            RuntimeErrorKind::TypeMismatch,
            format!("cannot append to {}", other.type_name()),
        )),
    }
}

fn unhashable() -> OpError {
    OpError::new(RuntimeErrorKind::UnhashableSetMember, "unhashable set member")
}

pub fn make_set(items: Vec<Value>) -> OpResult<Value> {
    Value::set_from(items).map_err(|_| unhashable())
}

pub fn call(b: Builtin, mut args: Vec<Value>) -> OpResult<Value> {
    match b {
        Builtin::Len => match &args[0] {
            Value::List(x) | Value::Set(x) => Ok(Value::Int(x.len() as i64)),
            Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
            other => Err(OpError::new(
                RuntimeErrorKind::TypeMismatch,
                format!("{} has no len()", other.type_name()),
            )),
        },
        Builtin::Abs => match &args[0] {
            Value::Int(i) => i.checked_abs().map(Value::Int).ok_or_else(|| overflow("abs")),
            Value::Float(f) => Ok(Value::Float(f.abs())),
            other => Err(OpError::new(
                RuntimeErrorKind::TypeMismatch,
                format!("bad operand type for abs(): {}", other.type_name()),
            )),
        },
        Builtin::Min | Builtin::Max => {
            let items = if args.len() == 1 {
                match args.pop() {
                    Some(Value::List(x)) | Some(Value::Set(x)) => x,
                    Some(other) => {
                        return Err(OpError::new(
                            RuntimeErrorKind::TypeMismatch,
                            format!("{} is not iterable", other.type_name()),
                        ))
                    }
                    None => Vec::new(),
                }
            } else {
                args
            };
            let mut iter = items.into_iter();
            let Some(mut best) = iter.next() else {
                return Err(OpError::new(
                    RuntimeErrorKind::InvalidArgument,
                    format!("{}() of an empty collection", b.name()),
                ));
            };
            for item in iter {
                let ord = compare(&item, &best)?;
                let better = if b == Builtin::Min {
                    ord == Ordering::Less
                } else {
                    ord == Ordering::Greater
                };
                if better {
                    best = item;
                }
            }
            // single-element collections still need a comparable type
            compare(&best, &best)?;
            Ok(best)
        }
    }
}

/// Integer bounds of a `range(start, end, step)` loop.
pub fn range_bounds(start: &Value, end: &Value, step: Option<&Value>) -> OpResult<(i64, i64, i64)> {
    let int = |v: &Value| match v {
        Value::Int(i) => Ok(*i),
        other => Err(OpError::new(
            RuntimeErrorKind::TypeMismatch,
            format!("range() arguments must be integers, got {}", other.type_name()),
        )),
    };
    let step = match step {
        Some(s) => int(s)?,
        None => 1,
    };
    if step == 0 {
        return Err(OpError::new(RuntimeErrorKind::InvalidArgument, "range() step must not be zero"));
    }
    Ok((int(start)?, int(end)?, step))
}

/// Whether `v` is still inside the range.
pub fn range_contains(v: i64, end: i64, step: i64) -> bool {
    if step > 0 {
        v < end
    } else {
        v > end
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn i(v: i64) -> Value {
        Value::Int(v)
    }

    #[test]
    fn python_floor_division_and_modulo() {
        assert_eq!(binary(BinaryOp::FloorDiv, &i(-7), &i(2)).unwrap(), i(-4));
        assert_eq!(binary(BinaryOp::Mod, &i(-7), &i(2)).unwrap(), i(1));
        assert_eq!(binary(BinaryOp::Mod, &i(7), &i(-2)).unwrap(), i(-1));
        assert_eq!(binary(BinaryOp::Mod, &i(i64::MIN), &i(-1)).unwrap(), i(0));
        assert_eq!(
            binary(BinaryOp::Mod, &Value::Float(-5.0), &Value::Float(f64::INFINITY)).unwrap(),
            Value::Float(f64::INFINITY)
        );
    }

    #[test]
    fn division_rules() {
        assert_eq!(binary(BinaryOp::Div, &i(1), &i(2)).unwrap(), Value::Float(0.5));
        assert_eq!(
            binary(BinaryOp::Div, &i(1), &i(0)).unwrap_err().kind,
            RuntimeErrorKind::DivisionByZero
        );
        assert_eq!(
            binary(BinaryOp::Div, &Value::Float(-1.0), &Value::Float(0.0)).unwrap(),
            Value::Float(f64::NEG_INFINITY)
        );
        assert_eq!(
            binary(BinaryOp::Div, &Value::Float(0.0), &Value::Float(0.0)).unwrap_err().kind,
            RuntimeErrorKind::NotANumber
        );
        assert_eq!(
            binary(BinaryOp::FloorDiv, &i(i64::MIN), &i(-1)).unwrap_err().kind,
            RuntimeErrorKind::IntegerOverflow
        );
    }

    #[test]
    fn overflow_is_an_error() {
        assert_eq!(
            binary(BinaryOp::Add, &i(i64::MAX), &i(1)).unwrap_err().kind,
            RuntimeErrorKind::IntegerOverflow
        );
        assert_eq!(
            unary(UnaryOp::Neg, i(i64::MIN)).unwrap_err().kind,
            RuntimeErrorKind::IntegerOverflow
        );
    }

    #[test]
    fn infinity_arithmetic() {
        let inf = Value::Float(f64::INFINITY);
        assert_eq!(binary(BinaryOp::Add, &inf, &i(1)).unwrap(), inf);
        assert_eq!(
            binary(BinaryOp::Sub, &inf, &inf).unwrap_err().kind,
            RuntimeErrorKind::NotANumber
        );
        assert_eq!(binary(BinaryOp::Lt, &i(3), &inf).unwrap(), Value::Bool(true));
    }

    #[test]
    fn indexing() {
        let xs = Value::List(vec![i(1), i(2), i(3)]);
        assert_eq!(index(&xs, &i(-1)).unwrap(), i(3));
        assert_eq!(index(&xs, &i(3)).unwrap_err().kind, RuntimeErrorKind::IndexOutOfRange);
        assert_eq!(index(&xs, &Value::Bool(true)).unwrap_err().kind, RuntimeErrorKind::TypeMismatch);
        assert_eq!(index(&Value::Str("héllo".into()), &i(1)).unwrap(), Value::Str("é".into()));
    }

    #[test]
    fn builtins() {
        assert_eq!(call(Builtin::Max, vec![i(3), Value::Float(4.5), i(2)]).unwrap(), Value::Float(4.5));
        assert_eq!(call(Builtin::Min, vec![Value::List(vec![i(3), i(1)])]).unwrap(), i(1));
        assert_eq!(
            call(Builtin::Min, vec![Value::List(vec![])]).unwrap_err().kind,
            RuntimeErrorKind::InvalidArgument
        );
        assert_eq!(
            call(Builtin::Max, vec![i(1), Value::Str("a".into())]).unwrap_err().kind,
            RuntimeErrorKind::TypeMismatch
        );
        assert_eq!(call(Builtin::Len, vec![Value::Str("abc".into())]).unwrap(), i(3));
    }

    #[test]
    fn set_append_and_hashability() {
        let mut s = make_set(vec![i(2), i(1)]).unwrap();
        append(&mut s, i(1)).unwrap();
        append(&mut s, i(0)).unwrap();
        assert_eq!(s, make_set(vec![i(0), i(1), i(2)]).unwrap());
        assert_eq!(
            append(&mut s, Value::List(vec![])).unwrap_err().kind,
            RuntimeErrorKind::UnhashableSetMember
        );
    }
}
