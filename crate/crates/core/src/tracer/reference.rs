//! Big-step recursive evaluator kept deliberately separate from the tracing
//! machine. It has no notion of steps or events: the final environment *is*
//! its answer for the last-definition map. Used only as a differential
//! oracle.

use std::collections::BTreeMap;

use super::ops::{self, OpError, RuntimeErrorKind};
use crate::lang::{BinaryOp, Expr, Program, Stmt, StmtKind};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceError {
    Runtime {
        kind: RuntimeErrorKind,
        vars: BTreeMap<String, Value>,
    },
    /// The statement-execution fuel ran out (non-terminating input).
    OutOfFuel,
    Arity,
}

type Env = BTreeMap<String, Value>;

enum Flow {
    Normal,
    Break,
    Continue,
    Return(Value),
}

enum Stop {
    Error(OpError),
    Fuel,
}

impl From<OpError> for Stop {
    fn from(e: OpError) -> Stop {
        Stop::Error(e)
    }
}

/// Returns `(return_value, final_vars)`.
pub fn reference_evaluate(
    p: &Program,
    input: &[Value],
) -> Result<(Value, BTreeMap<String, Value>), ReferenceError> {
    reference_evaluate_with_fuel(p, input, 1_000_000)
}

pub fn reference_evaluate_with_fuel(
    p: &Program,
    input: &[Value],
    fuel: u64,
) -> Result<(Value, BTreeMap<String, Value>), ReferenceError> {
    if input.len() != p.params.len() {
        return Err(ReferenceError::Arity);
    }
    let mut env: Env = p.params.iter().cloned().zip(input.iter().cloned()).collect();
    let mut fuel = fuel;
    match block(&p.body, &mut env, &mut fuel) {
        Ok(Flow::Return(v)) => Ok((v, env)),
        Ok(_) => Ok((Value::Null, env)),
        Err(Stop::Fuel) => Err(ReferenceError::OutOfFuel),
        Err(Stop::Error(e)) => Err(ReferenceError::Runtime {
            kind: e.kind,
            vars: env,
        }),
    }
}

fn block(stmts: &[Stmt], env: &mut Env, fuel: &mut u64) -> Result<Flow, Stop> {
    for s in stmts {
        match stmt(s, env, fuel)? {
            Flow::Normal => {}
            other => return Ok(other),
        }
    }
    Ok(Flow::Normal)
}

fn stmt(s: &Stmt, env: &mut Env, fuel: &mut u64) -> Result<Flow, Stop> {
    if *fuel == 0 {
        return Err(Stop::Fuel);
    }
    *fuel -= 1;
    match &s.kind {
        StmtKind::Assign { target, value } => {
            let v = eval(value, env)?;
            env.insert(target.clone(), v);
        }
        StmtKind::IndexAssign {
            target,
            index,
            value,
        } => {
            let i = eval(index, env)?;
            let v = eval(value, env)?;
            let mut current = lookup(env, target)?;
            ops::index_assign(&mut current, &i, v)?;
            env.insert(target.clone(), current);
        }
        StmtKind::Append { target, value } => {
            let v = eval(value, env)?;
            let mut current = lookup(env, target)?;
            ops::append(&mut current, v)?;
            env.insert(target.clone(), current);
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            if ops::truthy(&eval(cond, env)?, "if condition")? {
                return block(then_body, env, fuel);
            } else if let Some(e) = else_body {
                return block(e, env, fuel);
            }
        }
        StmtKind::While { cond, body } => loop {
            if !ops::truthy(&eval(cond, env)?, "while condition")? {
                break;
            }
            match block(body, env, fuel)? {
                Flow::Break => break,
                Flow::Return(v) => return Ok(Flow::Return(v)),
                Flow::Normal | Flow::Continue => {}
            }
            if *fuel == 0 {
                return Err(Stop::Fuel);
            }
            *fuel -= 1;
        },
        StmtKind::For {
            var,
            start,
            end,
            step,
            body,
        } => {
            let a = eval(start, env)?;
            let b = eval(end, env)?;
            let c = match step {
                Some(e) => Some(eval(e, env)?),
                None => None,
            };
            let (first, last, stride) = ops::range_bounds(&a, &b, c.as_ref())?;
            // materialize the sequence up front; fuel bounds its length
            let mut values = Vec::new();
            let mut cur = Some(first);
            while let Some(v) = cur {
                if !ops::range_contains(v, last, stride) {
                    break;
                }
                if values.len() as u64 > *fuel {
                    return Err(Stop::Fuel);
                }
                values.push(v);
                cur = v.checked_add(stride);
            }
            for v in values {
                env.insert(var.clone(), Value::Int(v));
                match block(body, env, fuel)? {
                    Flow::Break => break,
                    Flow::Return(v) => return Ok(Flow::Return(v)),
                    Flow::Normal | Flow::Continue => {}
                }
            }
        }
        StmtKind::Break => return Ok(Flow::Break),
        StmtKind::Continue => return Ok(Flow::Continue),
        StmtKind::Return(e) => return Ok(Flow::Return(eval(e, env)?)),
    }
    Ok(Flow::Normal)
}

fn lookup(env: &Env, name: &str) -> Result<Value, OpError> {
    env.get(name).cloned().ok_or_else(|| {
        OpError::new(
            RuntimeErrorKind::UndefinedVariable,
            format!("variable `{name}` is not defined"),
        )
    })
}

fn eval(e: &Expr, env: &Env) -> Result<Value, OpError> {
    Ok(match e {
        Expr::Lit(l) => ops::literal(l),
        Expr::Var(name) => lookup(env, name)?,
        Expr::List(items) => {
            let mut out = Vec::with_capacity(items.len());
            for i in items {
                out.push(eval(i, env)?);
            }
            Value::List(out)
        }
        Expr::Set(items) => {
            let mut out = Vec::with_capacity(items.len());
            for i in items {
                out.push(eval(i, env)?);
            }
            ops::make_set(out)?
        }
        Expr::Unary(op, x) => ops::unary(*op, eval(x, env)?)?,
        Expr::Binary(BinaryOp::And, a, b) => {
            let l = ops::truthy(&eval(a, env)?, "operand of and/or")?;
            Value::Bool(l && ops::truthy(&eval(b, env)?, "operand of and/or")?)
        }
        Expr::Binary(BinaryOp::Or, a, b) => {
            let l = ops::truthy(&eval(a, env)?, "operand of and/or")?;
            Value::Bool(l || ops::truthy(&eval(b, env)?, "operand of and/or")?)
        }
        Expr::Binary(op, a, b) => {
            let l = eval(a, env)?;
            let r = eval(b, env)?;
            ops::binary(*op, &l, &r)?
        }
        Expr::Index(base, idx) => {
            let b = eval(base, env)?;
            let i = eval(idx, env)?;
            ops::index(&b, &i)?
        }
        Expr::Call(b, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval(a, env)?);
            }
            ops::call(*b, vals)?
        }
    })
}
