//! Small-step tracing interpreter.
//!
//! Every executed statement is one atomic transition and consumes one step
//! of the budget; evaluating an expression is not a step. Loop headers count
//! as statements each time they are visited (a `while` condition check, a
//! `for` binding or exit). A step *defines* a variable when it assigns it,
//! mutates it through `xs[i] = v` or `append(xs, v)`, or binds it as a `for`
//! loop variable; parameters are defined at step 0.
//!
//! Values have copy semantics: `ys = xs` copies, so mutating `xs` never
//! changes `ys`.

mod ops;
pub mod reference;

pub use ops::{literal as literal_value, OpError, RuntimeErrorKind};
pub use reference::{reference_evaluate, ReferenceError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::lang::{BinaryOp, Expr, Program, Span, Stmt, StmtKind};
use crate::value::Value;

pub const DEFAULT_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceMode {
    /// Keep only the running last-definition map.
    Summary,
    /// Keep every [`StepEvent`].
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub bindings: BTreeMap<String, Value>,
    pub step_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepEvent {
    pub step_index: u64,
    pub span: Span,
    pub defined_variable: Option<String>,
    pub value_written: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExecutionStatus {
    Returned,
    RuntimeError {
        kind: RuntimeErrorKind,
        span: Span,
        detail: String,
    },
    BudgetExceeded,
}

impl ExecutionStatus {
    pub fn label(&self) -> &'static str {
        match self {
            ExecutionStatus::Returned => "Returned",
            ExecutionStatus::RuntimeError { .. } => "RuntimeError",
            ExecutionStatus::BudgetExceeded => "BudgetExceeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionRecord {
    pub status: ExecutionStatus,
    pub return_value: Option<Value>,
    /// Value of each variable at its last definition point.
    pub final_vars: BTreeMap<String, Value>,
    pub last_def_step: BTreeMap<String, u64>,
    pub steps_used: u64,
    pub trajectory: Option<Vec<StepEvent>>,
}

impl ExecutionRecord {
    pub fn returned(&self) -> bool {
        self.status == ExecutionStatus::Returned
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("function `{name}` takes {expected} arguments but {got} were given")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("step budget must be at least 1")]
    ZeroBudget,
}

/// Runs `p` on `input`. Runtime failures are reported in the record's
/// status; only contract violations (arity, zero budget) are errors.
pub fn execute(
    p: &Program,
    input: &[Value],
    budget: u64,
    mode: TraceMode,
) -> Result<ExecutionRecord, TraceError> {
    if input.len() != p.params.len() {
        return Err(TraceError::Arity {
            name: p.name.clone(),
            expected: p.params.len(),
            got: input.len(),
        });
    }
    if budget == 0 {
        return Err(TraceError::ZeroBudget);
    }
    let mut m = Machine {
        env: BTreeMap::new(),
        final_vars: BTreeMap::new(),
        last_def_step: BTreeMap::new(),
        steps: 0,
        budget,
        events: (mode == TraceMode::Full).then(Vec::new),
        frames: vec![Frame::Block {
            stmts: &p.body,
            next: 0,
        }],
    };
    for (name, v) in p.params.iter().zip(input) {
        m.env.insert(name.clone(), v.clone());
        m.final_vars.insert(name.clone(), v.clone());
        m.last_def_step.insert(name.clone(), 0);
    }
    let (status, return_value) = match m.run() {
        Ok(Some(v)) => (ExecutionStatus::Returned, Some(v)),
        Ok(None) => (ExecutionStatus::BudgetExceeded, None),
        Err((e, span)) => (
            ExecutionStatus::RuntimeError {
                kind: e.kind,
                span,
                detail: e.detail,
            },
            None,
        ),
    };
    Ok(ExecutionRecord {
        status,
        return_value,
        final_vars: m.final_vars,
        last_def_step: m.last_def_step,
        steps_used: m.steps,
        trajectory: m.events,
    })
}

/// F_p(x): the value of every defined variable at its last definition.
/// Variables that were never defined are absent.
pub fn final_values(rec: &ExecutionRecord) -> BTreeMap<String, Value> {
    rec.final_vars.clone()
}

/// Rebuilds the state sequence S_0..S_final from a full-mode trajectory.
pub fn replay_states(p: &Program, input: &[Value], events: &[StepEvent]) -> Vec<State> {
    let mut bindings: BTreeMap<String, Value> = p
        .params
        .iter()
        .cloned()
        .zip(input.iter().cloned())
        .collect();
    let mut states = vec![State {
        bindings: bindings.clone(),
        step_index: 0,
    }];
    for ev in events {
        if let (Some(var), Some(v)) = (&ev.defined_variable, &ev.value_written) {
            bindings.insert(var.clone(), v.clone());
        }
        states.push(State {
            bindings: bindings.clone(),
            step_index: ev.step_index,
        });
    }
    states
}

enum Frame<'p> {
    Block {
        stmts: &'p [Stmt],
        next: usize,
    },
    While {
        stmt: &'p Stmt,
        cond: &'p Expr,
        body: &'p [Stmt],
    },
    For {
        stmt: &'p Stmt,
        var: &'p str,
        next: Option<i64>,
        end: i64,
        step: i64,
        body: &'p [Stmt],
    },
}

impl Frame<'_> {
    fn is_loop(&self) -> bool {
        !matches!(self, Frame::Block { .. })
    }
}

type Fault = (OpError, Span);

struct Machine<'p> {
    env: BTreeMap<String, Value>,
    final_vars: BTreeMap<String, Value>,
    last_def_step: BTreeMap<String, u64>,
    steps: u64,
    budget: u64,
    events: Option<Vec<StepEvent>>,
    frames: Vec<Frame<'p>>,
}

enum Next<'p> {
    Stmt(&'p Stmt),
    WhileHeader,
    ForHeader,
    PopBlock,
}

impl<'p> Machine<'p> {
    /// `Ok(Some(v))` on return, `Ok(None)` when the budget runs out.
    fn run(&mut self) -> Result<Option<Value>, Fault> {
        loop {
            let next = match self.frames.last_mut() {
                None => return Ok(Some(Value::Null)),
                Some(Frame::Block { stmts, next }) => {
                    if *next < stmts.len() {
                        *next += 1;
                        Next::Stmt(&stmts[*next - 1])
                    } else {
                        Next::PopBlock
                    }
                }
                Some(Frame::While { .. }) => Next::WhileHeader,
                Some(Frame::For { .. }) => Next::ForHeader,
            };
            if let Next::PopBlock = next {
                self.frames.pop();
                continue;
            }
            if self.steps == self.budget {
                return Ok(None);
            }
            self.steps += 1;
            let done = match next {
                Next::Stmt(s) => self.exec(s)?,
                Next::WhileHeader => {
                    self.while_header()?;
                    None
                }
                Next::ForHeader => {
                    self.for_header();
                    None
                }
                Next::PopBlock => None,
            };
            if let Some(v) = done {
                return Ok(Some(v));
            }
        }
    }

    fn record(&mut self, span: Span, defined: Option<&str>) {
        let written = defined.map(|var| {
            let v = self.env.get(var).cloned().unwrap_or(Value::Null);
            self.final_vars.insert(var.to_string(), v.clone());
            self.last_def_step.insert(var.to_string(), self.steps);
            v
        });
        if let Some(events) = &mut self.events {
            events.push(StepEvent {
                step_index: self.steps,
                span,
                defined_variable: defined.map(str::to_string),
                value_written: written,
            });
        }
    }

    fn define(&mut self, span: Span, var: &str, v: Value) {
        self.env.insert(var.to_string(), v);
        self.record(span, Some(var));
    }

    fn exec(&mut self, s: &'p Stmt) -> Result<Option<Value>, Fault> {
        let at = |e: OpError| (e, s.span);
        match &s.kind {
            StmtKind::Assign { target, value } => {
                let v = self.eval(value).map_err(at)?;
                self.define(s.span, target, v);
            }
            StmtKind::IndexAssign {
                target,
                index,
                value,
            } => {
                let idx = self.eval(index).map_err(at)?;
                let v = self.eval(value).map_err(at)?;
                let slot = self.env.get_mut(target).ok_or_else(|| at(undefined(target)))?;
                ops::index_assign(slot, &idx, v).map_err(at)?;
                self.record(s.span, Some(target));
            }
            StmtKind::Append { target, value } => {
                let v = self.eval(value).map_err(at)?;
                let slot = self.env.get_mut(target).ok_or_else(|| at(undefined(target)))?;
                ops::append(slot, v).map_err(at)?;
                self.record(s.span, Some(target));
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                let c = self.eval(cond).map_err(at)?;
                let c = ops::truthy(&c, "if condition").map_err(at)?;
                self.record(s.span, None);
                let body = if c { Some(then_body) } else { else_body.as_ref() };
                if let Some(body) = body {
                    self.frames.push(Frame::Block {
                        stmts: body,
                        next: 0,
                    });
                }
            }
            StmtKind::While { cond, body } => {
                self.frames.push(Frame::While {
                    stmt: s,
                    cond,
                    body,
                });
                self.while_header()?;
            }
            StmtKind::For {
                var,
                start,
                end,
                step,
                body,
            } => {
                let a = self.eval(start).map_err(at)?;
                let b = self.eval(end).map_err(at)?;
                let c = step.as_ref().map(|e| self.eval(e)).transpose().map_err(at)?;
                let (first, end, step) = ops::range_bounds(&a, &b, c.as_ref()).map_err(at)?;
                self.frames.push(Frame::For {
                    stmt: s,
                    var,
                    next: Some(first),
                    end,
                    step,
                    body,
                });
                self.for_header();
            }
            StmtKind::Break => {
                self.record(s.span, None);
                while let Some(f) = self.frames.pop() {
                    if f.is_loop() {
                        break;
                    }
                }
            }
            StmtKind::Continue => {
                self.record(s.span, None);
                while self.frames.last().is_some_and(|f| !f.is_loop()) {
                    self.frames.pop();
                }
            }
            StmtKind::Return(e) => {
                let v = self.eval(e).map_err(at)?;
                self.record(s.span, None);
                return Ok(Some(v));
            }
        }
        Ok(None)
    }

    /// Checks the condition of the `while` frame on top of the stack.
    fn while_header(&mut self) -> Result<(), Fault> {
        let Some(Frame::While { stmt, cond, body }) = self.frames.last() else {
            unreachable!("while header without while frame");
        };
        let (stmt, cond, body) = (*stmt, *cond, *body);
        let at = |e: OpError| (e, stmt.span);
        let c = self.eval(cond).map_err(at)?;
        let c = ops::truthy(&c, "while condition").map_err(at)?;
        self.record(stmt.span, None);
        if c {
            self.frames.push(Frame::Block {
                stmts: body,
                next: 0,
            });
        } else {
            self.frames.pop();
        }
        Ok(())
    }

    /// Binds the next loop value of the `for` frame on top of the stack, or
    /// leaves the loop.
    fn for_header(&mut self) {
        let Some(Frame::For {
            stmt,
            var,
            next,
            end,
            step,
            body,
        }) = self.frames.last_mut()
        else {
            unreachable!("for header without for frame");
        };
        let (span, var, body) = (stmt.span, *var, *body);
        match *next {
            Some(v) if ops::range_contains(v, *end, *step) => {
                *next = v.checked_add(*step);
                self.frames.push(Frame::Block {
                    stmts: body,
                    next: 0,
                });
                self.define(span, var, Value::Int(v));
            }
            _ => {
                self.frames.pop();
                self.record(span, None);
            }
        }
    }

    fn eval(&self, e: &Expr) -> Result<Value, OpError> {
        match e {
            Expr::Lit(lit) => Ok(ops::literal(lit)),
            Expr::Var(name) => self.env.get(name).cloned().ok_or_else(|| undefined(name)),
            Expr::List(items) => Ok(Value::List(
                items.iter().map(|i| self.eval(i)).collect::<Result<_, _>>()?,
            )),
            Expr::Set(items) => ops::make_set(
                items.iter().map(|i| self.eval(i)).collect::<Result<_, _>>()?,
            ),
            Expr::Unary(op, operand) => ops::unary(*op, self.eval(operand)?),
            Expr::Binary(op, lhs, rhs) => {
                let a = self.eval(lhs)?;
                match op {
                    BinaryOp::And | BinaryOp::Or => {
                        let short = *op == BinaryOp::Or;
                        if ops::truthy(&a, "operand of and/or")? == short {
                            return Ok(Value::Bool(short));
                        }
                        let b = self.eval(rhs)?;
                        Ok(Value::Bool(ops::truthy(&b, "operand of and/or")?))
                    }
                    _ => ops::binary(*op, &a, &self.eval(rhs)?),
                }
            }
            Expr::Index(base, idx) => ops::index(&self.eval(base)?, &self.eval(idx)?),
            Expr::Call(b, args) => ops::call(
                *b,
                args.iter().map(|a| self.eval(a)).collect::<Result<_, _>>()?,
            ),
        }
    }
}

fn undefined(name: &str) -> OpError {
    OpError::new(
        RuntimeErrorKind::UndefinedVariable,
        format!("variable `{name}` is not defined"),
    )
}
