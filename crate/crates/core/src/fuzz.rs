//! Random program generators and the differential campaign between the
//! tracing interpreter and the reference evaluator.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::digest::stream_rng;
use crate::evalsuite::parse_canonical;
use crate::lang::{
    format_program, parse_program, BinaryOp, Builtin, Expr, Literal, Program, Stmt, StmtKind,
    UnaryOp,
};
use crate::tracer::{
    execute, reference::reference_evaluate_with_fuel, ExecutionStatus, ReferenceError, TraceMode,
};
use crate::value::Value;

const NAMES: &[&str] = &["a", "b", "c", "xs", "acc", "t_1", "_z", "Len", "iff", "ranged"];
const FLOATS: &[f64] = &[
    0.0, 0.5, 1.5, -2.25, 0.1, 1e300, 1e-7, 123456.789, -3.0e-5,
    f64::INFINITY, f64::NEG_INFINITY, 2.0,
];
const STRINGS: &[&str] = &["", "a", "hi there", "q\"uote", "line\nbreak", "back\\slash", "tab\t"];

fn boxed(e: Expr) -> Box<Expr> {
    Box::new(e)
}

/// Unconstrained syntax trees: any name, any operator nesting, `break` and
/// `continue` only inside loops. Used for parse/format round trips.
pub struct AstGen {
    rng: ChaCha8Rng,
}

impl AstGen {
    pub fn new(seed: u64) -> Self {
        AstGen {
            rng: stream_rng(seed, "ast", 0, 0),
        }
    }

    pub fn program(&mut self) -> Program {
        let n_params = self.rng.random_range(0..4);
        let mut params: Vec<String> = Vec::new();
        while params.len() < n_params {
            let n = self.name();
            if !params.contains(&n) {
                params.push(n);
            }
        }
        let body = self.block(0, 0);
        Program::new(self.name(), params, body)
    }

    fn name(&mut self) -> String {
        (*NAMES.choose(&mut self.rng).unwrap()).to_string()
    }

    fn literal(&mut self) -> Literal {
        match self.rng.random_range(0..9) {
            0 => Literal::Int(*[i64::MAX, i64::MIN, 0, -1].choose(&mut self.rng).unwrap()),
            1 | 2 => Literal::Int(self.rng.random_range(-1000..1000)),
            3 | 4 => Literal::Float(*FLOATS.choose(&mut self.rng).unwrap()),
            5 => Literal::Str((*STRINGS.choose(&mut self.rng).unwrap()).to_string()),
            6 => Literal::Bool(self.rng.random()),
            7 => Literal::Null,
            _ => Literal::Int(self.rng.random_range(0..10)),
        }
    }

    fn expr(&mut self, depth: u32) -> Expr {
        let leaf = depth >= 4 || self.rng.random_bool(0.3);
        if leaf {
            return if self.rng.random_bool(0.5) {
                Expr::Lit(self.literal())
            } else {
                Expr::Var(self.name())
            };
        }
        match self.rng.random_range(0..8) {
            0 => Expr::List((0..self.rng.random_range(0..4)).map(|_| self.expr(depth + 1)).collect()),
            1 => Expr::Set((0..self.rng.random_range(0..4)).map(|_| self.expr(depth + 1)).collect()),
            2 => {
                let op = if self.rng.random() { UnaryOp::Neg } else { UnaryOp::Not };
                Expr::Unary(op, boxed(self.expr(depth + 1)))
            }
            3 => Expr::Index(boxed(self.expr(depth + 1)), boxed(self.expr(depth + 1))),
            4 => {
                let b = *[Builtin::Len, Builtin::Abs, Builtin::Min, Builtin::Max]
                    .choose(&mut self.rng)
                    .unwrap();
                let n = match b {
                    Builtin::Len | Builtin::Abs => 1,
                    _ => self.rng.random_range(1..4),
                };
                Expr::Call(b, (0..n).map(|_| self.expr(depth + 1)).collect())
            }
            _ => {
                let op = *BinaryOp::ALL.choose(&mut self.rng).unwrap();
                Expr::Binary(op, boxed(self.expr(depth + 1)), boxed(self.expr(depth + 1)))
            }
        }
    }

    fn block(&mut self, depth: u32, loops: u32) -> Vec<Stmt> {
        let n = if depth >= 3 { self.rng.random_range(0..2) } else { self.rng.random_range(0..5) };
        (0..n).map(|_| self.stmt(depth, loops)).collect()
    }

    fn stmt(&mut self, depth: u32, loops: u32) -> Stmt {
        let kind = match self.rng.random_range(0..12) {
            0..=2 => StmtKind::Assign {
                target: self.name(),
                value: self.expr(0),
            },
            3 => StmtKind::IndexAssign {
                target: self.name(),
                index: self.expr(1),
                value: self.expr(1),
            },
            4 => StmtKind::Append {
                target: self.name(),
                value: self.expr(1),
            },
            5 => StmtKind::If {
                cond: self.expr(1),
                then_body: self.block(depth + 1, loops),
                else_body: match self.rng.random_range(0..3) {
                    0 => None,
                    1 => Some(self.block(depth + 1, loops)),
                    _ => Some(vec![self.stmt(depth + 1, loops)]),
                },
            },
            6 => StmtKind::While {
                cond: self.expr(1),
                body: self.block(depth + 1, loops + 1),
            },
            7 => StmtKind::For {
                var: self.name(),
                start: self.expr(2),
                end: self.expr(2),
                step: self.rng.random_bool(0.4).then(|| self.expr(2)),
                body: self.block(depth + 1, loops + 1),
            },
            8 if loops > 0 => StmtKind::Break,
            9 if loops > 0 => StmtKind::Continue,
            _ => StmtKind::Return(self.expr(0)),
        };
        Stmt::new(kind)
    }
}

/// Checks `parse(format(p)) == p` and that formatting is a fixed point.
pub fn roundtrip_check(p: &Program) -> Result<(), String> {
    let text = format_program(p);
    let back = parse_program(&text).map_err(|e| format!("reparse failed at {e}:\n{text}"))?;
    if &back != p {
        return Err(format!("AST changed after round trip:\n{text}"));
    }
    let again = format_program(&back);
    if again != text {
        return Err(format!("formatting not idempotent:\n{text}\n---\n{again}"));
    }
    Ok(())
}

/// Programs that terminate by construction: `for` loops over short ranges,
/// `while` loops whose counter is bumped first thing in the body. Runtime
/// errors are allowed; both evaluators must agree on them too.
pub struct TerminatingGen {
    rng: ChaCha8Rng,
    counter: u32,
}

const INT_VARS: &[&str] = &["a", "b", "c", "n"];
const LIST_VARS: &[&str] = &["xs", "ys"];

impl TerminatingGen {
    pub fn new(seed: u64) -> Self {
        TerminatingGen {
            rng: stream_rng(seed, "terminating", 0, 0),
            counter: 0,
        }
    }

    /// A program `fn f(n, xs)` and an input for it.
    pub fn program(&mut self) -> (Program, Vec<Value>) {
        self.counter = 0;
        let mut body = vec![
            Stmt::new(StmtKind::Assign {
                target: "a".into(),
                value: Expr::int(self.rng.random_range(-5..6)),
            }),
            Stmt::new(StmtKind::Assign {
                target: "b".into(),
                value: Expr::int(self.rng.random_range(0..4)),
            }),
            Stmt::new(StmtKind::Assign {
                target: "c".into(),
                value: Expr::int(1),
            }),
            Stmt::new(StmtKind::Assign {
                target: "ys".into(),
                value: Expr::List(vec![Expr::int(1), Expr::int(2)]),
            }),
        ];
        let n = self.rng.random_range(2..8);
        body.extend((0..n).map(|_| self.stmt(0, false)));
        body.push(Stmt::new(StmtKind::Return(self.int_expr(1))));
        let p = Program::new("f", vec!["n".into(), "xs".into()], body);
        let len = self.rng.random_range(0..5);
        let xs = (0..len).map(|_| Value::Int(self.rng.random_range(-9..10))).collect();
        (p, vec![Value::Int(self.rng.random_range(-3..7)), Value::List(xs)])
    }

    fn int_var(&mut self) -> Expr {
        Expr::var(INT_VARS.choose(&mut self.rng).unwrap())
    }

    fn list_var(&mut self) -> Expr {
        Expr::var(LIST_VARS.choose(&mut self.rng).unwrap())
    }

    fn int_expr(&mut self, depth: u32) -> Expr {
        if depth >= 3 || self.rng.random_bool(0.35) {
            return match self.rng.random_range(0..6) {
                0 | 1 => Expr::int(self.rng.random_range(-4..10)),
                2 => Expr::Call(Builtin::Len, vec![self.list_var()]),
                3 if self.rng.random_bool(0.3) => {
                    Expr::Lit(Literal::Float(*[0.5, 2.0, -1.5].choose(&mut self.rng).unwrap()))
                }
                _ => self.int_var(),
            };
        }
        match self.rng.random_range(0..10) {
            0..=4 => {
                let op = *[
                    BinaryOp::Add,
                    BinaryOp::Sub,
                    BinaryOp::Mul,
                    BinaryOp::FloorDiv,
                    BinaryOp::Mod,
                    BinaryOp::Div,
                ]
                .choose(&mut self.rng)
                .unwrap();
                Expr::binary(op, self.int_expr(depth + 1), self.int_expr(depth + 1))
            }
            5 => Expr::Unary(UnaryOp::Neg, boxed(self.int_expr(depth + 1))),
            6 => Expr::Call(Builtin::Abs, vec![self.int_expr(depth + 1)]),
            7 => {
                let b = if self.rng.random() { Builtin::Min } else { Builtin::Max };
                if self.rng.random_bool(0.3) {
                    Expr::Call(b, vec![self.list_var()])
                } else {
                    Expr::Call(b, vec![self.int_expr(depth + 1), self.int_expr(depth + 1)])
                }
            }
            _ => self.safe_index(depth + 1),
        }
    }

    /// `ys[e % len(ys)]`; `ys` starts with two elements and never shrinks.
    fn safe_index(&mut self, depth: u32) -> Expr {
        let ys = Expr::var("ys");
        let idx = Expr::binary(
            BinaryOp::Mod,
            self.int_expr(depth),
            Expr::Call(Builtin::Len, vec![ys.clone()]),
        );
        Expr::Index(boxed(ys), boxed(idx))
    }

    fn cond(&mut self, depth: u32) -> Expr {
        match self.rng.random_range(0..8) {
            0 if depth < 2 => {
                let op = if self.rng.random() { BinaryOp::And } else { BinaryOp::Or };
                Expr::binary(op, self.cond(depth + 1), self.cond(depth + 1))
            }
            1 if depth < 2 => Expr::Unary(UnaryOp::Not, boxed(self.cond(depth + 1))),
            2 => Expr::Lit(Literal::Bool(self.rng.random())),
            _ => {
                let op = *[
                    BinaryOp::Eq,
                    BinaryOp::Ne,
                    BinaryOp::Lt,
                    BinaryOp::Le,
                    BinaryOp::Gt,
                    BinaryOp::Ge,
                ]
                .choose(&mut self.rng)
                .unwrap();
                Expr::binary(op, self.int_expr(2), self.int_expr(2))
            }
        }
    }

    fn block(&mut self, depth: u32, in_loop: bool) -> Vec<Stmt> {
        let n = self.rng.random_range(1..4);
        (0..n).map(|_| self.stmt(depth, in_loop)).collect()
    }

    fn stmt(&mut self, depth: u32, in_loop: bool) -> Stmt {
        let nested = depth < 2;
        let kind = match self.rng.random_range(0..16) {
            0..=4 => StmtKind::Assign {
                target: INT_VARS.choose(&mut self.rng).unwrap().to_string(),
                value: self.int_expr(0),
            },
            5 => StmtKind::Append {
                target: LIST_VARS.choose(&mut self.rng).unwrap().to_string(),
                value: self.int_expr(1),
            },
            6 => StmtKind::IndexAssign {
                target: "ys".into(),
                index: Expr::binary(
                    BinaryOp::Mod,
                    self.int_expr(2),
                    Expr::Call(Builtin::Len, vec![Expr::var("ys")]),
                ),
                value: self.int_expr(1),
            },
            7 => StmtKind::Assign {
                target: "s".into(),
                value: Expr::Set(vec![self.int_expr(2), self.int_expr(2), Expr::int(1)]),
            },
            8 if nested => StmtKind::If {
                cond: self.cond(0),
                then_body: self.block(depth + 1, in_loop),
                else_body: self.rng.random_bool(0.5).then(|| self.block(depth + 1, in_loop)),
            },
            9 | 10 if nested => {
                let var = format!("i{}", self.counter);
                self.counter += 1;
                let end = if self.rng.random() {
                    Expr::int(self.rng.random_range(0..6))
                } else {
                    Expr::Call(Builtin::Len, vec![Expr::var("xs")])
                };
                let step = match self.rng.random_range(0..4) {
                    0 => Some(Expr::int(2)),
                    1 => Some(Expr::int(-1)),
                    _ => None,
                };
                let start = if step == Some(Expr::int(-1)) {
                    Expr::int(self.rng.random_range(0..5))
                } else {
                    Expr::int(self.rng.random_range(-1..2))
                };
                StmtKind::For {
                    var,
                    start,
                    end,
                    step,
                    body: self.block(depth + 1, true),
                }
            }
            11 if nested => {
                let w = format!("w{}", self.counter);
                self.counter += 1;
                let init = Stmt::new(StmtKind::Assign {
                    target: w.clone(),
                    value: Expr::int(0),
                });
                let mut body = vec![Stmt::new(StmtKind::Assign {
                    target: w.clone(),
                    value: Expr::binary(BinaryOp::Add, Expr::var(&w), Expr::int(1)),
                })];
                body.extend(self.block(depth + 1, true));
                let bound = Expr::int(self.rng.random_range(0..5));
                // wrap init and loop in an always-true if so they form one statement
                StmtKind::If {
                    cond: Expr::Lit(Literal::Bool(true)),
                    then_body: vec![
                        init,
                        Stmt::new(StmtKind::While {
                            cond: Expr::binary(BinaryOp::Lt, Expr::var(&w), bound),
                            body,
                        }),
                    ],
                    else_body: None,
                }
            }
            12 if in_loop => StmtKind::If {
                cond: self.cond(1),
                then_body: vec![Stmt::new(if self.rng.random() {
                    StmtKind::Break
                } else {
                    StmtKind::Continue
                })],
                else_body: None,
            },
            13 => StmtKind::If {
                cond: self.cond(1),
                then_body: vec![Stmt::new(StmtKind::Return(self.int_expr(1)))],
                else_body: None,
            },
            _ => StmtKind::Assign {
                target: INT_VARS.choose(&mut self.rng).unwrap().to_string(),
                value: self.int_expr(1),
            },
        };
        Stmt::new(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Returned,
    RuntimeError,
}

fn same_map(a: &BTreeMap<String, Value>, b: &BTreeMap<String, Value>) -> bool {
    format!("{a:?}") == format!("{b:?}")
}

/// Runs both evaluators and demands identical outcomes, including the
/// int/float distinction.
pub fn differential(p: &Program, input: &[Value], fuel: u64) -> Result<Agreement, String> {
    let rec = execute(p, input, fuel, TraceMode::Summary).map_err(|e| e.to_string())?;
    let reference = reference_evaluate_with_fuel(p, input, fuel);
    match (&rec.status, reference) {
        (ExecutionStatus::Returned, Ok((ret, vars))) => {
            let got = rec.return_value.clone().unwrap_or(Value::Null);
            if format!("{got:?}") != format!("{ret:?}") {
                return Err(format!("return value {got:?} vs {ret:?}"));
            }
            if !same_map(&rec.final_vars, &vars) {
                return Err(format!("final vars {:?} vs {vars:?}", rec.final_vars));
            }
            Ok(Agreement::Returned)
        }
        (ExecutionStatus::RuntimeError { kind, .. }, Err(ReferenceError::Runtime { kind: k2, vars })) => {
            if *kind != k2 {
                return Err(format!("error kind {kind:?} vs {k2:?}"));
            }
            if !same_map(&rec.final_vars, &vars) {
                return Err(format!("vars at error {:?} vs {vars:?}", rec.final_vars));
            }
            Ok(Agreement::RuntimeError)
        }
        (s, r) => Err(format!("outcome {} vs {r:?}", s.label())),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FuzzReport {
    pub programs: usize,
    pub returned: usize,
    pub runtime_errors: usize,
    pub failures: Vec<String>,
}

/// Generates `n` terminating programs from `seed` and cross-checks each.
pub fn differential_campaign(seed: u64, n: usize) -> FuzzReport {
    let mut gen = TerminatingGen::new(seed);
    let mut report = FuzzReport::default();
    for i in 0..n {
        let (p, input) = gen.program();
        report.programs += 1;
        match differential(&p, &input, 1_000_000) {
            Ok(Agreement::Returned) => report.returned += 1,
            Ok(Agreement::RuntimeError) => report.runtime_errors += 1,
            Err(e) => report
                .failures
                .push(format!("program #{i}: {e}\n{}", format_program(&p))),
        }
    }
    report
}

/// A corpus program with its `# input: [..]` header lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: String,
    pub program: Program,
    pub inputs: Vec<Vec<Value>>,
}

pub fn parse_fixture(name: &str, text: &str) -> Result<Fixture, String> {
    let mut inputs = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("# input:") else {
            continue;
        };
        match parse_canonical(rest.trim()) {
            Ok(Value::List(args)) => inputs.push(args),
            Ok(other) => return Err(format!("{name}: input must be a list, got {other:?}")),
            Err(e) => return Err(format!("{name}: bad input `{}`: {e}", rest.trim())),
        }
    }
    if inputs.is_empty() {
        return Err(format!("{name}: no `# input:` lines"));
    }
    let program = parse_program(text).map_err(|e| format!("{name}: {e}"))?;
    Ok(Fixture {
        name: name.to_string(),
        program,
        inputs,
    })
}

/// Loads every `*.mim` file in `dir`, sorted by file name.
pub fn load_fixtures(dir: &Path) -> Result<Vec<Fixture>, String> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mim"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let name = p.file_stem().unwrap_or_default().to_string_lossy();
            parse_fixture(&name, &text)
        })
        .collect()
}

/// Cross-checks every (fixture, input) pair.
pub fn fixture_campaign(fixtures: &[Fixture]) -> FuzzReport {
    let mut report = FuzzReport::default();
    for f in fixtures {
        for input in &f.inputs {
            report.programs += 1;
            match differential(&f.program, input, 1_000_000) {
                Ok(Agreement::Returned) => report.returned += 1,
                Ok(Agreement::RuntimeError) => report.runtime_errors += 1,
                Err(e) => report.failures.push(format!("{} on {input:?}: {e}", f.name)),
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(AstGen::new(3).program(), AstGen::new(3).program());
        assert_eq!(TerminatingGen::new(3).program(), TerminatingGen::new(3).program());
    }

    #[test]
    fn small_campaign_agrees_and_mostly_returns() {
        let r = differential_campaign(11, 100);
        assert!(r.failures.is_empty(), "{:#?}", r.failures);
        assert!(r.returned >= 30, "{r:?}");
    }

    #[test]
    fn random_asts_round_trip() {
        let mut g = AstGen::new(0);
        for _ in 0..200 {
            let p = g.program();
            roundtrip_check(&p).unwrap();
        }
    }

    #[test]
    fn fixture_corpus_agrees() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/programs");
        let fx = load_fixtures(&dir).unwrap();
        assert!(fx.len() >= 15);
        let r = fixture_campaign(&fx);
        assert!(r.failures.is_empty(), "{:#?}", r.failures);
        assert!(r.runtime_errors > 0 && r.returned > r.runtime_errors, "{r:?}");
    }

    #[test]
    fn fixture_header_is_required() {
        assert!(parse_fixture("x", "fn f() { return 1 }").is_err());
        let f = parse_fixture("x", "# input: [1, [2]]\nfn f(a, b) { return a }").unwrap();
        assert_eq!(f.inputs, vec![vec![Value::Int(1), Value::List(vec![Value::Int(2)])]]);
    }
}
