//! MiniImp: a small deterministic imperative language.
//!
//! One flat function per source file, no I/O, no closures. The grammar is
//! documented in `docs/grammar.md`. Statements are separated by whitespace
//! only; `#` starts a line comment.

mod ast;
mod format;
mod lexer;
mod parser;
mod template;

pub use ast::*;
pub use format::{format_expr, format_literal, format_program};
pub use lexer::{is_keyword, HOLE_PREFIX};
pub use parser::parse_program;
pub use template::{HoleTemplate, TemplateError};

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Lexical,
    Syntax,
    DuplicateParameter,
    UnknownConstruct,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: u32,
    pub col: u32,
    /// Token classes that would have been accepted at this position.
    pub expected: Vec<String>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected one of: {})", self.expected.join(" "))?;
        }
        Ok(())
    }
}

/// The variable list of a program: parameters in declaration order, then
/// every other variable at its first textual definition.
pub fn list_variables(p: &Program) -> Vec<String> {
    fn push(vars: &mut Vec<String>, name: &str) {
        if !vars.iter().any(|v| v == name) {
            vars.push(name.to_string());
        }
    }
    fn walk(vars: &mut Vec<String>, stmts: &[Stmt]) {
        for s in stmts {
            match &s.kind {
                StmtKind::Assign { target, .. }
                | StmtKind::IndexAssign { target, .. }
                | StmtKind::Append { target, .. } => push(vars, target),
                StmtKind::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    walk(vars, then_body);
                    if let Some(e) = else_body {
                        walk(vars, e);
                    }
                }
                StmtKind::While { body, .. } => walk(vars, body),
                StmtKind::For { var, body, .. } => {
                    push(vars, var);
                    walk(vars, body);
                }
                StmtKind::Break | StmtKind::Continue | StmtKind::Return(_) => {}
            }
        }
    }
    let mut vars = Vec::new();
    for param in &p.params {
        push(&mut vars, param);
    }
    walk(&mut vars, &p.body);
    vars
}

/// Every literal constant appearing in the program, in textual order.
/// A negative literal contributes its negative value.
pub fn literal_constants(p: &Program) -> Vec<Literal> {
    fn expr(out: &mut Vec<Literal>, e: &Expr) {
        match e {
            Expr::Lit(l) => out.push(l.clone()),
            Expr::Var(_) => {}
            Expr::List(items) | Expr::Set(items) | Expr::Call(_, items) => {
                items.iter().for_each(|i| expr(out, i))
            }
            Expr::Unary(_, x) => expr(out, x),
            Expr::Binary(_, a, b) | Expr::Index(a, b) => {
                expr(out, a);
                expr(out, b);
            }
        }
    }
    fn stmts(out: &mut Vec<Literal>, body: &[Stmt]) {
        for s in body {
            match &s.kind {
                StmtKind::Assign { value, .. } | StmtKind::Append { value, .. } => expr(out, value),
                StmtKind::IndexAssign { index, value, .. } => {
                    expr(out, index);
                    expr(out, value);
                }
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    expr(out, cond);
                    stmts(out, then_body);
                    if let Some(e) = else_body {
                        stmts(out, e);
                    }
                }
                StmtKind::While { cond, body } => {
                    expr(out, cond);
                    stmts(out, body);
                }
                StmtKind::For {
                    start,
                    end,
                    step,
                    body,
                    ..
                } => {
                    expr(out, start);
                    expr(out, end);
                    if let Some(s) = step {
                        expr(out, s);
                    }
                    stmts(out, body);
                }
                StmtKind::Return(e) => expr(out, e),
                StmtKind::Break | StmtKind::Continue => {}
            }
        }
    }
    let mut out = Vec::new();
    stmts(&mut out, &p.body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assign(target: &str, value: Expr) -> Stmt {
        Stmt::new(StmtKind::Assign {
            target: target.into(),
            value,
        })
    }

    #[test]
    fn parses_identity() {
        let p = parse_program("fn id(x) { return x }").unwrap();
        assert_eq!(p.name, "id");
        assert_eq!(p.params, vec!["x"]);
        assert_eq!(p.body, vec![Stmt::new(StmtKind::Return(Expr::var("x")))]);
    }

    #[test]
    fn dangling_assignment_is_a_syntax_error() {
        let err = parse_program("fn f() { x = 1 y = }").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Syntax);
        assert_eq!((err.line, err.col), (1, 20));
        assert!(err.expected.iter().any(|e| e == "literal"));
    }

    #[test]
    fn sum_program_matches_hand_written_ast() {
        let src = "fn s(n) { t = 0 for i in range(1, n + 1) { t = t + i } return t }";
        let p = parse_program(src).unwrap();
        let expected = Program::new(
            "s",
            vec!["n".into()],
            vec![
                assign("t", Expr::int(0)),
                Stmt::new(StmtKind::For {
                    var: "i".into(),
                    start: Expr::int(1),
                    end: Expr::binary(BinaryOp::Add, Expr::var("n"), Expr::int(1)),
                    step: None,
                    body: vec![assign(
                        "t",
                        Expr::binary(BinaryOp::Add, Expr::var("t"), Expr::var("i")),
                    )],
                }),
                Stmt::new(StmtKind::Return(Expr::var("t"))),
            ],
        );
        assert_eq!(p, expected);
        assert_eq!(p.source_hash, expected.source_hash);
        // function + body block + 3 statements + loop block + 1 statement
        assert_eq!(p.node_count(), 7);
        assert_eq!(expected.node_count(), 7);
    }

    #[test]
    fn canonical_form_of_identity() {
        let p = parse_program("fn id(x) { return x }").unwrap();
        assert_eq!(format_program(&p), "fn id(x) {\n    return x\n}\n");
    }

    #[test]
    fn error_kinds() {
        let dup = parse_program("fn f(a, a) { return a }").unwrap_err();
        assert_eq!(dup.kind, ParseErrorKind::DuplicateParameter);
        let unknown = parse_program("fn f() { print(1) }").unwrap_err();
        assert_eq!(unknown.kind, ParseErrorKind::UnknownConstruct);
        let unknown = parse_program("fn f() { return foo(1) }").unwrap_err();
        assert_eq!(unknown.kind, ParseErrorKind::UnknownConstruct);
        let lex = parse_program("fn f() { x = 1 @ 2 }").unwrap_err();
        assert_eq!(lex.kind, ParseErrorKind::Lexical);
        let hole = parse_program("fn f() { x = __HOLE_1__ }").unwrap_err();
        assert_eq!(hole.kind, ParseErrorKind::Lexical);
        let brk = parse_program("fn f() { break }").unwrap_err();
        assert_eq!(brk.kind, ParseErrorKind::Syntax);
        let chain = parse_program("fn f(a) { return 1 < a < 3 }").unwrap_err();
        assert_eq!(chain.kind, ParseErrorKind::Syntax);
        let trailing = parse_program("fn f() { return 1 } x").unwrap_err();
        assert_eq!(trailing.kind, ParseErrorKind::Syntax);
        let big = parse_program("fn f() { return 9223372036854775808 }").unwrap_err();
        assert_eq!(big.kind, ParseErrorKind::Lexical);
    }

    #[test]
    fn negative_literals_fold() {
        let p = parse_program("fn f() { return -9223372036854775808 }").unwrap();
        assert_eq!(
            p.body[0].kind,
            StmtKind::Return(Expr::Lit(Literal::Int(i64::MIN)))
        );
        let p = parse_program("fn f(x) { return -(5) - -inf }").unwrap();
        assert_eq!(
            p.body[0].kind,
            StmtKind::Return(Expr::binary(
                BinaryOp::Sub,
                Expr::Unary(UnaryOp::Neg, Box::new(Expr::int(5))),
                Expr::Lit(Literal::Float(f64::NEG_INFINITY))
            ))
        );
        assert_eq!(
            format_program(&p),
            "fn f(x) {\n    return -(5) - -inf\n}\n"
        );
    }

    #[test]
    fn precedence_and_parentheses() {
        let src = "fn f(a, b) { return not a and (b or a) }";
        let p = parse_program(src).unwrap();
        let text = format_program(&p);
        assert_eq!(text, "fn f(a, b) {\n    return not a and (b or a)\n}\n");
        let p = parse_program("fn f(a) { return (a - 1) - (a - 2) * 3 }").unwrap();
        assert_eq!(
            format_program(&p),
            "fn f(a) {\n    return a - 1 - (a - 2) * 3\n}\n"
        );
    }

    #[test]
    fn variables_in_first_definition_order() {
        let p = parse_program(
            "fn s(n) { t = 0 for i in range(1, n + 1) { t = t + i } return t }",
        )
        .unwrap();
        assert_eq!(list_variables(&p), vec!["n", "t", "i"]);
        let p = parse_program("fn id(x) { return x }").unwrap();
        assert_eq!(list_variables(&p), vec!["x"]);
        let p = parse_program("fn f() { a = 1 a = 2 }").unwrap();
        assert_eq!(list_variables(&p), vec!["a"]);
        let p = parse_program(
            "fn g(xs) { if len(xs) > 0 { m = 1 } else { k = 2 m = 3 } append(out, 1) return m }",
        )
        .unwrap();
        assert_eq!(list_variables(&p), vec!["xs", "m", "k", "out"]);
    }

    #[test]
    fn else_if_sugar() {
        let a = parse_program("fn f(x) { if x { return 1 } else if x { return 2 } return 3 }")
            .unwrap();
        let b = parse_program(
            "fn f(x) { if x { return 1 } else { if x { return 2 } } return 3 }",
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn literal_constant_scan() {
        let p = parse_program("fn f(x) { y = [1, \"a\"] if x > -2.5 { return null } return y }")
            .unwrap();
        assert_eq!(
            literal_constants(&p),
            vec![
                Literal::Int(1),
                Literal::Str("a".into()),
                Literal::Float(-2.5),
                Literal::Null
            ]
        );
    }
}
