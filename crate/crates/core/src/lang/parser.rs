use super::ast::*;
use super::lexer::{tokenize, Kw, Tok};
use super::{ParseError, ParseErrorKind};

pub fn parse_program(source: &str) -> Result<Program, ParseError> {
    let toks = tokenize(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        loop_depth: 0,
    };
    let program = p.program()?;
    Ok(Program::new(program.0, program.1, program.2))
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    loop_depth: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.pos + offset).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, kind: ParseErrorKind, expected: &[&str], message: String) -> ParseError {
        let span = self.span();
        ParseError {
            kind,
            line: span.line,
            col: span.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            message,
        }
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let found = self.peek().describe();
        self.error(
            ParseErrorKind::Syntax,
            expected,
            format!("unexpected {found}"),
        )
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Tok::Punct(q) if *q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &'static str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(self.unexpected(&[p]))
        }
    }

    fn eat_kw(&mut self, kw: Kw) -> bool {
        if *self.peek() == Tok::Kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: Kw, text: &'static str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&[text]))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn program(&mut self) -> PResult<(String, Vec<String>, Vec<Stmt>)> {
        self.expect_kw(Kw::Fn, "fn")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params: Vec<String> = Vec::new();
        if !self.eat_punct(")") {
            loop {
                let at = self.span();
                let param = self.ident()?;
                if params.contains(&param) {
                    return Err(ParseError {
                        kind: ParseErrorKind::DuplicateParameter,
                        line: at.line,
                        col: at.col,
                        expected: Vec::new(),
                        message: format!("duplicate parameter `{param}`"),
                    });
                }
                params.push(param);
                if self.eat_punct(")") {
                    break;
                }
                if !self.eat_punct(",") {
                    return Err(self.unexpected(&[",", ")"]));
                }
            }
        }
        let body = self.block()?;
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected(&["end of input"]));
        }
        Ok((name, params, body))
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.eat_punct("}") {
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.span();
        let kind = match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                if self.eat_punct("=") {
                    let value = self.expr()?;
                    StmtKind::Assign {
                        target: name,
                        value,
                    }
                } else if self.eat_punct("[") {
                    let index = self.expr()?;
                    self.expect_punct("]")?;
                    if !self.eat_punct("=") {
                        return Err(self.unexpected(&["="]));
                    }
                    let value = self.expr()?;
                    StmtKind::IndexAssign {
                        target: name,
                        index,
                        value,
                    }
                } else if matches!(self.peek(), Tok::Punct("(")) {
                    return Err(ParseError {
                        kind: ParseErrorKind::UnknownConstruct,
                        line: start.line,
                        col: start.col,
                        expected: Vec::new(),
                        message: format!("call to unknown function `{name}`"),
                    });
                } else {
                    return Err(self.unexpected(&["=", "["]));
                }
            }
            Tok::Kw(Kw::Append) => {
                self.bump();
                self.expect_punct("(")?;
                let target = self.ident()?;
                self.expect_punct(",")?;
                let value = self.expr()?;
                self.expect_punct(")")?;
                StmtKind::Append { target, value }
            }
            Tok::Kw(Kw::If) => return self.if_stmt(),
            Tok::Kw(Kw::While) => {
                self.bump();
                let cond = self.expr()?;
                self.loop_depth += 1;
                let body = self.block();
                self.loop_depth -= 1;
                StmtKind::While { cond, body: body? }
            }
            Tok::Kw(Kw::For) => {
                self.bump();
                let var = self.ident()?;
                self.expect_kw(Kw::In, "in")?;
                self.expect_kw(Kw::Range, "range")?;
                self.expect_punct("(")?;
                let first = self.expr()?;
                self.expect_punct(",")?;
                let end = self.expr()?;
                let step = if self.eat_punct(",") {
                    Some(self.expr()?)
                } else {
                    None
                };
                self.expect_punct(")")?;
                self.loop_depth += 1;
                let body = self.block();
                self.loop_depth -= 1;
                StmtKind::For {
                    var,
                    start: first,
                    end,
                    step,
                    body: body?,
                }
            }
            Tok::Kw(kw @ (Kw::Break | Kw::Continue)) => {
                if self.loop_depth == 0 {
                    return Err(self.error(
                        ParseErrorKind::Syntax,
                        &[],
                        format!("{} outside of a loop", self.peek().describe()),
                    ));
                }
                self.bump();
                if kw == Kw::Break {
                    StmtKind::Break
                } else {
                    StmtKind::Continue
                }
            }
            Tok::Kw(Kw::Return) => {
                self.bump();
                StmtKind::Return(self.expr()?)
            }
            _ => {
                return Err(self.unexpected(&[
                    "identifier", "append", "if", "while", "for", "break", "continue", "return",
                    "}",
                ]))
            }
        };
        Ok(self.finish(kind, start))
    }

    fn finish(&self, kind: StmtKind, start: Span) -> Stmt {
        let prev = self.toks[self.pos.saturating_sub(1)].1;
        Stmt {
            kind,
            span: Span {
                start: start.start,
                end: prev.end.max(start.start),
                line: start.line,
                col: start.col,
            },
        }
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let start = self.span();
        self.expect_kw(Kw::If, "if")?;
        let cond = self.expr()?;
        let then_body = self.block()?;
        let else_body = if self.eat_kw(Kw::Else) {
            if *self.peek() == Tok::Kw(Kw::If) {
                Some(vec![self.if_stmt()?])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(self.finish(
            StmtKind::If {
                cond,
                then_body,
                else_body,
            },
            start,
        ))
    }

    pub(crate) fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw(Kw::Or) {
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.eat_kw(Kw::And) {
            let rhs = self.not_expr()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.eat_kw(Kw::Not) {
            let operand = self.not_expr()?;
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(operand)));
        }
        self.cmp_expr()
    }

    fn cmp_op(&self) -> Option<BinaryOp> {
        match self.peek() {
            Tok::Punct("==") => Some(BinaryOp::Eq),
            Tok::Punct("!=") => Some(BinaryOp::Ne),
            Tok::Punct("<") => Some(BinaryOp::Lt),
            Tok::Punct("<=") => Some(BinaryOp::Le),
            Tok::Punct(">") => Some(BinaryOp::Gt),
            Tok::Punct(">=") => Some(BinaryOp::Ge),
            _ => None,
        }
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let lhs = self.sum()?;
        let Some(op) = self.cmp_op() else {
            return Ok(lhs);
        };
        self.bump();
        let rhs = self.sum()?;
        if self.cmp_op().is_some() {
            return Err(self.error(
                ParseErrorKind::Syntax,
                &[],
                "chained comparisons need explicit parentheses".to_string(),
            ));
        }
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn sum(&mut self) -> PResult<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("+") => BinaryOp::Add,
                Tok::Punct("-") => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn product(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("*") => BinaryOp::Mul,
                Tok::Punct("/") => BinaryOp::Div,
                Tok::Punct("//") => BinaryOp::FloorDiv,
                Tok::Punct("%") => BinaryOp::Mod,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if !self.eat_punct("-") {
            return self.postfix();
        }
        // A minus directly before a numeric literal is part of the literal.
        let numeric_next = matches!(
            self.peek(),
            Tok::Int(_) | Tok::Float(_) | Tok::Kw(Kw::Inf)
        );
        if numeric_next && !matches!(self.peek_at(1), Tok::Punct("[")) {
            let lit = match self.peek().clone() {
                Tok::Int(m) if m <= i64::MAX as u64 => Literal::Int(-(m as i64)),
                Tok::Int(m) if m == i64::MAX as u64 + 1 => Literal::Int(i64::MIN),
                Tok::Int(_) => {
                    return Err(self.error(
                        ParseErrorKind::Lexical,
                        &[],
                        "integer literal out of range".to_string(),
                    ))
                }
                Tok::Float(f) => Literal::Float(-f),
                _ => Literal::Float(f64::NEG_INFINITY),
            };
            self.bump();
            return Ok(Expr::Lit(lit));
        }
        let operand = self.unary()?;
        Ok(Expr::Unary(UnaryOp::Neg, Box::new(operand)))
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut base = self.atom()?;
        while self.eat_punct("[") {
            let index = self.expr()?;
            self.expect_punct("]")?;
            base = Expr::Index(Box::new(base), Box::new(index));
        }
        Ok(base)
    }

    fn comma_list(&mut self, close: &'static str) -> PResult<Vec<Expr>> {
        let mut items = Vec::new();
        if self.eat_punct(close) {
            return Ok(items);
        }
        loop {
            items.push(self.expr()?);
            if self.eat_punct(close) {
                return Ok(items);
            }
            if !self.eat_punct(",") {
                return Err(self.unexpected(&[",", close]));
            }
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        let start = self.span();
        let tok = self.peek().clone();
        let expr = match tok {
            Tok::Int(m) => {
                if m > i64::MAX as u64 {
                    return Err(self.error(
                        ParseErrorKind::Lexical,
                        &[],
                        "integer literal out of range".to_string(),
                    ));
                }
                self.bump();
                Expr::Lit(Literal::Int(m as i64))
            }
            Tok::Float(f) => {
                self.bump();
                Expr::Lit(Literal::Float(f))
            }
            Tok::Str(s) => {
                self.bump();
                Expr::Lit(Literal::Str(s))
            }
            Tok::Kw(Kw::True) => {
                self.bump();
                Expr::Lit(Literal::Bool(true))
            }
            Tok::Kw(Kw::False) => {
                self.bump();
                Expr::Lit(Literal::Bool(false))
            }
            Tok::Kw(Kw::Null) => {
                self.bump();
                Expr::Lit(Literal::Null)
            }
            Tok::Kw(Kw::Inf) => {
                self.bump();
                Expr::Lit(Literal::Float(f64::INFINITY))
            }
            Tok::Ident(name) => {
                self.bump();
                if matches!(self.peek(), Tok::Punct("(")) {
                    return Err(ParseError {
                        kind: ParseErrorKind::UnknownConstruct,
                        line: start.line,
                        col: start.col,
                        expected: Vec::new(),
                        message: format!("call to unknown function `{name}`"),
                    });
                }
                Expr::Var(name)
            }
            Tok::Punct("(") => {
                self.bump();
                let inner = self.expr()?;
                self.expect_punct(")")?;
                inner
            }
            Tok::Punct("[") => {
                self.bump();
                Expr::List(self.comma_list("]")?)
            }
            Tok::Punct("{") => {
                self.bump();
                Expr::Set(self.comma_list("}")?)
            }
            Tok::Kw(kw @ (Kw::Len | Kw::Abs | Kw::Min | Kw::Max)) => {
                self.bump();
                let builtin = match kw {
                    Kw::Len => Builtin::Len,
                    Kw::Abs => Builtin::Abs,
                    Kw::Min => Builtin::Min,
                    _ => Builtin::Max,
                };
                self.expect_punct("(")?;
                let args = self.comma_list(")")?;
                let arity_ok = match builtin {
                    Builtin::Len | Builtin::Abs => args.len() == 1,
                    Builtin::Min | Builtin::Max => !args.is_empty(),
                };
                if !arity_ok {
                    return Err(ParseError {
                        kind: ParseErrorKind::Syntax,
                        line: start.line,
                        col: start.col,
                        expected: Vec::new(),
                        message: format!(
                            "wrong number of arguments to `{}`",
                            builtin.name()
                        ),
                    });
                }
                Expr::Call(builtin, args)
            }
            _ => {
                return Err(self.unexpected(&[
                    "literal", "identifier", "(", "[", "{", "-", "not", "builtin",
                ]))
            }
        };
        Ok(expr)
    }
}
