use std::fmt::Write;

use super::ast::*;

const INDENT: &str = "    ";

/// Canonical pretty-print; `parse_program` of the result is structurally
/// equal to the input.
pub fn format_program(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "fn {}({}) {{", p.name, p.params.join(", "));
    format_block(&mut out, &p.body, 1);
    out.push_str("}\n");
    out
}

fn format_block(out: &mut String, stmts: &[Stmt], depth: usize) {
    for s in stmts {
        format_stmt(out, s, depth);
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str(INDENT);
    }
}

fn format_stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match &s.kind {
        StmtKind::Assign { target, value } => {
            let _ = writeln!(out, "{target} = {}", format_expr(value));
        }
        StmtKind::IndexAssign {
            target,
            index,
            value,
        } => {
            let _ = writeln!(
                out,
                "{target}[{}] = {}",
                format_expr(index),
                format_expr(value)
            );
        }
        StmtKind::Append { target, value } => {
            let _ = writeln!(out, "append({target}, {})", format_expr(value));
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            let _ = writeln!(out, "if {} {{", format_expr(cond));
            format_block(out, then_body, depth + 1);
            indent(out, depth);
            match else_body {
                Some(else_body) => {
                    out.push_str("} else {\n");
                    format_block(out, else_body, depth + 1);
                    indent(out, depth);
                    out.push_str("}\n");
                }
                None => out.push_str("}\n"),
            }
        }
        StmtKind::While { cond, body } => {
            let _ = writeln!(out, "while {} {{", format_expr(cond));
            format_block(out, body, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::For {
            var,
            start,
            end,
            step,
            body,
        } => {
            let _ = write!(
                out,
                "for {var} in range({}, {}",
                format_expr(start),
                format_expr(end)
            );
            if let Some(step) = step {
                let _ = write!(out, ", {}", format_expr(step));
            }
            out.push_str(") {\n");
            format_block(out, body, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
        StmtKind::Break => out.push_str("break\n"),
        StmtKind::Continue => out.push_str("continue\n"),
        StmtKind::Return(e) => {
            let _ = writeln!(out, "return {}", format_expr(e));
        }
    }
}

pub fn format_literal(lit: &Literal) -> String {
    match lit {
        Literal::Int(i) => i.to_string(),
        Literal::Float(f) if f.is_infinite() => {
            if *f > 0.0 {
                "inf".to_string()
            } else {
                "-inf".to_string()
            }
        }
        Literal::Float(f) => format!("{f:?}"),
        Literal::Str(s) => quote(s),
        Literal::Bool(b) => b.to_string(),
        Literal::Null => "null".to_string(),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn wrap(e: &Expr, parens: bool) -> String {
    if parens {
        format!("({})", format_expr(e))
    } else {
        format_expr(e)
    }
}

fn is_nonneg_number(e: &Expr) -> bool {
    match e {
        Expr::Lit(Literal::Int(i)) => *i >= 0,
        Expr::Lit(Literal::Float(f)) => !f.is_sign_negative(),
        _ => false,
    }
}

pub fn format_expr(e: &Expr) -> String {
    match e {
        Expr::Lit(lit) => format_literal(lit),
        Expr::Var(name) => name.clone(),
        Expr::List(items) => format!("[{}]", join(items)),
        Expr::Set(items) => format!("{{{}}}", join(items)),
        Expr::Unary(UnaryOp::Neg, operand) => {
            let parens = operand.precedence() < prec::UNARY || is_nonneg_number(operand);
            format!("-{}", wrap(operand, parens))
        }
        Expr::Unary(UnaryOp::Not, operand) => {
            format!("not {}", wrap(operand, operand.precedence() < prec::NOT))
        }
        Expr::Binary(op, lhs, rhs) => {
            let p = op.precedence();
            let (lp, rp) = if p == prec::CMP {
                (lhs.precedence() <= p, rhs.precedence() <= p)
            } else {
                (lhs.precedence() < p, rhs.precedence() <= p)
            };
            format!("{} {} {}", wrap(lhs, lp), op.symbol(), wrap(rhs, rp))
        }
        Expr::Index(base, index) => format!(
            "{}[{}]",
            wrap(base, base.precedence() < prec::POSTFIX),
            format_expr(index)
        ),
        Expr::Call(b, args) => format!("{}({})", b.name(), join(args)),
    }
}

fn join(items: &[Expr]) -> String {
    items.iter().map(format_expr).collect::<Vec<_>>().join(", ")
}
