use super::ast::Span;
use super::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    /// Unsigned magnitude; the parser folds a leading minus.
    Int(u64),
    Float(f64),
    Str(String),
    Kw(Kw),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kw {
    Fn,
    Return,
    If,
    Else,
    While,
    For,
    In,
    Range,
    Break,
    Continue,
    True,
    False,
    Null,
    And,
    Or,
    Not,
    Inf,
    Append,
    Len,
    Abs,
    Min,
    Max,
}

const KEYWORDS: [(&str, Kw); 22] = [
    ("fn", Kw::Fn),
    ("return", Kw::Return),
    ("if", Kw::If),
    ("else", Kw::Else),
    ("while", Kw::While),
    ("for", Kw::For),
    ("in", Kw::In),
    ("range", Kw::Range),
    ("break", Kw::Break),
    ("continue", Kw::Continue),
    ("true", Kw::True),
    ("false", Kw::False),
    ("null", Kw::Null),
    ("and", Kw::And),
    ("or", Kw::Or),
    ("not", Kw::Not),
    ("inf", Kw::Inf),
    ("append", Kw::Append),
    ("len", Kw::Len),
    ("abs", Kw::Abs),
    ("min", Kw::Min),
    ("max", Kw::Max),
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|(k, _)| *k == word)
}

/// Identifiers with this prefix are reserved for template placeholders.
pub const HOLE_PREFIX: &str = "__HOLE_";

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(i) => format!("integer `{i}`"),
            Tok::Float(f) => format!("float `{f:?}`"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Kw(k) => {
                let word = KEYWORDS.iter().find(|(_, kw)| kw == k).map(|(w, _)| *w);
                format!("`{}`", word.unwrap_or("?"))
            }
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

const PUNCTS: [&str; 21] = [
    "//", "==", "!=", "<=", ">=", "(", ")", "{", "}", "[", "]", ",", "=", "+", "-", "*", "/",
    "%", "<", ">", "!",
];

pub(crate) fn tokenize(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut pos = 0usize;
    let mut line = 1u32;
    let mut line_start = 0usize;

    let lex_err = |pos: usize, line: u32, line_start: usize, msg: String| ParseError {
        kind: ParseErrorKind::Lexical,
        line,
        col: (src[line_start..pos].chars().count() + 1) as u32,
        expected: Vec::new(),
        message: msg,
    };

    while pos < bytes.len() {
        let c = src[pos..].chars().next().unwrap_or('\0');
        if c == '\n' {
            pos += 1;
            line += 1;
            line_start = pos;
            continue;
        }
        if c.is_whitespace() {
            pos += c.len_utf8();
            continue;
        }
        if c == '#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        let col = (src[line_start..pos].chars().count() + 1) as u32;
        let span_at = |end: usize| Span {
            start,
            end,
            line,
            col,
        };

        if c.is_ascii_alphabetic() || c == '_' {
            while pos < bytes.len() && (bytes[pos].is_ascii_alphanumeric() || bytes[pos] == b'_') {
                pos += 1;
            }
            let word = &src[start..pos];
            if word.starts_with(HOLE_PREFIX) {
                return Err(lex_err(
                    start,
                    line,
                    line_start,
                    format!("unfilled template placeholder `{word}`"),
                ));
            }
            let tok = match KEYWORDS.iter().find(|(k, _)| *k == word) {
                Some((_, kw)) => Tok::Kw(*kw),
                None => Tok::Ident(word.to_string()),
            };
            out.push((tok, span_at(pos)));
            continue;
        }

        if c.is_ascii_digit() {
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            let mut is_float = false;
            if pos + 1 < bytes.len() && bytes[pos] == b'.' && bytes[pos + 1].is_ascii_digit() {
                is_float = true;
                pos += 1;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
            }
            if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
                let mut look = pos + 1;
                if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                    look += 1;
                }
                if look < bytes.len() && bytes[look].is_ascii_digit() {
                    is_float = true;
                    pos = look;
                    while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                        pos += 1;
                    }
                }
            }
            if pos < bytes.len() && (bytes[pos].is_ascii_alphabetic() || bytes[pos] == b'_') {
                return Err(lex_err(
                    pos,
                    line,
                    line_start,
                    "malformed number literal".to_string(),
                ));
            }
            let text = &src[start..pos];
            let tok = if is_float {
                let f: f64 = text
                    .parse()
                    .map_err(|_| lex_err(start, line, line_start, format!("bad float `{text}`")))?;
                if !f.is_finite() {
                    return Err(lex_err(
                        start,
                        line,
                        line_start,
                        format!("float literal `{text}` overflows"),
                    ));
                }
                Tok::Float(f)
            } else {
                let i: u64 = text.parse().map_err(|_| {
                    lex_err(start, line, line_start, format!("integer `{text}` out of range"))
                })?;
                Tok::Int(i)
            };
            out.push((tok, span_at(pos)));
            continue;
        }

        if c == '"' {
            pos += 1;
            let mut s = String::new();
            loop {
                let Some(ch) = src[pos..].chars().next() else {
                    return Err(lex_err(
                        start,
                        line,
                        line_start,
                        "unterminated string literal".to_string(),
                    ));
                };
                pos += ch.len_utf8();
                match ch {
                    '"' => break,
                    '\n' => {
                        return Err(lex_err(
                            start,
                            line,
                            line_start,
                            "newline in string literal".to_string(),
                        ))
                    }
                    '\\' => {
                        let esc = src[pos..].chars().next();
                        pos += esc.map_or(0, char::len_utf8);
                        match esc {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('r') => s.push('\r'),
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            _ => {
                                return Err(lex_err(
                                    pos,
                                    line,
                                    line_start,
                                    "unknown escape sequence".to_string(),
                                ))
                            }
                        }
                    }
                    other => s.push(other),
                }
            }
            out.push((Tok::Str(s), span_at(pos)));
            continue;
        }

        match PUNCTS.iter().find(|p| src[pos..].starts_with(**p)) {
            Some(&"!") => {
                return Err(lex_err(
                    pos,
                    line,
                    line_start,
                    "unexpected character `!`".to_string(),
                ))
            }
            Some(p) => {
                pos += p.len();
                out.push((Tok::Punct(p), span_at(pos)));
            }
            None => {
                return Err(lex_err(
                    pos,
                    line,
                    line_start,
                    format!("unexpected character `{c}`"),
                ))
            }
        }
    }
    let col = (src[line_start..].chars().count() + 1) as u32;
    out.push((
        Tok::Eof,
        Span {
            start: src.len(),
            end: src.len(),
            line,
            col,
        },
    ));
    Ok(out)
}
