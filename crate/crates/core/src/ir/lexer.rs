use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::parser::ParseError;
use super::Span;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    /// Magnitude only; the parser applies a leading minus.
    Int(u64),
    Float(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Arrow,
    Eq,
    Plus,
    Minus,
    Star,
    Slash,
    Newline,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => alloc::format!("`{s}`"),
            Tok::Int(v) => alloc::format!("`{v}`"),
            Tok::Float(v) => alloc::format!("`{v:?}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    let mut line = 1u32;
    let mut line_start = 0usize;
    while i < bytes.len() {
        let span = Span::new(line, (i - line_start) as u32 + 1);
        let b = bytes[i];
        match b {
            b'\n' => {
                out.push((Tok::Newline, span));
                i += 1;
                line += 1;
                line_start = i;
            }
            b' ' | b'\t' | b'\r' => i += 1,
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'(' | b')' | b'[' | b']' | b'{' | b'}' | b',' | b':' | b'=' | b'+' | b'*' | b'/' => {
                let t = match b {
                    b'(' => Tok::LParen,
                    b')' => Tok::RParen,
                    b'[' => Tok::LBracket,
                    b']' => Tok::RBracket,
                    b'{' => Tok::LBrace,
                    b'}' => Tok::RBrace,
                    b',' => Tok::Comma,
                    b':' => Tok::Colon,
                    b'=' => Tok::Eq,
                    b'+' => Tok::Plus,
                    b'*' => Tok::Star,
                    _ => Tok::Slash,
                };
                out.push((t, span));
                i += 1;
            }
            b'-' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    out.push((Tok::Arrow, span));
                    i += 2;
                } else {
                    out.push((Tok::Minus, span));
                    i += 1;
                }
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                let mut is_float = false;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    is_float = true;
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start || start + 1 == frac_start {
                        return Err(ParseError::syntax(span, "malformed float literal"));
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    is_float = true;
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    let exp_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == exp_start {
                        return Err(ParseError::syntax(span, "malformed float exponent"));
                    }
                }
                if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                    return Err(ParseError::syntax(span, "malformed number"));
                }
                let text = &src[start..i];
                if is_float {
                    let v: f64 = text
                        .parse()
                        .map_err(|_| ParseError::syntax(span, "malformed float literal"))?;
                    if !v.is_finite() {
                        return Err(ParseError::syntax(span, "float literal out of range"));
                    }
                    out.push((Tok::Float(v), span));
                } else {
                    let v: u64 = text
                        .parse()
                        .map_err(|_| ParseError::syntax(span, "integer literal out of range"))?;
                    out.push((Tok::Int(v), span));
                }
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), span));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::syntax(span, &alloc::format!("unexpected character `{ch}`")));
            }
        }
    }
    let span = Span::new(line, (i - line_start) as u32 + 1);
    out.push((Tok::Eof, span));
    Ok(out)
}
