use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::lexer::{tokenize, Tok};
use super::validate::{validate, Diagnostic};
use super::{
    AffineExpr, BinOp, Block, Call, CallDest, Expr, Function, Loop, Param, Program, ScalarType, Span,
    Stmt, StmtKind, ValueType,
};

const KEYWORDS: &[&str] = &["func", "let", "loop", "in", "step", "call", "return", "i64", "f64"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("{span}: syntax error: {message}")]
    Syntax { span: Span, message: String },
    #[error("invalid program: {}", DiagList(.0))]
    Invalid(Vec<Diagnostic>),
}

struct DiagList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl ParseError {
    pub(crate) fn syntax(span: Span, message: &str) -> Self {
        ParseError::Syntax { span, message: message.into() }
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ParseError::Invalid(d) => d,
            ParseError::Syntax { .. } => &[],
        }
    }
}

/// Parses and validates a program.
pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let program = parse_unchecked(src)?;
    let diags = validate(&program);
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(ParseError::Invalid(diags))
    }
}

/// Parses the grammar without running [`validate`].
pub fn parse_unchecked(src: &str) -> Result<Program, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut functions = Vec::new();
    p.skip_newlines();
    while !p.at(&Tok::Eof) {
        functions.push(p.function()?);
        if !p.at(&Tok::Eof) {
            p.expect(&Tok::Newline)?;
        }
        p.skip_newlines();
    }
    Ok(Program::new(functions))
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, what: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            span: self.span(),
            message: alloc::format!("expected {what}, found {}", self.peek().describe()),
        })
    }

    fn expect(&mut self, t: &Tok) -> Result<(), ParseError> {
        if self.at(t) {
            self.bump();
            Ok(())
        } else {
            self.error(&t.describe())
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            self.error(&alloc::format!("`{kw}`"))
        }
    }

    fn skip_newlines(&mut self) {
        while self.at(&Tok::Newline) {
            self.bump();
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.error("identifier"),
        }
    }

    fn function(&mut self) -> Result<Function, ParseError> {
        let span = self.span();
        self.expect_keyword("func")?;
        let name = self.ident()?;
        self.expect(&Tok::LParen)?;
        let mut params = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                let pname = self.ident()?;
                self.expect(&Tok::Colon)?;
                let ty = self.value_type()?;
                params.push(Param { name: pname, ty });
                if self.at(&Tok::Comma) {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen)?;
        let result = if self.at(&Tok::Arrow) {
            self.bump();
            let at = self.span();
            match self.value_type()? {
                ValueType::Scalar(s) => Some(s),
                ValueType::Array { .. } => {
                    return Err(ParseError::syntax(at, "function results must be scalar"));
                }
            }
        } else {
            None
        };
        let body = self.block()?;
        Ok(Function { name, params, result, body, span })
    }

    fn scalar_type(&mut self) -> Result<ScalarType, ParseError> {
        if self.at_keyword("i64") {
            self.bump();
            Ok(ScalarType::I64)
        } else if self.at_keyword("f64") {
            self.bump();
            Ok(ScalarType::F64)
        } else {
            self.error("type `i64` or `f64`")
        }
    }

    fn value_type(&mut self) -> Result<ValueType, ParseError> {
        let elem = self.scalar_type()?;
        let mut shape = Vec::new();
        while self.at(&Tok::LBracket) {
            self.bump();
            let span = self.span();
            match self.bump() {
                Tok::Int(v) => {
                    let v = usize::try_from(v)
                        .map_err(|_| ParseError::syntax(span, "array extent out of range"))?;
                    shape.push(v);
                }
                _ => return Err(ParseError::syntax(span, "expected integer array extent")),
            }
            self.expect(&Tok::RBracket)?;
        }
        Ok(if shape.is_empty() { ValueType::Scalar(elem) } else { ValueType::Array { elem, shape } })
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        self.expect(&Tok::LBrace)?;
        let mut stmts = Vec::new();
        self.skip_newlines();
        while !self.at(&Tok::RBrace) {
            if self.at(&Tok::Eof) {
                return self.error("`}`");
            }
            stmts.push(self.stmt()?);
            if self.at(&Tok::RBrace) {
                break;
            }
            self.expect(&Tok::Newline)?;
            self.skip_newlines();
        }
        self.expect(&Tok::RBrace)?;
        Ok(Block { stmts })
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        let kind = if self.at_keyword("let") {
            self.bump();
            let name = self.ident()?;
            self.expect(&Tok::Eq)?;
            if self.at_keyword("call") {
                StmtKind::Call(self.call(Some(CallDest::Let(name)))?)
            } else {
                StmtKind::Let { name, value: self.expr()? }
            }
        } else if self.at_keyword("loop") {
            StmtKind::Loop(self.loop_stmt()?)
        } else if self.at_keyword("call") {
            StmtKind::Call(self.call(None)?)
        } else if self.at_keyword("return") {
            self.bump();
            StmtKind::Return(self.expr()?)
        } else {
            let name = self.ident()?;
            if self.at(&Tok::LBracket) {
                let indices = self.subscripts()?;
                self.expect(&Tok::Eq)?;
                StmtKind::Store { array: name, indices, value: self.expr()? }
            } else {
                self.expect(&Tok::Eq)?;
                if self.at_keyword("call") {
                    StmtKind::Call(self.call(Some(CallDest::Assign(name)))?)
                } else {
                    StmtKind::Assign { name, value: self.expr()? }
                }
            }
        };
        Ok(Stmt { kind, span })
    }

    fn call(&mut self, dest: Option<CallDest>) -> Result<Call, ParseError> {
        self.expect_keyword("call")?;
        let callee = self.ident()?;
        self.expect(&Tok::LParen)?;
        let mut args = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if self.at(&Tok::Comma) {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen)?;
        Ok(Call { dest, callee, args })
    }

    fn loop_stmt(&mut self) -> Result<Loop, ParseError> {
        self.expect_keyword("loop")?;
        let index = self.ident()?;
        self.expect_keyword("in")?;
        self.expect(&Tok::LBracket)?;
        let lower = self.affine()?;
        self.expect(&Tok::Comma)?;
        let upper = self.affine()?;
        self.expect(&Tok::RParen)?;
        let step = if self.at_keyword("step") {
            self.bump();
            let negative = if self.at(&Tok::Minus) {
                self.bump();
                true
            } else {
                false
            };
            let span = self.span();
            match self.bump() {
                Tok::Int(v) => {
                    let v = i64::try_from(v).map_err(|_| ParseError::syntax(span, "step out of range"))?;
                    if negative { -v } else { v }
                }
                _ => return Err(ParseError::syntax(span, "expected integer step")),
            }
        } else {
            1
        };
        let body = self.block()?;
        Ok(Loop { index, lower, upper, step, body })
    }

    fn affine(&mut self) -> Result<AffineExpr, ParseError> {
        let span = self.span();
        let e = self.expr()?;
        AffineExpr::from_expr(&e, &|_| true).ok_or_else(|| {
            ParseError::syntax(span, "loop bound must be an integer-linear expression")
        })
    }

    fn subscripts(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut out = Vec::new();
        while self.at(&Tok::LBracket) {
            self.bump();
            out.push(self.expr()?);
            self.expect(&Tok::RBracket)?;
        }
        Ok(out)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if !self.at(&Tok::Minus) {
            return self.primary();
        }
        let span = self.span();
        self.bump();
        // A minus directly in front of a literal is part of the literal.
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                if v == i64::MIN.unsigned_abs() {
                    Ok(Expr::Int(i64::MIN))
                } else {
                    let v = i64::try_from(v)
                        .map_err(|_| ParseError::syntax(span, "integer literal out of range"))?;
                    Ok(Expr::Int(-v))
                }
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(-v))
            }
            _ => Ok(Expr::Neg(Box::new(self.unary()?))),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                let v = i64::try_from(v).map_err(|_| ParseError::syntax(span, "integer literal out of range"))?;
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(s) if (s == "f64" || s == "i64") && self.peek_at(1) == &Tok::LParen => {
                let to = if s == "f64" { ScalarType::F64 } else { ScalarType::I64 };
                self.bump();
                self.bump();
                let arg = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(Expr::Convert { to, arg: Box::new(arg) })
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.at(&Tok::LBracket) {
                    Ok(Expr::Load { array: name, indices: self.subscripts()? })
                } else {
                    Ok(Expr::Var(name))
                }
            }
            _ => self.error("expression"),
        }
    }
}

#[cfg(test)]
pub(crate) fn parse_expr_for_test(src: &str) -> Expr {
    let toks = tokenize(src).unwrap();
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr().unwrap();
    assert!(p.at(&Tok::Eof), "trailing tokens in `{src}`");
    e
}
