//! Recursive-descent formula parser.
//!
//! Precedence, loosest first: comparisons, `&`, `+ -`, `* /`, unary `- +`,
//! `^`. Binary levels are left-associative except `^`, which associates to
//! the right.

use std::fmt;

use thiserror::Error;

use super::ast::{BinaryOp, Expr, UnaryOp};
use crate::model::{CellAddress, Coord, RangeRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct FormulaError {
    /// Byte offset into the formula source, including the leading `=`.
    pub offset: usize,
    pub expected: Vec<&'static str>,
    pub found: String,
}

impl fmt::Display for FormulaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syntax error at offset {}: expected ", self.offset)?;
        match self.expected.as_slice() {
            [one] => write!(f, "{one}")?,
            many => write!(f, "one of {}", many.join(", "))?,
        }
        write!(f, ", found {}", self.found)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Str(String),
    Ident(String),
    QuotedSheet(String),
    Bang,
    Colon,
    Comma,
    LParen,
    RParen,
    Op(BinaryOp),
    /// `+` and `-` are binary or unary depending on position.
    Plus,
    Minus,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Number(n) => format!("number `{n}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::QuotedSheet(s) => format!("sheet `'{s}'`"),
            Tok::Bang => "`!`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, offset: usize, expected: &[&'static str], found: impl Into<String>) -> FormulaError {
        FormulaError {
            offset,
            expected: expected.to_vec(),
            found: found.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, FormulaError> {
        let mut out = Vec::new();
        loop {
            let bytes = self.src.as_bytes();
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            let start = self.pos;
            let Some(&b) = bytes.get(self.pos) else {
                out.push((start, Tok::End));
                return Ok(out);
            };
            let tok = match b {
                b'0'..=b'9' | b'.' => self.number()?,
                b'"' => self.string()?,
                b'\'' => self.quoted_sheet()?,
                b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                    while self.pos < bytes.len()
                        && (bytes[self.pos].is_ascii_alphanumeric() || matches!(bytes[self.pos], b'_' | b'.'))
                    {
                        self.pos += 1;
                    }
                    Tok::Ident(self.src[start..self.pos].to_string())
                }
                _ => {
                    let two = self.src.get(self.pos..self.pos + 2);
                    let (tok, len) = match (two, b) {
                        (Some("<="), _) => (Tok::Op(BinaryOp::Le), 2),
                        (Some(">="), _) => (Tok::Op(BinaryOp::Ge), 2),
                        (Some("<>"), _) => (Tok::Op(BinaryOp::Ne), 2),
                        (_, b'<') => (Tok::Op(BinaryOp::Lt), 1),
                        (_, b'>') => (Tok::Op(BinaryOp::Gt), 1),
                        (_, b'=') => (Tok::Op(BinaryOp::Eq), 1),
                        (_, b'*') => (Tok::Op(BinaryOp::Mul), 1),
                        (_, b'/') => (Tok::Op(BinaryOp::Div), 1),
                        (_, b'^') => (Tok::Op(BinaryOp::Pow), 1),
                        (_, b'&') => (Tok::Op(BinaryOp::Concat), 1),
                        (_, b'+') => (Tok::Plus, 1),
                        (_, b'-') => (Tok::Minus, 1),
                        (_, b'!') => (Tok::Bang, 1),
                        (_, b':') => (Tok::Colon, 1),
                        (_, b',') => (Tok::Comma, 1),
                        (_, b'(') => (Tok::LParen, 1),
                        (_, b')') => (Tok::RParen, 1),
                        _ => {
                            let c = self.src[self.pos..].chars().next().unwrap_or('?');
                            return Err(self.err(start, &["token"], format!("`{c}`")));
                        }
                    };
                    self.pos += len;
                    tok
                }
            };
            out.push((start, tok));
        }
    }

    fn number(&mut self) -> Result<Tok, FormulaError> {
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let digits = |pos: &mut usize| {
            let s = *pos;
            while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
                *pos += 1;
            }
            *pos > s
        };
        let mut any = digits(&mut self.pos);
        if bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            any |= digits(&mut self.pos);
        }
        if !any {
            return Err(self.err(start, &["number"], "`.`"));
        }
        if matches!(bytes.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !digits(&mut self.pos) {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(Tok::Number(n)),
            _ => Err(self.err(start, &["finite number"], format!("`{text}`"))),
        }
    }

    fn string(&mut self) -> Result<Tok, FormulaError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let rest = &self.src[self.pos..];
            let Some(c) = rest.chars().next() else {
                return Err(self.err(self.pos, &["`\"`"], "end of input"));
            };
            self.pos += c.len_utf8();
            if c == '"' {
                if self.src[self.pos..].starts_with('"') {
                    self.pos += 1;
                    out.push('"');
                } else {
                    return Ok(Tok::Str(out));
                }
            } else {
                out.push(c);
            }
        }
    }

    fn quoted_sheet(&mut self) -> Result<Tok, FormulaError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let rest = &self.src[self.pos..];
            let Some(c) = rest.chars().next() else {
                return Err(self.err(self.pos, &["`'`"], "end of input"));
            };
            self.pos += c.len_utf8();
            if c == '\'' {
                if self.src[self.pos..].starts_with('\'') {
                    self.pos += 1;
                    out.push('\'');
                } else {
                    return Ok(Tok::QuotedSheet(out));
                }
            } else {
                out.push(c);
            }
        }
    }
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    sheet: &'a str,
}

const EXPR_START: &[&str] = &["number", "string", "cell reference", "function call", "`(`", "`-`"];

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn peek_at(&self, n: usize) -> &Tok {
        self.toks
            .get(self.pos + n)
            .map(|(_, t)| t)
            .unwrap_or(&Tok::End)
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&'static str]) -> FormulaError {
        FormulaError {
            offset: self.offset(),
            expected: expected.to_vec(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, name: &'static str) -> Result<(), FormulaError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[name]))
        }
    }

    fn comparison(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.concat()?;
        loop {
            let op = match self.peek() {
                Tok::Op(op @ (BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge)) => *op,
                _ => return Ok(left),
            };
            self.bump();
            left = Expr::binary(op, left, self.concat()?);
        }
    }

    fn concat(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.additive()?;
        while *self.peek() == Tok::Op(BinaryOp::Concat) {
            self.bump();
            left = Expr::binary(BinaryOp::Concat, left, self.additive()?);
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(left),
            };
            self.bump();
            left = Expr::binary(op, left, self.multiplicative()?);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, FormulaError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op(op @ (BinaryOp::Mul | BinaryOp::Div)) => *op,
                _ => return Ok(left),
            };
            self.bump();
            left = Expr::binary(op, left, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, FormulaError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::unary(UnaryOp::Neg, self.unary()?))
            }
            Tok::Plus => {
                self.bump();
                Ok(Expr::unary(UnaryOp::Plus, self.unary()?))
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, FormulaError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op(BinaryOp::Pow) {
            self.bump();
            // right operand may carry its own sign: 2^-1
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, FormulaError> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Expr::Number(n))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Text(s))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.comparison()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::LParen => {
                self.bump();
                self.bump();
                self.call(name.to_ascii_uppercase())
            }
            Tok::Ident(_) | Tok::QuotedSheet(_) => {
                let (sheet, coord) = self.reference()?;
                if *self.peek() == Tok::Colon {
                    return Err(FormulaError {
                        offset: self.offset(),
                        expected: vec!["operator", "`)`", "end of input"],
                        found: "`:` (ranges are only allowed as function arguments)".into(),
                    });
                }
                match coord {
                    Some(c) => Ok(Expr::Ref(CellAddress::at(sheet, c))),
                    None => Ok(Expr::Bool(sheet.eq_ignore_ascii_case("TRUE"))),
                }
            }
            _ => Err(self.unexpected(EXPR_START)),
        }
    }

    /// Parses `[sheet!]coord`. A bare TRUE/FALSE comes back with `None` coord
    /// and the keyword in the sheet slot.
    fn reference(&mut self) -> Result<(String, Option<Coord>), FormulaError> {
        let start = self.offset();
        let explicit_sheet = match (self.peek().clone(), self.peek_at(1)) {
            (Tok::QuotedSheet(s), _) => {
                self.bump();
                self.expect(Tok::Bang, "`!`")?;
                Some(s)
            }
            (Tok::Ident(s), Tok::Bang) => {
                self.bump();
                self.bump();
                Some(s)
            }
            _ => None,
        };
        let coord_offset = self.offset();
        let Tok::Ident(text) = self.peek().clone() else {
            return Err(self.unexpected(&["cell reference"]));
        };
        if explicit_sheet.is_none() && (text.eq_ignore_ascii_case("TRUE") || text.eq_ignore_ascii_case("FALSE")) {
            self.bump();
            return Ok((text, None));
        }
        match CellAddress::parse_in(&text, self.sheet) {
            Ok(addr) if !text.contains('.') => {
                self.bump();
                let coord = addr.coord();
                Ok((explicit_sheet.unwrap_or(addr.sheet), Some(coord)))
            }
            _ => Err(FormulaError {
                offset: if explicit_sheet.is_some() { coord_offset } else { start },
                expected: vec!["cell reference", "function call"],
                found: format!("`{text}`"),
            }),
        }
    }

    /// A range argument `[sheet!]A1:B2` followed by `,` or `)`.
    fn try_range_argument(&mut self) -> Result<Option<RangeRef>, FormulaError> {
        let save = self.pos;
        if !matches!(self.peek(), Tok::Ident(_) | Tok::QuotedSheet(_)) || *self.peek_at(1) == Tok::LParen {
            return Ok(None);
        }
        let Ok((sheet, Some(a))) = self.reference() else {
            self.pos = save;
            return Ok(None);
        };
        if *self.peek() != Tok::Colon {
            self.pos = save;
            return Ok(None);
        }
        self.bump();
        let second_offset = self.offset();
        let (sheet2, b) = match self.reference()? {
            (s, Some(b)) => (s, b),
            (kw, None) => {
                return Err(FormulaError {
                    offset: second_offset,
                    expected: vec!["cell reference"],
                    found: format!("`{kw}`"),
                })
            }
        };
        let explicit_second = matches!(self.toks[self.pos.saturating_sub(2)].1, Tok::Bang);
        if explicit_second && !sheet2.eq_ignore_ascii_case(&sheet) {
            return Err(FormulaError {
                offset: second_offset,
                expected: vec!["cell on the same sheet"],
                found: format!("sheet `{sheet2}`"),
            });
        }
        if !matches!(self.peek(), Tok::Comma | Tok::RParen) {
            return Err(self.unexpected(&["`,`", "`)`"]));
        }
        Ok(Some(RangeRef::new(sheet, a, b)))
    }

    fn call(&mut self, name: String) -> Result<Expr, FormulaError> {
        let mut args = Vec::new();
        if *self.peek() == Tok::RParen {
            self.bump();
            return Ok(Expr::Call(name, args));
        }
        loop {
            let arg = match self.try_range_argument()? {
                Some(range) => Expr::Range(range),
                None => self.comparison()?,
            };
            args.push(arg);
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RParen => {
                    self.bump();
                    return Ok(Expr::Call(name, args));
                }
                _ => return Err(self.unexpected(&["`,`", "`)`"])),
            }
        }
    }
}

/// Parses a formula such as `=SUM(B2:B5)*2`. Unqualified references resolve
/// to `sheet`.
pub fn parse_formula(source: &str, sheet: &str) -> Result<Expr, FormulaError> {
    let Some(body) = source.strip_prefix('=') else {
        return Err(FormulaError {
            offset: 0,
            expected: vec!["`=`"],
            found: source.chars().next().map_or("end of input".into(), |c| format!("`{c}`")),
        });
    };
    let toks = Lexer { src: body, pos: 0 }
        .tokens()
        .map_err(|e| FormulaError { offset: e.offset + 1, ..e })?;
    let toks = toks.into_iter().map(|(o, t)| (o + 1, t)).collect();
    let mut parser = Parser { toks, pos: 0, sheet };
    let expr = parser.comparison()?;
    if *parser.peek() != Tok::End {
        return Err(parser.unexpected(&["operator", "end of input"]));
    }
    Ok(expr)
}
