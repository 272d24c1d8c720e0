use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    Div0,
    Cycle,
    Ref,
    Value,
    Name,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Div0 => "DIV0",
            ErrorCode::Cycle => "CYCLE",
            ErrorCode::Ref => "REF",
            ErrorCode::Value => "VALUE",
            ErrorCode::Name => "NAME",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.as_str())
    }
}

impl FromStr for ErrorCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "DIV0" => ErrorCode::Div0,
            "CYCLE" => ErrorCode::Cycle,
            "REF" => ErrorCode::Ref,
            "VALUE" => ErrorCode::Value,
            "NAME" => ErrorCode::Name,
            _ => return Err(()),
        })
    }
}

/// A computed or literal cell value.
///
/// `Number` is always finite and never negative zero; build numbers through
/// [`CellValue::number`] to keep that true.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum CellValue {
    #[default]
    Blank,
    Number(f64),
    Text(String),
    Boolean(bool),
    Error(ErrorCode),
}

impl CellValue {
    /// Wraps a float, mapping non-finite results to `#VALUE`.
    pub fn number(n: f64) -> CellValue {
        if n.is_finite() {
            // -0.0 and 0.0 would otherwise encode differently
            CellValue::Number(if n == 0.0 { 0.0 } else { n })
        } else {
            CellValue::Error(ErrorCode::Value)
        }
    }

    pub fn text(s: impl Into<String>) -> CellValue {
        CellValue::Text(s.into())
    }

    pub fn is_blank(&self) -> bool {
        matches!(self, CellValue::Blank)
    }

    pub fn error(&self) -> Option<ErrorCode> {
        match self {
            CellValue::Error(e) => Some(*e),
            _ => None,
        }
    }

    /// Interprets user input the way a grid editor would: numbers, booleans,
    /// `#CODE` errors, otherwise text. Empty input is Blank.
    pub fn from_input(input: &str) -> CellValue {
        let trimmed = input.trim();
        if trimmed.is_empty() {
            return CellValue::Blank;
        }
        if let Some(n) = parse_number(trimmed) {
            return CellValue::number(n);
        }
        if trimmed.eq_ignore_ascii_case("true") {
            return CellValue::Boolean(true);
        }
        if trimmed.eq_ignore_ascii_case("false") {
            return CellValue::Boolean(false);
        }
        if let Some(code) = trimmed.strip_prefix('#').and_then(|c| c.parse().ok()) {
            return CellValue::Error(code);
        }
        CellValue::Text(input.to_string())
    }
}

/// Text rendering used by `&`, CONCAT and the grid view.
impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Blank => Ok(()),
            CellValue::Number(n) => write!(f, "{n}"),
            CellValue::Text(s) => f.write_str(s),
            CellValue::Boolean(true) => f.write_str("TRUE"),
            CellValue::Boolean(false) => f.write_str("FALSE"),
            CellValue::Error(e) => write!(f, "{e}"),
        }
    }
}

/// Strict decimal number syntax (no hex, no `inf`/`nan`).
pub fn parse_number(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let mut saw_digit = false;
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.peek() {
        if c.is_ascii_digit() {
            saw_digit = true;
            chars.next();
        } else {
            break;
        }
    }
    if chars.peek() == Some(&'.') {
        chars.next();
        while let Some(c) = chars.peek() {
            if c.is_ascii_digit() {
                saw_digit = true;
                chars.next();
            } else {
                break;
            }
        }
    }
    if !saw_digit {
        return None;
    }
    if matches!(chars.peek(), Some('e' | 'E')) {
        chars.next();
        if matches!(chars.peek(), Some('+' | '-')) {
            chars.next();
        }
        let mut exp_digit = false;
        while let Some(c) = chars.peek() {
            if c.is_ascii_digit() {
                exp_digit = true;
                chars.next();
            } else {
                break;
            }
        }
        if !exp_digit {
            return None;
        }
    }
    if chars.next().is_some() {
        return None;
    }
    s.parse::<f64>().ok().filter(|n| n.is_finite())
}
