//! A1-notation cell addresses and rectangular ranges.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_COL: u32 = 16_384;
pub const MAX_ROW: u32 = 1_048_576;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid address `{input}`: {reason} (at `{token}`)")]
pub struct AddressError {
    pub input: String,
    pub token: String,
    pub reason: &'static str,
}

impl AddressError {
    fn new(input: &str, token: &str, reason: &'static str) -> Self {
        Self {
            input: input.to_string(),
            token: token.to_string(),
            reason,
        }
    }
}

/// Position inside a sheet. Ordering is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub fn new(col: u32, row: u32) -> Option<Self> {
        ((1..=MAX_COL).contains(&col) && (1..=MAX_ROW).contains(&row)).then_some(Self { row, col })
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", column_name(self.col), self.row)
    }
}

/// Fully qualified cell address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellAddress {
    pub sheet: String,
    pub col: u32,
    pub row: u32,
}

impl CellAddress {
    pub fn new(sheet: impl Into<String>, col: u32, row: u32) -> Option<Self> {
        let sheet = sheet.into();
        if sheet.is_empty() {
            return None;
        }
        Coord::new(col, row).map(|_| Self { sheet, col, row })
    }

    pub fn at(sheet: impl Into<String>, coord: Coord) -> Self {
        Self {
            sheet: sheet.into(),
            col: coord.col,
            row: coord.row,
        }
    }

    pub fn coord(&self) -> Coord {
        Coord {
            row: self.row,
            col: self.col,
        }
    }

    /// Parses `Sheet!B2`; the sheet prefix is mandatory.
    pub fn parse(text: &str) -> Result<Self, AddressError> {
        let (sheet, rest) = split_sheet(text)?;
        let sheet = sheet.ok_or_else(|| AddressError::new(text, text, "missing sheet name"))?;
        let coord = parse_coord(text, rest)?;
        Ok(Self::at(sheet, coord))
    }

    /// Parses `B2` or `Sheet!B2`, using `default_sheet` when unqualified.
    pub fn parse_in(text: &str, default_sheet: &str) -> Result<Self, AddressError> {
        let (sheet, rest) = split_sheet(text)?;
        let coord = parse_coord(text, rest)?;
        Ok(Self::at(sheet.unwrap_or_else(|| default_sheet.to_string()), coord))
    }
}

impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}!{}", SheetName(&self.sheet), self.coord())
    }
}

impl FromStr for CellAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// Rectangular range on one sheet. Corners are normalized on construction,
/// so every value of this type satisfies `top_left <= bottom_right`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RangeRef {
    sheet: String,
    top_left: Coord,
    bottom_right: Coord,
}

impl RangeRef {
    pub fn new(sheet: impl Into<String>, a: Coord, b: Coord) -> Self {
        Self {
            sheet: sheet.into(),
            top_left: Coord {
                row: a.row.min(b.row),
                col: a.col.min(b.col),
            },
            bottom_right: Coord {
                row: a.row.max(b.row),
                col: a.col.max(b.col),
            },
        }
    }

    pub fn single(addr: &CellAddress) -> Self {
        Self::new(addr.sheet.clone(), addr.coord(), addr.coord())
    }

    pub fn sheet(&self) -> &str {
        &self.sheet
    }

    pub fn top_left(&self) -> CellAddress {
        CellAddress::at(self.sheet.clone(), self.top_left)
    }

    pub fn bottom_right(&self) -> CellAddress {
        CellAddress::at(self.sheet.clone(), self.bottom_right)
    }

    pub fn rows(&self) -> u32 {
        self.bottom_right.row - self.top_left.row + 1
    }

    pub fn cols(&self) -> u32 {
        self.bottom_right.col - self.top_left.col + 1
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.rows() as usize * self.cols() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major enumeration of the covered coordinates.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        let (tl, br) = (self.top_left, self.bottom_right);
        (tl.row..=br.row).flat_map(move |row| (tl.col..=br.col).map(move |col| Coord { row, col }))
    }

    /// Row-major enumeration of the covered cells.
    pub fn cells(&self) -> Vec<CellAddress> {
        self.coords()
            .map(|c| CellAddress::at(self.sheet.clone(), c))
            .collect()
    }

    pub fn contains(&self, addr: &CellAddress) -> bool {
        addr.sheet.eq_ignore_ascii_case(&self.sheet) && self.contains_coord(addr.coord())
    }

    pub fn contains_coord(&self, c: Coord) -> bool {
        (self.top_left.row..=self.bottom_right.row).contains(&c.row)
            && (self.top_left.col..=self.bottom_right.col).contains(&c.col)
    }

    pub fn overlaps(&self, other: &RangeRef) -> bool {
        self.sheet.eq_ignore_ascii_case(&other.sheet)
            && self.top_left.row <= other.bottom_right.row
            && other.top_left.row <= self.bottom_right.row
            && self.top_left.col <= other.bottom_right.col
            && other.top_left.col <= self.bottom_right.col
    }

    /// Coordinate at `(row, col)` offset from the top-left corner.
    pub fn offset(&self, row: u32, col: u32) -> Coord {
        Coord {
            row: self.top_left.row + row,
            col: self.top_left.col + col,
        }
    }

    pub fn parse(text: &str) -> Result<Self, AddressError> {
        let (sheet, rest) = split_sheet(text)?;
        let sheet = sheet.ok_or_else(|| AddressError::new(text, text, "missing sheet name"))?;
        Self::parse_corners(text, sheet, rest)
    }

    pub fn parse_in(text: &str, default_sheet: &str) -> Result<Self, AddressError> {
        let (sheet, rest) = split_sheet(text)?;
        Self::parse_corners(text, sheet.unwrap_or_else(|| default_sheet.to_string()), rest)
    }

    fn parse_corners(input: &str, sheet: String, rest: &str) -> Result<Self, AddressError> {
        let (a, b) = match rest.split_once(':') {
            Some((a, b)) => (parse_coord(input, a)?, parse_coord(input, b)?),
            None => {
                let c = parse_coord(input, rest)?;
                (c, c)
            }
        };
        Ok(Self::new(sheet, a, b))
    }
}

impl fmt::Display for RangeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}!{}:{}",
            SheetName(&self.sheet),
            self.top_left,
            self.bottom_right
        )
    }
}

impl FromStr for RangeRef {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl TryFrom<String> for RangeRef {
    type Error = AddressError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<RangeRef> for String {
    fn from(value: RangeRef) -> Self {
        value.to_string()
    }
}

/// Renders a sheet name, quoting it when it is not a plain identifier.
pub struct SheetName<'a>(pub &'a str);

impl fmt::Display for SheetName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if needs_quotes(self.0) {
            write!(f, "'{}'", self.0.replace('\'', "''"))
        } else {
            f.write_str(self.0)
        }
    }
}

fn needs_quotes(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return true,
    }
    if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return true;
    }
    // A name that itself reads as a cell reference would be ambiguous.
    parse_coord(name, name).is_ok()
}

/// Splits an optional `Sheet!` / `'Quoted sheet'!` prefix from the rest.
fn split_sheet(text: &str) -> Result<(Option<String>, &str), AddressError> {
    if text.is_empty() {
        return Err(AddressError::new(text, "", "empty address"));
    }
    if let Some(quoted) = text.strip_prefix('\'') {
        let mut name = String::new();
        let mut chars = quoted.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if c == '\'' {
                if let Some((_, '\'')) = chars.peek() {
                    chars.next();
                    name.push('\'');
                    continue;
                }
                let rest = &quoted[i + 1..];
                let rest = rest
                    .strip_prefix('!')
                    .ok_or_else(|| AddressError::new(text, rest, "expected `!` after sheet name"))?;
                if name.is_empty() {
                    return Err(AddressError::new(text, "''", "empty sheet name"));
                }
                return Ok((Some(name), rest));
            }
            name.push(c);
        }
        return Err(AddressError::new(text, text, "unterminated sheet quote"));
    }
    match text.rsplit_once('!') {
        Some(("", _)) => Err(AddressError::new(text, "!", "empty sheet name")),
        Some((sheet, rest)) => Ok((Some(sheet.to_string()), rest)),
        None => Ok((None, text)),
    }
}

fn parse_coord(input: &str, token: &str) -> Result<Coord, AddressError> {
    let split = token
        .find(|c: char| !c.is_ascii_alphabetic())
        .unwrap_or(token.len());
    let (letters, digits) = token.split_at(split);
    if letters.is_empty() {
        return Err(AddressError::new(input, token, "missing column letters"));
    }
    let col = column_index(letters)
        .filter(|c| *c <= MAX_COL)
        .ok_or_else(|| AddressError::new(input, letters, "column out of range"))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(AddressError::new(input, token, "malformed row number"));
    }
    let row: u32 = digits
        .parse()
        .map_err(|_| AddressError::new(input, digits, "row out of range"))?;
    if row == 0 {
        return Err(AddressError::new(input, digits, "rows start at 1"));
    }
    if row > MAX_ROW {
        return Err(AddressError::new(input, digits, "row out of range"));
    }
    Ok(Coord { row, col })
}

/// Bijective base-26 column index: `A` = 1, `Z` = 26, `AA` = 27.
pub fn column_index(letters: &str) -> Option<u32> {
    if letters.is_empty() || letters.len() > 7 {
        return None;
    }
    letters.bytes().try_fold(0u32, |acc, b| {
        if !b.is_ascii_alphabetic() {
            return None;
        }
        acc.checked_mul(26)?
            .checked_add(u32::from(b.to_ascii_uppercase() - b'A' + 1))
    })
}

pub fn column_name(mut col: u32) -> String {
    let mut out = Vec::new();
    while col > 0 {
        let rem = (col - 1) % 26;
        out.push(b'A' + rem as u8);
        col = (col - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}
