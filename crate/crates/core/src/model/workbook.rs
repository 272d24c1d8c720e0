use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::address::{CellAddress, Coord, RangeRef};
use super::image::RangeImage;
use super::value::{CellValue, ErrorCode};
use crate::engine::{parse_formula, Expr, FormulaError};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkbookId(pub String);

impl fmt::Display for WorkbookId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for WorkbookId {
    fn from(value: &str) -> Self {
        Self(value.to_string())
    }
}

impl From<String> for WorkbookId {
    fn from(value: String) -> Self {
        Self(value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkbookError {
    #[error("sheet `{0}` already exists")]
    DuplicateSheet(String),
    #[error("no sheet named `{0}`")]
    MissingSheet(String),
    #[error("invalid sheet name `{0}`")]
    InvalidSheetName(String),
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    source: String,
    ast: Expr,
}

impl Formula {
    /// Parses `source` (which must start with `=`) relative to `sheet`.
    pub fn parse(source: &str, sheet: &str) -> Result<Self, FormulaError> {
        let ast = parse_formula(source, sheet)?;
        Ok(Self {
            source: source.to_string(),
            ast,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellContent {
    Literal(CellValue),
    Formula(Formula),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub content: CellContent,
    pub computed: CellValue,
}

impl Cell {
    pub fn literal(value: CellValue) -> Self {
        Self {
            computed: value.clone(),
            content: CellContent::Literal(value),
        }
    }

    pub fn formula(formula: Formula) -> Self {
        Self {
            content: CellContent::Formula(formula),
            computed: CellValue::Blank,
        }
    }

    pub fn formula_source(&self) -> Option<&str> {
        match &self.content {
            CellContent::Formula(f) => Some(f.source()),
            CellContent::Literal(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sheet {
    pub name: String,
    pub cells: BTreeMap<Coord, Cell>,
}

impl Sheet {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cells: BTreeMap::new(),
        }
    }
}

/// A spreadsheet document. Cells absent from a sheet's map are Blank.
#[derive(Debug, Clone, PartialEq)]
pub struct Workbook {
    pub id: WorkbookId,
    sheets: Vec<Sheet>,
    pub properties: BTreeMap<String, String>,
    /// Pre-edit computed values of cells changed since the last recalculation.
    edited: BTreeMap<CellAddress, CellValue>,
    /// Sheets created since the last recalculation.
    added_sheets: Vec<String>,
}

impl Workbook {
    pub fn new(id: impl Into<WorkbookId>) -> Self {
        Self {
            id: id.into(),
            sheets: Vec::new(),
            properties: BTreeMap::new(),
            edited: BTreeMap::new(),
            added_sheets: Vec::new(),
        }
    }

    pub fn sheets(&self) -> &[Sheet] {
        &self.sheets
    }

    pub fn add_sheet(&mut self, name: &str) -> Result<&mut Sheet, WorkbookError> {
        if name.is_empty() || name.contains(['!', '\n', '\r']) {
            return Err(WorkbookError::InvalidSheetName(name.to_string()));
        }
        if self.sheet_index(name).is_some() {
            return Err(WorkbookError::DuplicateSheet(name.to_string()));
        }
        self.sheets.push(Sheet::new(name));
        self.added_sheets.push(name.to_string());
        Ok(self.sheets.last_mut().expect("just pushed"))
    }

    pub fn ensure_sheet(&mut self, name: &str) -> Result<&mut Sheet, WorkbookError> {
        match self.sheet_index(name) {
            Some(i) => Ok(&mut self.sheets[i]),
            None => self.add_sheet(name),
        }
    }

    fn sheet_index(&self, name: &str) -> Option<usize> {
        self.sheets
            .iter()
            .position(|s| s.name.eq_ignore_ascii_case(name))
    }

    pub fn sheet(&self, name: &str) -> Option<&Sheet> {
        self.sheet_index(name).map(|i| &self.sheets[i])
    }

    pub fn sheet_mut(&mut self, name: &str) -> Option<&mut Sheet> {
        self.sheet_index(name).map(move |i| &mut self.sheets[i])
    }

    /// The stored spelling of a sheet name, matched case-insensitively.
    pub fn canonical_sheet(&self, name: &str) -> Option<&str> {
        self.sheet(name).map(|s| s.name.as_str())
    }

    /// Rewrites `addr` to use the stored sheet spelling.
    pub fn canonical_address(&self, addr: &CellAddress) -> Option<CellAddress> {
        self.canonical_sheet(&addr.sheet)
            .map(|s| CellAddress::at(s, addr.coord()))
    }

    pub fn cell(&self, addr: &CellAddress) -> Option<&Cell> {
        self.sheet(&addr.sheet)?.cells.get(&addr.coord())
    }

    pub(crate) fn cell_mut(&mut self, addr: &CellAddress) -> Option<&mut Cell> {
        self.sheet_mut(&addr.sheet)?.cells.get_mut(&addr.coord())
    }

    /// Current computed value; Blank for empty cells, `#REF` for missing sheets.
    pub fn value(&self, addr: &CellAddress) -> CellValue {
        match self.sheet(&addr.sheet) {
            None => CellValue::Error(ErrorCode::Ref),
            Some(sheet) => sheet
                .cells
                .get(&addr.coord())
                .map(|c| c.computed.clone())
                .unwrap_or_default(),
        }
    }

    /// Stores a literal. Setting Blank removes the cell. Computed values of
    /// dependents are left stale until the engine recalculates.
    pub fn set_literal(&mut self, addr: &CellAddress, value: CellValue) -> Result<(), WorkbookError> {
        let sheet = self.ensure_sheet(&addr.sheet)?;
        let key = CellAddress::at(sheet.name.clone(), addr.coord());
        let previous = if value.is_blank() {
            sheet.cells.remove(&addr.coord())
        } else {
            sheet.cells.insert(addr.coord(), Cell::literal(value))
        };
        self.note_edit(key, previous.map(|c| c.computed));
        Ok(())
    }

    fn note_edit(&mut self, key: CellAddress, previous: Option<CellValue>) {
        self.edited.entry(key).or_insert(previous.unwrap_or_default());
    }

    /// Cells edited since the last recalculation, with their prior values.
    pub fn pending_edits(&self) -> &BTreeMap<CellAddress, CellValue> {
        &self.edited
    }

    /// Sheets created since the last recalculation. References into them
    /// read `#REF` until then.
    pub fn added_sheets(&self) -> &[String] {
        &self.added_sheets
    }

    /// Clears both the edit log and the added-sheet list.
    pub fn take_edits(&mut self) -> BTreeMap<CellAddress, CellValue> {
        self.added_sheets.clear();
        std::mem::take(&mut self.edited)
    }

    pub fn set_formula(&mut self, addr: &CellAddress, source: &str) -> Result<(), WorkbookError> {
        let sheet_name = self
            .canonical_sheet(&addr.sheet)
            .unwrap_or(&addr.sheet)
            .to_string();
        let formula = Formula::parse(source, &sheet_name)?;
        let sheet = self.ensure_sheet(&addr.sheet)?;
        let key = CellAddress::at(sheet.name.clone(), addr.coord());
        let mut cell = Cell::formula(formula);
        let previous = sheet.cells.get(&addr.coord()).map(|c| c.computed.clone());
        // keep showing the old value until the engine runs
        cell.computed = previous.clone().unwrap_or_default();
        sheet.cells.insert(addr.coord(), cell);
        self.note_edit(key, previous);
        Ok(())
    }

    /// Grid-editor entry: `=...` is a formula, anything else a literal.
    pub fn set_input(&mut self, addr: &CellAddress, input: &str) -> Result<(), WorkbookError> {
        if input.starts_with('=') && input.len() > 1 {
            self.set_formula(addr, input)
        } else {
            self.set_literal(addr, CellValue::from_input(input))
        }
    }

    /// All stored cells, sheet order then row-major.
    pub fn cells(&self) -> impl Iterator<Item = (CellAddress, &Cell)> {
        self.sheets.iter().flat_map(|s| {
            s.cells
                .iter()
                .map(move |(c, cell)| (CellAddress::at(s.name.clone(), *c), cell))
        })
    }

    pub fn range_values(&self, range: &RangeRef) -> Result<Vec<CellValue>, WorkbookError> {
        let sheet = self
            .sheet(range.sheet())
            .ok_or_else(|| WorkbookError::MissingSheet(range.sheet().to_string()))?;
        Ok(range
            .coords()
            .map(|c| sheet.cells.get(&c).map(|x| x.computed.clone()).unwrap_or_default())
            .collect())
    }

    /// Snapshot of the computed values under `range`.
    pub fn range_image(
        &self,
        range: &RangeRef,
        export_id: &str,
        version: u64,
    ) -> Result<RangeImage, WorkbookError> {
        let values = self.range_values(range)?;
        Ok(RangeImage::new(export_id, version, range.rows(), range.cols(), values)
            .expect("range_values yields rows*cols cells"))
    }

    /// Writes an image's values as literals into `target`. Returns the
    /// addresses written, row-major.
    pub fn write_image(
        &mut self,
        target: &RangeRef,
        values: &[CellValue],
    ) -> Result<Vec<CellAddress>, WorkbookError> {
        debug_assert_eq!(values.len(), target.len());
        let sheet_name = self.ensure_sheet(target.sheet())?.name.clone();
        let mut written = Vec::with_capacity(values.len());
        for (coord, value) in target.coords().zip(values) {
            let addr = CellAddress::at(sheet_name.clone(), coord);
            self.set_literal(&addr, value.clone())?;
            written.push(addr);
        }
        Ok(written)
    }
}
