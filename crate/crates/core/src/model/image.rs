use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::CellValue;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("image has {actual} cells, expected {rows}x{cols}")]
pub struct ImageShapeError {
    pub rows: u32,
    pub cols: u32,
    pub actual: usize,
}

/// Versioned snapshot of an exported range: computed values only, row-major.
///
/// Version 0 marks a locally computed image that has not been committed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeImage {
    export_id: String,
    version: u64,
    rows: u32,
    cols: u32,
    cells: Vec<CellValue>,
}

impl RangeImage {
    pub fn new(
        export_id: impl Into<String>,
        version: u64,
        rows: u32,
        cols: u32,
        cells: Vec<CellValue>,
    ) -> Result<Self, ImageShapeError> {
        if rows == 0 || cols == 0 || cells.len() != rows as usize * cols as usize {
            return Err(ImageShapeError {
                rows,
                cols,
                actual: cells.len(),
            });
        }
        Ok(Self {
            export_id: export_id.into(),
            version,
            rows,
            cols,
            cells,
        })
    }

    pub fn export_id(&self) -> &str {
        &self.export_id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.rows, self.cols)
    }

    pub fn cells(&self) -> &[CellValue] {
        &self.cells
    }

    pub fn get(&self, row: u32, col: u32) -> Option<&CellValue> {
        (row < self.rows && col < self.cols)
            .then(|| &self.cells[(row * self.cols + col) as usize])
    }

    pub fn with_identity(mut self, export_id: impl Into<String>, version: u64) -> Self {
        self.export_id = export_id.into();
        self.version = version;
        self
    }

    /// Same dimensions and values, ignoring export id and version.
    pub fn same_content(&self, other: &RangeImage) -> bool {
        self.dims() == other.dims() && self.cells == other.cells
    }
}
