//! Spreadsheet documents, the formula engine, and the rules for composing
//! workbooks through exported and imported ranges.

pub mod composition;
pub mod engine;
pub mod model;

#[cfg(any(test, feature = "testutil"))]
pub mod testutil;
