//! Spreadsheet documents, addressing and canonical serialization.

mod address;
mod image;
mod value;
mod workbook;
pub mod xml;

pub use address::{column_index, column_name, AddressError, CellAddress, Coord, RangeRef, SheetName, MAX_COL, MAX_ROW};
pub use image::{ImageShapeError, RangeImage};
pub use value::{parse_number, CellValue, ErrorCode};
pub use workbook::{Cell, CellContent, Formula, Sheet, Workbook, WorkbookError, WorkbookId};
pub use xml::{decode_range_image, decode_workbook, encode_range_image, encode_workbook, XmlError};
