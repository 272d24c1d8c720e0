use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::DepGraph;
use crate::model::{Coord, RangeRef, Workbook};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkbookRole {
    PureExporter,
    PureImporter,
    /// Exports and imports with no dependency between them.
    ExporterAndImporter,
    Intermediate,
    Detached,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("range {range} refers to sheet `{sheet}`, which the workbook does not have")]
pub struct IntegrityError {
    pub range: String,
    pub sheet: String,
}

type Key = (String, Coord);

fn keys(range: &RangeRef) -> impl Iterator<Item = Key> + '_ {
    let sheet = range.sheet().to_lowercase();
    range.coords().map(move |c| (sheet.clone(), c))
}

fn check(wb: &Workbook, ranges: &[RangeRef]) -> Result<(), IntegrityError> {
    match ranges.iter().find(|r| wb.sheet(r.sheet()).is_none()) {
        Some(r) => Err(IntegrityError {
            range: r.to_string(),
            sheet: r.sheet().to_string(),
        }),
        None => Ok(()),
    }
}

/// Pairs `(import index, export index)` where some cell of the export is an
/// imported cell or depends on one through formulas.
pub fn flows(
    wb: &Workbook,
    exports: &[RangeRef],
    imports: &[RangeRef],
) -> Result<BTreeSet<(usize, usize)>, IntegrityError> {
    check(wb, exports)?;
    check(wb, imports)?;
    let graph = DepGraph::build(wb);
    let export_keys: Vec<BTreeSet<Key>> = exports.iter().map(|r| keys(r).collect()).collect();
    let mut out = BTreeSet::new();
    for (i, target) in imports.iter().enumerate() {
        let mut reach: BTreeSet<Key> = keys(target).collect();
        let cells = target.cells();
        for a in graph.downstream(cells.iter()) {
            reach.insert((a.sheet.to_lowercase(), a.coord()));
        }
        for (e, ek) in export_keys.iter().enumerate() {
            if !reach.is_disjoint(ek) {
                out.insert((i, e));
            }
        }
    }
    Ok(out)
}

pub fn classify_workbook(
    wb: &Workbook,
    exports: &[RangeRef],
    imports: &[RangeRef],
) -> Result<WorkbookRole, IntegrityError> {
    let linked = !flows(wb, exports, imports)?.is_empty();
    Ok(match (exports.is_empty(), imports.is_empty()) {
        _ if linked => WorkbookRole::Intermediate,
        (true, true) => WorkbookRole::Detached,
        (false, true) => WorkbookRole::PureExporter,
        (true, false) => WorkbookRole::PureImporter,
        (false, false) => WorkbookRole::ExporterAndImporter,
    })
}
