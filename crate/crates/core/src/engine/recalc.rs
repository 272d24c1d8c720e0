use std::collections::{BTreeMap, BTreeSet};

use super::eval::{evaluate, CellSource};
use super::graph::DepGraph;
use crate::model::{CellAddress, CellContent, CellValue, ErrorCode, Workbook};

impl CellSource for Workbook {
    fn value(&self, addr: &CellAddress) -> CellValue {
        Workbook::value(self, addr)
    }
}

/// Cells whose computed value changed, with `(old, new)` values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChangeSet {
    pub changes: BTreeMap<CellAddress, (CellValue, CellValue)>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    pub fn contains(&self, addr: &CellAddress) -> bool {
        self.changes.contains_key(addr)
    }

    pub fn addresses(&self) -> impl Iterator<Item = &CellAddress> {
        self.changes.keys()
    }
}

fn compute(wb: &mut Workbook, addr: &CellAddress) {
    let value = match wb.cell(addr).map(|c| &c.content) {
        Some(CellContent::Formula(f)) => evaluate(f.ast(), wb),
        Some(CellContent::Literal(v)) => v.clone(),
        None => return,
    };
    if let Some(cell) = wb.cell_mut(addr) {
        cell.computed = value;
    }
}

fn mark_cycle(wb: &mut Workbook, addr: &CellAddress) {
    if let Some(cell) = wb.cell_mut(addr) {
        cell.computed = CellValue::Error(ErrorCode::Cycle);
    }
}

/// Evaluates every cell from scratch. Cells on a cycle, and everything
/// downstream of one, compute `#CYCLE`.
pub fn evaluate_all(wb: &mut Workbook) {
    wb.take_edits();
    let graph = DepGraph::build(wb);
    let literals: Vec<CellAddress> = wb
        .cells()
        .filter(|(_, c)| matches!(c.content, CellContent::Literal(_)))
        .map(|(a, _)| a)
        .collect();
    for addr in &literals {
        compute(wb, addr);
    }
    for addr in graph.topo_order() {
        compute(wb, addr);
    }
    for addr in graph.blocked_cells() {
        mark_cycle(wb, addr);
    }
}

/// Recomputes `dirty` and everything downstream of it, in dependency order.
/// The workbook must have been fully evaluated before the edits to `dirty`.
pub fn recalculate<'a>(wb: &mut Workbook, dirty: impl IntoIterator<Item = &'a CellAddress>) -> ChangeSet {
    let added: Vec<String> = wb.added_sheets().to_vec();
    let edits = wb.take_edits();
    let dirty: BTreeSet<CellAddress> = dirty
        .into_iter()
        .map(|a| wb.canonical_address(a).unwrap_or_else(|| a.clone()))
        .collect();
    let graph = DepGraph::build(wb);
    // cells on a new sheet stop reading #REF even if nobody wrote them
    let appeared: Vec<CellAddress> = graph
        .nodes()
        .filter(|a| added.iter().any(|s| s.eq_ignore_ascii_case(&a.sheet)))
        .cloned()
        .collect();
    let (evaluable, blocked, all) = graph.affected(dirty.iter().chain(&appeared));

    let mut touched: BTreeSet<CellAddress> = all.into_iter().cloned().collect();
    touched.extend(dirty.iter().cloned());
    let old: BTreeMap<CellAddress, CellValue> = touched
        .iter()
        .map(|a| {
            let before = edits.get(a).cloned().unwrap_or_else(|| wb.value(a));
            (a.clone(), before)
        })
        .collect();

    let evaluable: Vec<CellAddress> = evaluable.into_iter().cloned().collect();
    let blocked: Vec<CellAddress> = blocked.into_iter().cloned().collect();
    for addr in &dirty {
        compute(wb, addr);
    }
    for addr in &evaluable {
        compute(wb, addr);
    }
    for addr in &blocked {
        mark_cycle(wb, addr);
    }

    let changes = old
        .into_iter()
        .filter_map(|(addr, before)| {
            let after = wb.value(&addr);
            (before != after).then_some((addr, (before, after)))
        })
        .collect();
    ChangeSet { changes }
}

/// Recalculates every cell edited since the last engine run.
pub fn recalculate_pending(wb: &mut Workbook) -> ChangeSet {
    let dirty: Vec<CellAddress> = wb.pending_edits().keys().cloned().collect();
    recalculate(wb, dirty.iter())
}
