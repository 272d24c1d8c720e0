//! Cell dependency graph: edges run from a precedent to each formula that
//! reads it. Ranges contribute one edge per covered cell.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use super::ast::references;
use crate::model::{CellAddress, CellContent, Coord, Workbook};

/// Sheet-case-insensitive identity of a cell. Orders by sheet, then row-major.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct NodeKey {
    pub sheet: String,
    pub coord: Coord,
}

impl NodeKey {
    pub fn of(addr: &CellAddress) -> Self {
        Self {
            sheet: addr.sheet.to_lowercase(),
            coord: addr.coord(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepGraph {
    /// Node addresses, sorted by `NodeKey`; index order is the tie-break order.
    nodes: Vec<CellAddress>,
    index: HashMap<NodeKey, usize>,
    is_formula: Vec<bool>,
    dependents: Vec<Vec<usize>>,
    precedents: Vec<Vec<usize>>,
    /// Formula cells in a valid evaluation order; excludes `blocked`.
    order: Vec<usize>,
    /// Nodes on a dependency cycle.
    on_cycle: Vec<bool>,
    /// Nodes on a cycle or downstream of one.
    blocked: Vec<bool>,
}

impl DepGraph {
    pub fn build(wb: &Workbook) -> Self {
        let mut refs: BTreeMap<NodeKey, BTreeSet<NodeKey>> = BTreeMap::new();
        let mut spelling: BTreeMap<NodeKey, CellAddress> = BTreeMap::new();
        for (addr, cell) in wb.cells() {
            let key = NodeKey::of(&addr);
            spelling.insert(key.clone(), addr);
            let CellContent::Formula(f) = &cell.content else {
                refs.entry(key).or_default();
                continue;
            };
            let mut targets = BTreeSet::new();
            for r in references(f.ast()) {
                let rk = NodeKey::of(&r);
                spelling
                    .entry(rk.clone())
                    .or_insert_with(|| wb.canonical_address(&r).unwrap_or(r));
                targets.insert(rk);
            }
            refs.insert(key, targets);
        }

        let nodes: Vec<CellAddress> = spelling.values().cloned().collect();
        let index: HashMap<NodeKey, usize> = spelling.keys().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        let n = nodes.len();
        let mut is_formula = vec![false; n];
        let mut dependents = vec![Vec::new(); n];
        let mut precedents = vec![Vec::new(); n];
        for (key, targets) in &refs {
            let d = index[key];
            if let Some(cell) = wb.cell(&nodes[d]) {
                is_formula[d] = matches!(cell.content, CellContent::Formula(_));
            }
            for t in targets {
                let p = index[t];
                dependents[p].push(d);
                precedents[d].push(p);
            }
        }

        let on_cycle = strongly_connected_cycles(&dependents);

        // Kahn's algorithm, smallest key first among ready nodes.
        let mut indegree: Vec<usize> = precedents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut emitted = vec![false; n];
        let mut order = Vec::new();
        while let Some(Reverse(i)) = ready.pop() {
            emitted[i] = true;
            if is_formula[i] {
                order.push(i);
            }
            for &d in &dependents[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.push(Reverse(d));
                }
            }
        }
        let blocked = emitted.iter().map(|e| !e).collect();

        Self {
            nodes,
            index,
            is_formula,
            dependents,
            precedents,
            order,
            on_cycle,
            blocked,
        }
    }

    fn idx(&self, addr: &CellAddress) -> Option<usize> {
        self.index.get(&NodeKey::of(addr)).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CellAddress> {
        self.nodes.iter()
    }

    pub fn contains(&self, addr: &CellAddress) -> bool {
        self.idx(addr).is_some()
    }

    /// All edges `(precedent, dependent)`.
    pub fn edges(&self) -> impl Iterator<Item = (&CellAddress, &CellAddress)> {
        self.dependents
            .iter()
            .enumerate()
            .flat_map(move |(p, ds)| ds.iter().map(move |&d| (&self.nodes[p], &self.nodes[d])))
    }

    pub fn dependents(&self, addr: &CellAddress) -> Vec<&CellAddress> {
        self.idx(addr)
            .map(|i| self.dependents[i].iter().map(|&d| &self.nodes[d]).collect())
            .unwrap_or_default()
    }

    pub fn precedents(&self, addr: &CellAddress) -> Vec<&CellAddress> {
        self.idx(addr)
            .map(|i| self.precedents[i].iter().map(|&p| &self.nodes[p]).collect())
            .unwrap_or_default()
    }

    /// Formula cells in evaluation order (cycle-affected cells excluded).
    pub fn topo_order(&self) -> impl Iterator<Item = &CellAddress> {
        self.order.iter().map(|&i| &self.nodes[i])
    }

    /// Cells lying on at least one dependency cycle.
    pub fn cycle_cells(&self) -> BTreeSet<CellAddress> {
        self.on_cycle
            .iter()
            .enumerate()
            .filter(|(_, c)| **c)
            .map(|(i, _)| self.nodes[i].clone())
            .collect()
    }

    /// Formula cells on a cycle or depending on one.
    pub fn blocked_cells(&self) -> impl Iterator<Item = &CellAddress> {
        (0..self.nodes.len())
            .filter(|&i| self.blocked[i] && self.is_formula[i])
            .map(|i| &self.nodes[i])
    }

    pub fn is_blocked(&self, addr: &CellAddress) -> bool {
        self.idx(addr).is_some_and(|i| self.blocked[i])
    }

    fn closure(&self, start: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = start.into_iter().collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(i) = stack.pop() {
            for &d in &self.dependents[i] {
                if !seen[d] {
                    seen[d] = true;
                    stack.push(d);
                }
            }
        }
        seen
    }

    /// `start` plus every cell transitively depending on it.
    pub fn downstream<'a>(&self, start: impl IntoIterator<Item = &'a CellAddress>) -> BTreeSet<CellAddress> {
        let seeds: Vec<usize> = start.into_iter().filter_map(|a| self.idx(a)).collect();
        let seen = self.closure(seeds);
        seen.iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(i, _)| self.nodes[i].clone())
            .collect()
    }

    /// Indices of the affected set, in the order they must be recomputed:
    /// evaluable formulas first (topological), then blocked formulas.
    pub(crate) fn affected<'a>(
        &self,
        dirty: impl IntoIterator<Item = &'a CellAddress>,
    ) -> (Vec<&CellAddress>, Vec<&CellAddress>, Vec<&CellAddress>) {
        let seeds: Vec<usize> = dirty.into_iter().filter_map(|a| self.idx(a)).collect();
        let seen = self.closure(seeds);
        let evaluable = self.order.iter().filter(|&&i| seen[i]).map(|&i| &self.nodes[i]).collect();
        let blocked = (0..self.nodes.len())
            .filter(|&i| seen[i] && self.blocked[i] && self.is_formula[i])
            .map(|i| &self.nodes[i])
            .collect();
        let all = (0..self.nodes.len()).filter(|&i| seen[i]).map(|i| &self.nodes[i]).collect();
        (evaluable, blocked, all)
    }
}

/// Iterative Tarjan; marks members of non-trivial SCCs and self-loops.
fn strongly_connected_cycles(adj: &[Vec<usize>]) -> Vec<bool> {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut on_cycle = vec![false; n];
    let mut next = 0;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        // (node, next edge position)
        let mut work = vec![(root, 0usize)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&(v, pos)) = work.last() {
            if pos < adj[v].len() {
                let w = adj[v][pos];
                work.last_mut().expect("non-empty").1 += 1;
                if index[w] == UNVISITED {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut members = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    members.push(w);
                    if w == v {
                        break;
                    }
                }
                let cyclic = members.len() > 1 || adj[v].contains(&v);
                if cyclic {
                    for m in members {
                        on_cycle[m] = true;
                    }
                }
            }
        }
    }
    on_cycle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_acyclic_workbook;

    fn a(s: &str) -> CellAddress {
        CellAddress::parse_in(s, "S").unwrap()
    }

    fn wb(cells: &[(&str, &str)]) -> Workbook {
        let mut w = Workbook::new("t");
        for (addr, input) in cells {
            w.set_input(&a(addr), input).unwrap();
        }
        w
    }

    #[test]
    fn simple_edges() {
        let g = DepGraph::build(&wb(&[("A1", "1"), ("A2", "2"), ("A3", "=A1+A2")]));
        let edges: Vec<(String, String)> = g.edges().map(|(p, d)| (p.to_string(), d.to_string())).collect();
        assert_eq!(
            edges,
            [("S!A1".to_string(), "S!A3".to_string()), ("S!A2".into(), "S!A3".into())]
        );
        assert!(g.cycle_cells().is_empty());
    }

    #[test]
    fn two_cell_cycle_is_witnessed() {
        let g = DepGraph::build(&wb(&[("A1", "=B1"), ("B1", "=A1"), ("C1", "=A1+1"), ("D1", "=5")]));
        assert_eq!(g.cycle_cells(), [a("A1"), a("B1")].into_iter().collect());
        let blocked: Vec<_> = g.blocked_cells().cloned().collect();
        assert_eq!(blocked, [a("A1"), a("B1"), a("C1")]);
        let order: Vec<_> = g.topo_order().cloned().collect();
        assert_eq!(order, [a("D1")]);
    }

    #[test]
    fn self_reference_is_a_cycle() {
        let g = DepGraph::build(&wb(&[("A1", "=A1+1")]));
        assert_eq!(g.cycle_cells(), [a("A1")].into_iter().collect());
    }

    #[test]
    fn range_expands_to_every_cell() {
        let g = DepGraph::build(&wb(&[("C1", "=SUM(A1:B2)")]));
        assert_eq!(g.precedents(&a("C1")).len(), 4);
        // empty precedents are still nodes, so later edits find their dependents
        assert_eq!(g.dependents(&a("B2")), [&a("C1")]);
    }

    #[test]
    fn sheet_names_match_case_insensitively() {
        let mut w = Workbook::new("t");
        w.set_input(&CellAddress::parse("Data!A1").unwrap(), "3").unwrap();
        w.set_input(&CellAddress::parse("Calc!A1").unwrap(), "=data!A1*2").unwrap();
        let g = DepGraph::build(&w);
        assert_eq!(
            g.dependents(&CellAddress::parse("DATA!A1").unwrap()),
            [&CellAddress::parse("Calc!A1").unwrap()]
        );
    }

    #[test]
    fn long_chain_does_not_overflow() {
        let mut w = Workbook::new("t");
        w.set_input(&a("A1"), "1").unwrap();
        for r in 2..=20_000u32 {
            w.set_input(&CellAddress::new("S", 1, r).unwrap(), &format!("=A{}+1", r - 1)).unwrap();
        }
        w.set_input(&a("A1"), "=A20000").unwrap();
        let g = DepGraph::build(&w);
        assert_eq!(g.cycle_cells().len(), 20_000);
    }

    /// Order oracle: every edge between two ordered cells goes forward, and
    /// every acyclic formula cell appears exactly once.
    #[test]
    fn random_acyclic_orders_validate() {
        for seed in 0..100 {
            let w = random_acyclic_workbook(seed, 100);
            let g = DepGraph::build(&w);
            let pos: HashMap<CellAddress, usize> =
                g.topo_order().cloned().enumerate().map(|(i, x)| (x, i)).collect();
            for (p, d) in g.edges() {
                if let (Some(pi), Some(di)) = (pos.get(p), pos.get(d)) {
                    assert!(pi < di, "seed {seed}: {p} -> {d} goes backwards");
                }
            }
            let formulas = w.cells().filter(|(_, c)| c.formula_source().is_some()).count();
            assert!(g.cycle_cells().is_empty(), "seed {seed}");
            assert_eq!(pos.len(), formulas, "seed {seed}");
        }
    }
}
