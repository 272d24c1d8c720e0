//! Seeded random workbook generators shared by tests across the workspace.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::model::{column_name, CellAddress, Workbook};

const COLS: u32 = 6;
const ROWS: u32 = 20;

/// Random formula text generator over a fixed grid of candidate cells.
pub struct FormulaGen<'a> {
    pub rng: &'a mut StdRng,
    /// Candidate precedents, as A1 text (possibly sheet-qualified).
    pub refs: Vec<String>,
    /// Candidate ranges as A1 text; only used as function arguments.
    pub ranges: Vec<String>,
}

impl FormulaGen<'_> {
    pub fn formula(&mut self) -> String {
        format!("={}", self.expr(3))
    }

    fn leaf(&mut self) -> String {
        let r = self.rng.gen_range(0..10);
        if r < 6 && !self.refs.is_empty() {
            let i = self.rng.gen_range(0..self.refs.len());
            return self.refs[i].clone();
        }
        match self.rng.gen_range(0..5) {
            0 => format!("{}", self.rng.gen_range(0..20)),
            1 => format!("{}.5", self.rng.gen_range(0..10)),
            2 => ["\"a\"", "\"B\"", "\"\""][self.rng.gen_range(0..3)].to_string(),
            3 => ["TRUE", "FALSE"][self.rng.gen_range(0..2)].to_string(),
            _ => "0".to_string(),
        }
    }

    fn arg(&mut self, depth: u32) -> String {
        if !self.ranges.is_empty() && self.rng.gen_bool(0.4) {
            let i = self.rng.gen_range(0..self.ranges.len());
            self.ranges[i].clone()
        } else {
            self.expr(depth)
        }
    }

    fn expr(&mut self, depth: u32) -> String {
        if depth == 0 {
            return self.leaf();
        }
        match self.rng.gen_range(0..10) {
            0..=2 => self.leaf(),
            3..=5 => {
                let ops = ["+", "-", "*", "/", "^", "&", "=", "<>", "<", "<=", ">", ">="];
                let op = ops[self.rng.gen_range(0..ops.len())];
                format!("{}{op}{}", self.expr(depth - 1), self.expr(depth - 1))
            }
            6 => format!("-({})", self.expr(depth - 1)),
            7 => {
                let f = ["SUM", "AVERAGE", "MIN", "MAX", "COUNT", "CONCAT"][self.rng.gen_range(0..6)];
                let n = self.rng.gen_range(1..=3);
                let args: Vec<String> = (0..n).map(|_| self.arg(depth - 1)).collect();
                format!("{f}({})", args.join(","))
            }
            8 => format!(
                "IF({},{},{})",
                self.expr(depth - 1),
                self.expr(depth - 1),
                self.expr(depth - 1)
            ),
            _ => match self.rng.gen_range(0..3) {
                0 => format!("ROUND({},{})", self.expr(depth - 1), self.rng.gen_range(0..3)),
                1 => format!("abs({})", self.expr(depth - 1)),
                _ => format!("NOPE({})", self.expr(depth - 1)),
            },
        }
    }
}

fn a1(col: u32, row: u32) -> String {
    format!("{}{row}", column_name(col))
}

fn literal(rng: &mut StdRng) -> String {
    match rng.gen_range(0..8) {
        0 => "hello".into(),
        1 => "TRUE".into(),
        2 => format!("-{}", rng.gen_range(1..50)),
        3 => format!("{}.25", rng.gen_range(0..9)),
        _ => format!("{}", rng.gen_range(0..100)),
    }
}

fn random_ranges(rng: &mut StdRng, sheet: Option<&str>, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| {
            let (c1, r1) = (rng.gen_range(1..=COLS), rng.gen_range(1..=ROWS));
            let (c2, r2) = (rng.gen_range(1..=COLS), rng.gen_range(1..=ROWS));
            let text = format!("{}:{}", a1(c1, r1), a1(c2, r2));
            match sheet {
                Some(s) => format!("{s}!{text}"),
                None => text,
            }
        })
        .collect()
}

/// Up to `cells` random cells over sheets `S` and `T`. Formulas may form
/// cycles, reference the missing sheet `Gone`, and call unknown functions.
pub fn random_workbook(seed: u64, cells: usize) -> Workbook {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut wb = Workbook::new(format!("wb-{seed}"));
    let mut refs: Vec<String> = Vec::new();
    for c in 1..=COLS {
        for r in 1..=ROWS / 2 {
            refs.push(a1(c, r));
        }
    }
    refs.push("T!A1".into());
    refs.push("T!B2".into());
    refs.push("Gone!A1".into());
    let mut ranges = random_ranges(&mut rng, None, 4);
    ranges.extend(random_ranges(&mut rng, Some("T"), 1));
    for _ in 0..cells {
        let sheet = if rng.gen_bool(0.8) { "S" } else { "T" };
        let addr = CellAddress::new(sheet, rng.gen_range(1..=COLS), rng.gen_range(1..=ROWS / 2))
            .expect("in bounds");
        let input = if rng.gen_bool(0.55) {
            let mut gen = FormulaGen { rng: &mut rng, refs: refs.clone(), ranges: ranges.clone() };
            gen.formula()
        } else {
            literal(&mut rng)
        };
        wb.set_input(&addr, &input).expect("generated input parses");
    }
    wb.take_edits();
    wb
}

/// Single sheet `S`; every formula only references cells before it in
/// row-major order, so the dependency graph is acyclic.
pub fn random_acyclic_workbook(seed: u64, cells: usize) -> Workbook {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut wb = Workbook::new(format!("acyclic-{seed}"));
    let mut slots: Vec<(u32, u32)> = (1..=ROWS)
        .flat_map(|r| (1..=COLS).map(move |c| (r, c)))
        .collect();
    slots.truncate(cells.min(slots.len()));
    for (i, &(r, c)) in slots.iter().enumerate() {
        let addr = CellAddress::new("S", c, r).expect("in bounds");
        let earlier: Vec<String> = slots[..i].iter().map(|&(r, c)| a1(c, r)).collect();
        let input = if i > 0 && rng.gen_bool(0.6) {
            // ranges entirely above the current row
            let ranges = if r > 1 {
                let top = rng.gen_range(1..r);
                let bottom = rng.gen_range(top..r);
                vec![format!("{}:{}", a1(rng.gen_range(1..=COLS), top), a1(COLS, bottom))]
            } else {
                Vec::new()
            };
            FormulaGen { rng: &mut rng, refs: earlier, ranges }.formula()
        } else {
            literal(&mut rng)
        };
        wb.set_input(&addr, &input).expect("generated input parses");
    }
    wb.take_edits();
    wb
}

/// A random edit input for `random_workbook`-style grids.
pub fn random_edit(rng: &mut StdRng, wb: &Workbook) -> (CellAddress, String) {
    let sheet = if rng.gen_bool(0.8) { "S" } else { "T" };
    let addr = CellAddress::new(sheet, rng.gen_range(1..=COLS), rng.gen_range(1..=ROWS / 2))
        .expect("in bounds");
    let input = match rng.gen_range(0..10) {
        0 => String::new(),
        1..=4 => literal(rng),
        _ => {
            let mut refs: Vec<String> = wb.cells().map(|(a, _)| a.to_string()).collect();
            refs.push("B3".into());
            let ranges = random_ranges(rng, None, 2);
            FormulaGen { rng, refs, ranges }.formula()
        }
    };
    (addr, input)
}
