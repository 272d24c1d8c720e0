//! Formula language, dependency graph and recalculation.

mod ast;
mod eval;
mod graph;
mod parser;
mod recalc;

pub use ast::{references, BinaryOp, Expr, UnaryOp};
pub use eval::{evaluate, CellSource, FUNCTIONS};
pub use graph::DepGraph;
pub use parser::{parse_formula, FormulaError};
pub use recalc::{evaluate_all, recalculate, recalculate_pending, ChangeSet};
