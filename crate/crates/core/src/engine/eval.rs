//! Expression evaluation and the built-in function set.

use std::cmp::Ordering;

use super::ast::{BinaryOp, Expr, UnaryOp};
use crate::model::{parse_number, CellAddress, CellValue, ErrorCode, RangeRef};

pub const FUNCTIONS: &[&str] = &[
    "SUM", "AVERAGE", "MIN", "MAX", "COUNT", "IF", "ROUND", "ABS", "CONCAT",
];

/// Read access to computed cell values.
pub trait CellSource {
    fn value(&self, addr: &CellAddress) -> CellValue;
}

type Eval<T> = Result<T, ErrorCode>;

fn to_number(v: &CellValue) -> Eval<f64> {
    match v {
        CellValue::Blank => Ok(0.0),
        CellValue::Number(n) => Ok(*n),
        CellValue::Boolean(b) => Ok(if *b { 1.0 } else { 0.0 }),
        CellValue::Text(s) => parse_number(s.trim()).ok_or(ErrorCode::Value),
        CellValue::Error(e) => Err(*e),
    }
}

fn to_bool(v: &CellValue) -> Eval<bool> {
    match v {
        CellValue::Blank => Ok(false),
        CellValue::Number(n) => Ok(*n != 0.0),
        CellValue::Boolean(b) => Ok(*b),
        CellValue::Text(s) if s.eq_ignore_ascii_case("TRUE") => Ok(true),
        CellValue::Text(s) if s.eq_ignore_ascii_case("FALSE") => Ok(false),
        CellValue::Text(_) => Err(ErrorCode::Value),
        CellValue::Error(e) => Err(*e),
    }
}

fn to_text(v: &CellValue) -> Eval<String> {
    match v {
        CellValue::Error(e) => Err(*e),
        other => Ok(other.to_string()),
    }
}

fn number_result(n: f64) -> CellValue {
    CellValue::number(n)
}

pub fn evaluate(expr: &Expr, cells: &dyn CellSource) -> CellValue {
    match eval(expr, cells) {
        Ok(v) => v,
        Err(e) => CellValue::Error(e),
    }
}

fn eval(expr: &Expr, cells: &dyn CellSource) -> Eval<CellValue> {
    match expr {
        Expr::Number(n) => Ok(number_result(*n)),
        Expr::Text(s) => Ok(CellValue::Text(s.clone())),
        Expr::Bool(b) => Ok(CellValue::Boolean(*b)),
        Expr::Ref(addr) => match cells.value(addr) {
            CellValue::Error(e) => Err(e),
            v => Ok(v),
        },
        // ranges are only meaningful as aggregate arguments
        Expr::Range(_) => Err(ErrorCode::Value),
        Expr::Unary(op, child) => {
            let v = eval(child, cells)?;
            let n = to_number(&v)?;
            Ok(match op {
                UnaryOp::Neg => number_result(-n),
                UnaryOp::Plus => number_result(n),
            })
        }
        Expr::Binary(op, l, r) => {
            let left = eval(l, cells)?;
            let right = eval(r, cells)?;
            binary(*op, &left, &right)
        }
        Expr::Call(name, args) => call(name, args, cells),
    }
}

fn binary(op: BinaryOp, left: &CellValue, right: &CellValue) -> Eval<CellValue> {
    let arith = |f: fn(f64, f64) -> Eval<f64>| -> Eval<CellValue> {
        let a = to_number(left)?;
        let b = to_number(right)?;
        let n = f(a, b)?;
        match number_result(n) {
            CellValue::Error(e) => Err(e),
            v => Ok(v),
        }
    };
    match op {
        BinaryOp::Add => arith(|a, b| Ok(a + b)),
        BinaryOp::Sub => arith(|a, b| Ok(a - b)),
        BinaryOp::Mul => arith(|a, b| Ok(a * b)),
        BinaryOp::Div => arith(|a, b| if b == 0.0 { Err(ErrorCode::Div0) } else { Ok(a / b) }),
        BinaryOp::Pow => arith(|a, b| {
            if a == 0.0 && b < 0.0 {
                Err(ErrorCode::Div0)
            } else {
                Ok(a.powf(b))
            }
        }),
        BinaryOp::Concat => Ok(CellValue::Text(to_text(left)? + &to_text(right)?)),
        BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
            let ord = compare(left, right)?;
            let result = match op {
                BinaryOp::Eq => ord == Ordering::Equal,
                BinaryOp::Ne => ord != Ordering::Equal,
                BinaryOp::Lt => ord == Ordering::Less,
                BinaryOp::Le => ord != Ordering::Greater,
                BinaryOp::Gt => ord == Ordering::Greater,
                _ => ord != Ordering::Less,
            };
            Ok(CellValue::Boolean(result))
        }
    }
}

/// Mixed-type ordering: numbers < text < booleans; text compares
/// case-insensitively; Blank takes the other side's zero value.
fn compare(left: &CellValue, right: &CellValue) -> Eval<Ordering> {
    fn rank(v: &CellValue) -> u8 {
        match v {
            CellValue::Number(_) | CellValue::Blank => 0,
            CellValue::Text(_) => 1,
            CellValue::Boolean(_) => 2,
            CellValue::Error(_) => 3,
        }
    }
    if let Some(e) = left.error() {
        return Err(e);
    }
    if let Some(e) = right.error() {
        return Err(e);
    }
    let zero_like = |blank: &CellValue, other: &CellValue| -> CellValue {
        match (blank, other) {
            (CellValue::Blank, CellValue::Text(_)) => CellValue::Text(String::new()),
            (CellValue::Blank, CellValue::Boolean(_)) => CellValue::Boolean(false),
            (CellValue::Blank, _) => CellValue::Number(0.0),
            (v, _) => v.clone(),
        }
    };
    let l = zero_like(left, right);
    let r = zero_like(right, left);
    Ok(match (&l, &r) {
        (CellValue::Number(a), CellValue::Number(b)) => a.partial_cmp(b).unwrap_or(Ordering::Equal),
        (CellValue::Text(a), CellValue::Text(b)) => a.to_lowercase().cmp(&b.to_lowercase()),
        (CellValue::Boolean(a), CellValue::Boolean(b)) => a.cmp(b),
        _ => rank(&l).cmp(&rank(&r)),
    })
}

/// One argument item as seen by the aggregate functions.
enum Item {
    /// Value typed or computed directly in the formula.
    Scalar(CellValue),
    /// Value read through a reference or range.
    Cell(CellValue),
}

/// Flattens aggregate arguments in argument order, ranges row-major,
/// stopping at the first error.
fn collect(args: &[Expr], cells: &dyn CellSource) -> Eval<Vec<Item>> {
    let mut out = Vec::new();
    for arg in args {
        match arg {
            Expr::Range(range) => push_range(range, cells, &mut out)?,
            Expr::Ref(addr) => match cells.value(addr) {
                CellValue::Error(e) => return Err(e),
                v => out.push(Item::Cell(v)),
            },
            other => out.push(Item::Scalar(eval(other, cells)?)),
        }
    }
    Ok(out)
}

fn push_range(range: &RangeRef, cells: &dyn CellSource, out: &mut Vec<Item>) -> Eval<()> {
    for addr in range.cells() {
        match cells.value(&addr) {
            CellValue::Error(e) => return Err(e),
            v => out.push(Item::Cell(v)),
        }
    }
    Ok(())
}

/// Numbers contributed by aggregate arguments. Referenced text and booleans
/// are skipped; `blank_as_zero` decides whether referenced blanks count.
fn numbers(items: &[Item], blank_as_zero: bool) -> Eval<Vec<f64>> {
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Item::Cell(CellValue::Number(n)) => out.push(*n),
            Item::Cell(CellValue::Blank) if blank_as_zero => out.push(0.0),
            Item::Cell(_) => {}
            Item::Scalar(CellValue::Blank) if !blank_as_zero => {}
            Item::Scalar(v) => out.push(to_number(v)?),
        }
    }
    Ok(out)
}

fn scalar_arg(arg: &Expr, cells: &dyn CellSource) -> Eval<CellValue> {
    eval(arg, cells)
}

fn arity(args: &[Expr], min: usize, max: usize) -> Eval<()> {
    if (min..=max).contains(&args.len()) {
        Ok(())
    } else {
        Err(ErrorCode::Value)
    }
}

fn call(name: &str, args: &[Expr], cells: &dyn CellSource) -> Eval<CellValue> {
    match name {
        "SUM" => {
            arity(args, 1, 255)?;
            let items = collect(args, cells)?;
            let total: f64 = numbers(&items, true)?.iter().sum();
            finite(total)
        }
        "AVERAGE" => {
            arity(args, 1, 255)?;
            let items = collect(args, cells)?;
            let ns = numbers(&items, false)?;
            if ns.is_empty() {
                return Err(ErrorCode::Div0);
            }
            finite(ns.iter().sum::<f64>() / ns.len() as f64)
        }
        "MIN" | "MAX" => {
            arity(args, 1, 255)?;
            let items = collect(args, cells)?;
            let ns = numbers(&items, false)?;
            let pick = if name == "MIN" { f64::min } else { f64::max };
            Ok(number_result(ns.into_iter().reduce(pick).unwrap_or(0.0)))
        }
        "COUNT" => {
            arity(args, 1, 255)?;
            let items = collect(args, cells)?;
            let n = items
                .iter()
                .filter(|item| match item {
                    Item::Cell(v) => matches!(v, CellValue::Number(_)),
                    Item::Scalar(CellValue::Blank) => false,
                    Item::Scalar(v) => to_number(v).is_ok(),
                })
                .count();
            Ok(number_result(n as f64))
        }
        "IF" => {
            arity(args, 2, 3)?;
            let cond = to_bool(&scalar_arg(&args[0], cells)?)?;
            match (cond, args.get(2)) {
                (true, _) => scalar_arg(&args[1], cells),
                (false, Some(other)) => scalar_arg(other, cells),
                (false, None) => Ok(CellValue::Boolean(false)),
            }
        }
        "ROUND" => {
            arity(args, 1, 2)?;
            let x = to_number(&scalar_arg(&args[0], cells)?)?;
            let digits = match args.get(1) {
                Some(d) => to_number(&scalar_arg(d, cells)?)?.trunc(),
                None => 0.0,
            };
            finite(round_half_away(x, digits))
        }
        "ABS" => {
            arity(args, 1, 1)?;
            let x = to_number(&scalar_arg(&args[0], cells)?)?;
            finite(x.abs())
        }
        "CONCAT" => {
            arity(args, 1, 255)?;
            let items = collect(args, cells)?;
            let mut out = String::new();
            for item in &items {
                let (Item::Cell(v) | Item::Scalar(v)) = item;
                out.push_str(&to_text(v)?);
            }
            Ok(CellValue::Text(out))
        }
        _ => Err(ErrorCode::Name),
    }
}

fn finite(n: f64) -> Eval<CellValue> {
    match number_result(n) {
        CellValue::Error(e) => Err(e),
        v => Ok(v),
    }
}

/// Rounds half away from zero, first snapping the scaled value to 15
/// significant digits so `ROUND(2.675, 2)` gives 2.68 like a decimal
/// calculator would.
fn round_half_away(x: f64, digits: f64) -> f64 {
    if digits > 15.0 {
        return x;
    }
    if digits < -308.0 {
        return 0.0;
    }
    let snap = |v: f64| -> f64 { format!("{v:.14e}").parse().unwrap_or(v) };
    let factor = 10f64.powi(digits.abs() as i32);
    if digits >= 0.0 {
        snap(x * factor).round() / factor
    } else {
        snap(x / factor).round() * factor
    }
}
