use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::value::Value;

/// A single-table `SELECT`.
#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub projection: Projection,
    pub table: String,
    pub predicate: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Star,
    Items(Vec<SelectItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Column(ColumnRef),
    Aggregate { func: AggFunc, arg: AggArg },
}

impl SelectItem {
    pub fn is_aggregate(&self) -> bool {
        matches!(self, SelectItem::Aggregate { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub fn bare(name: impl Into<String>) -> Self {
        ColumnRef { qualifier: None, name: name.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggArg {
    Star,
    Column(ColumnRef),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Sum,
    Avg,
    Min,
    Max,
    Count,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Avg => "avg",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Count => "count",
        }
    }

    pub fn from_name(s: &str) -> Option<AggFunc> {
        let f = match s.to_ascii_lowercase().as_str() {
            "sum" => AggFunc::Sum,
            "avg" => AggFunc::Avg,
            "min" => AggFunc::Min,
            "max" => AggFunc::Max,
            "count" => AggFunc::Count,
            _ => return None,
        };
        Some(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::NotEq => "<>",
            CmpOp::Lt => "<",
            CmpOp::LtEq => "<=",
            CmpOp::Gt => ">",
            CmpOp::GtEq => ">=",
        }
    }

    pub fn holds(self, ord: core::cmp::Ordering) -> bool {
        use core::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::NotEq => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::LtEq => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::GtEq => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Compare { left: Operand, op: CmpOp, right: Operand },
    InList { operand: Operand, negated: bool, list: Vec<Value> },
    InSubquery { operand: Operand, negated: bool, subquery: Subquery },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(ColumnRef),
    Literal(Value),
    /// Scalar subquery.
    Subquery(Subquery),
}

/// A nested `SELECT` occupying hole `slot` of its parent. Slots are numbered
/// in order of appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Subquery {
    pub slot: usize,
    pub query: Box<Select>,
}

impl Select {
    pub fn has_aggregates(&self) -> bool {
        match &self.projection {
            Projection::Star => false,
            Projection::Items(items) => items.iter().any(SelectItem::is_aggregate),
        }
    }

    /// Subqueries directly embedded in this query's predicate, in slot order.
    pub fn subqueries(&self) -> Vec<&Subquery> {
        let mut out = Vec::new();
        if let Some(p) = &self.predicate {
            p.collect_subqueries(&mut out);
        }
        out.sort_by_key(|s| s.slot);
        out
    }

    /// Nesting depth: 1 for a flat query.
    pub fn depth(&self) -> usize {
        1 + self.subqueries().iter().map(|s| s.query.depth()).max().unwrap_or(0)
    }
}

impl Expr {
    pub fn collect_subqueries<'a>(&'a self, out: &mut Vec<&'a Subquery>) {
        match self {
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_subqueries(out);
                b.collect_subqueries(out);
            }
            Expr::Not(e) => e.collect_subqueries(out),
            Expr::Compare { left, right, .. } => {
                left.collect_subquery(out);
                right.collect_subquery(out);
            }
            Expr::InList { operand, .. } => operand.collect_subquery(out),
            Expr::InSubquery { operand, subquery, .. } => {
                operand.collect_subquery(out);
                out.push(subquery);
            }
        }
    }

    pub fn contains_subquery(&self) -> bool {
        let mut v = Vec::new();
        self.collect_subqueries(&mut v);
        !v.is_empty()
    }

    /// Column references outside any nested subquery.
    pub fn collect_columns<'a>(&'a self, out: &mut Vec<&'a ColumnRef>) {
        match self {
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
            Expr::Not(e) => e.collect_columns(out),
            Expr::Compare { left, right, .. } => {
                left.collect_column(out);
                right.collect_column(out);
            }
            Expr::InList { operand, .. } | Expr::InSubquery { operand, .. } => {
                operand.collect_column(out)
            }
        }
    }

    /// Split a tree of `AND`s into its conjuncts, left to right.
    pub fn into_conjuncts(self) -> Vec<Expr> {
        match self {
            Expr::And(a, b) => {
                let mut v = a.into_conjuncts();
                v.extend(b.into_conjuncts());
                v
            }
            other => alloc::vec![other],
        }
    }

    /// Left-deep `AND` of `parts`; `None` when empty.
    pub fn conjoin(parts: Vec<Expr>) -> Option<Expr> {
        parts.into_iter().reduce(|acc, e| Expr::And(Box::new(acc), Box::new(e)))
    }
}

impl Operand {
    fn collect_subquery<'a>(&'a self, out: &mut Vec<&'a Subquery>) {
        if let Operand::Subquery(s) = self {
            out.push(s);
        }
    }

    fn collect_column<'a>(&'a self, out: &mut Vec<&'a ColumnRef>) {
        if let Operand::Column(c) = self {
            out.push(c);
        }
    }
}
