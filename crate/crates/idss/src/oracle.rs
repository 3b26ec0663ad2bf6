//! Centralized reference evaluator over the union of every peer's rows.
//!
//! Shares only the parser and the data containers with the distributed path:
//! predicates, aggregates and subqueries are evaluated directly on the AST,
//! with no avg rewrite, no partial states and no decomposition.

use std::cmp::Ordering;

use idss_core::sql::{
    parse, AggArg, AggFunc, CmpOp, ColumnRef, Expr, Operand, Projection, Select, SelectItem, SqlError,
};
use idss_core::storage::{Catalog, Recordset, ResultColumn, Row, TableSchema};
use idss_core::{ColumnType, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("{0}")]
    Type(String),
    #[error("subquery returned more than one value in scalar position")]
    NotScalar,
    #[error("integer overflow")]
    Overflow,
}

type Res<T> = Result<T, OracleError>;

pub fn oracle(sql: &str, db: &Catalog) -> Res<Recordset> {
    eval_select(&parse(sql)?, db)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tri {
    T,
    F,
    U,
}

impl Tri {
    fn not(self) -> Tri {
        match self {
            Tri::T => Tri::F,
            Tri::F => Tri::T,
            Tri::U => Tri::U,
        }
    }
}

struct Ctx<'a> {
    schema: &'a TableSchema,
    db: &'a Catalog,
}

fn eval_select(sel: &Select, db: &Catalog) -> Res<Recordset> {
    let table = db.tables().iter().find(|t| t.schema.name.eq_ignore_ascii_case(&sel.table));
    let table = table.ok_or_else(|| OracleError::UnknownTable(sel.table.clone()))?;
    let ctx = Ctx { schema: &table.schema, db };

    let mut kept: Vec<&Row> = Vec::new();
    for row in &table.rows {
        let keep = match &sel.predicate {
            None => true,
            Some(p) => eval(&ctx, p, row)? == Tri::T,
        };
        if keep {
            kept.push(row);
        }
    }

    match &sel.projection {
        Projection::Star => Ok(Recordset {
            columns: table.schema.columns.iter().map(|c| ResultColumn { name: c.name.clone(), ty: c.ty }).collect(),
            rows: kept.into_iter().cloned().collect(),
        }),
        Projection::Items(items) if items.iter().any(|i| matches!(i, SelectItem::Aggregate { .. })) => {
            let mut columns = Vec::new();
            let mut row = Vec::new();
            for item in items {
                let SelectItem::Aggregate { func, arg } = item else {
                    return Err(OracleError::Type("bare column next to an aggregate".into()));
                };
                let (v, ty) = aggregate(&ctx, *func, arg, &kept)?;
                columns.push(ResultColumn { name: item.to_string(), ty });
                row.push(v);
            }
            Ok(Recordset { columns, rows: vec![row] })
        }
        Projection::Items(items) => {
            let mut idx = Vec::new();
            let mut columns = Vec::new();
            for item in items {
                let SelectItem::Column(c) = item else { unreachable!() };
                let i = column_index(&ctx, c)?;
                idx.push(i);
                columns.push(ResultColumn { name: ctx.schema.columns[i].name.clone(), ty: ctx.schema.columns[i].ty });
            }
            let rows = kept.iter().map(|r| idx.iter().map(|i| r[*i].clone()).collect()).collect();
            Ok(Recordset { columns, rows })
        }
    }
}

fn column_index(ctx: &Ctx, c: &ColumnRef) -> Res<usize> {
    ctx.schema
        .columns
        .iter()
        .position(|d| d.name.eq_ignore_ascii_case(&c.name))
        .ok_or_else(|| OracleError::UnknownColumn(c.name.clone()))
}

fn aggregate(ctx: &Ctx, func: AggFunc, arg: &AggArg, rows: &[&Row]) -> Res<(Value, ColumnType)> {
    let col = match arg {
        AggArg::Star => return Ok((Value::Integer(rows.len() as i64), ColumnType::Integer)),
        AggArg::Column(c) => column_index(ctx, c)?,
    };
    let ty = ctx.schema.columns[col].ty;
    let vals: Vec<&Value> = rows.iter().map(|r| &r[col]).filter(|v| !v.is_null()).collect();
    let n = vals.len();
    Ok(match func {
        AggFunc::Count => (Value::Integer(n as i64), ColumnType::Integer),
        AggFunc::Sum | AggFunc::Avg => {
            let out_ty = if func == AggFunc::Avg { ColumnType::Real } else { ty };
            if n == 0 {
                return Ok((Value::Null, out_ty));
            }
            match ty {
                ColumnType::Integer => {
                    let mut s: i128 = 0;
                    for v in &vals {
                        if let Value::Integer(i) = v {
                            s += *i as i128;
                        }
                    }
                    if func == AggFunc::Avg {
                        (Value::Real(s as f64 / n as f64), out_ty)
                    } else {
                        (Value::Integer(i64::try_from(s).map_err(|_| OracleError::Overflow)?), out_ty)
                    }
                }
                ColumnType::Real => {
                    let s: f64 = vals.iter().filter_map(|v| if let Value::Real(r) = v { Some(*r) } else { None }).sum();
                    if func == AggFunc::Avg {
                        (Value::Real(s / n as f64), out_ty)
                    } else {
                        (Value::Real(s), out_ty)
                    }
                }
                other => return Err(OracleError::Type(format!("cannot sum {other} values"))),
            }
        }
        AggFunc::Min | AggFunc::Max => {
            let mut best: Option<&Value> = None;
            for v in vals {
                best = match best {
                    None => Some(v),
                    Some(b) => {
                        let o = compare(v, b)?.unwrap_or(Ordering::Equal);
                        let better = if func == AggFunc::Min { o == Ordering::Less } else { o == Ordering::Greater };
                        Some(if better { v } else { b })
                    }
                };
            }
            (best.cloned().unwrap_or(Value::Null), ty)
        }
    })
}

/// SQL comparison; `None` when either side is null.
fn compare(a: &Value, b: &Value) -> Res<Option<Ordering>> {
    let num = |v: &Value| match v {
        Value::Integer(i) | Value::Timestamp(i) => Some(*i as f64),
        Value::Real(r) => Some(*r),
        _ => None,
    };
    Ok(match (a, b) {
        (Value::Null, _) | (_, Value::Null) => None,
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        (Value::Integer(x) | Value::Timestamp(x), Value::Integer(y) | Value::Timestamp(y)) => Some(x.cmp(y)),
        _ => match (num(a), num(b)) {
            (Some(x), Some(y)) => x.partial_cmp(&y),
            _ => return Err(OracleError::Type(format!("cannot compare {a} with {b}"))),
        },
    })
}

fn operand(ctx: &Ctx, o: &Operand, row: &Row) -> Res<Value> {
    match o {
        Operand::Column(c) => Ok(row[column_index(ctx, c)?].clone()),
        Operand::Literal(v) => Ok(v.clone()),
        Operand::Subquery(s) => {
            let rs = eval_select(&s.query, ctx.db)?;
            match rs.rows.len() {
                0 => Ok(Value::Null),
                1 => Ok(rs.rows[0][0].clone()),
                _ => Err(OracleError::NotScalar),
            }
        }
    }
}

fn in_list(x: &Value, list: &[Value]) -> Res<Tri> {
    if list.is_empty() {
        return Ok(Tri::F);
    }
    let mut unknown = false;
    for v in list {
        match compare(x, v)? {
            Some(Ordering::Equal) => return Ok(Tri::T),
            None => unknown = true,
            _ => {}
        }
    }
    Ok(if unknown { Tri::U } else { Tri::F })
}

fn eval(ctx: &Ctx, e: &Expr, row: &Row) -> Res<Tri> {
    Ok(match e {
        Expr::And(a, b) => match (eval(ctx, a, row)?, eval(ctx, b, row)?) {
            (Tri::F, _) | (_, Tri::F) => Tri::F,
            (Tri::T, Tri::T) => Tri::T,
            _ => Tri::U,
        },
        Expr::Or(a, b) => match (eval(ctx, a, row)?, eval(ctx, b, row)?) {
            (Tri::T, _) | (_, Tri::T) => Tri::T,
            (Tri::F, Tri::F) => Tri::F,
            _ => Tri::U,
        },
        Expr::Not(a) => eval(ctx, a, row)?.not(),
        Expr::Compare { left, op, right } => {
            let (l, r) = (operand(ctx, left, row)?, operand(ctx, right, row)?);
            match compare(&l, &r)? {
                None => Tri::U,
                Some(o) => {
                    let holds = match op {
                        CmpOp::Eq => o == Ordering::Equal,
                        CmpOp::NotEq => o != Ordering::Equal,
                        CmpOp::Lt => o == Ordering::Less,
                        CmpOp::LtEq => o != Ordering::Greater,
                        CmpOp::Gt => o == Ordering::Greater,
                        CmpOp::GtEq => o != Ordering::Less,
                    };
                    if holds {
                        Tri::T
                    } else {
                        Tri::F
                    }
                }
            }
        }
        Expr::InList { operand: o, negated, list } => {
            let t = in_list(&operand(ctx, o, row)?, list)?;
            if *negated {
                t.not()
            } else {
                t
            }
        }
        Expr::InSubquery { operand: o, negated, subquery } => {
            let rs = eval_select(&subquery.query, ctx.db)?;
            let list: Vec<Value> = rs.rows.into_iter().filter_map(|r| r.into_iter().next()).collect();
            let t = in_list(&operand(ctx, o, row)?, &list)?;
            if *negated {
                t.not()
            } else {
                t
            }
        }
    })
}

/// Relative closeness for reals; exact equality for everything else.
pub fn values_match(a: &Value, b: &Value, rel_tol: f64) -> bool {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => x == y || (x - y).abs() <= rel_tol * x.abs().max(y.abs()),
        _ => a == b,
    }
}

fn sorted_rows(rs: &Recordset) -> Vec<&Row> {
    let mut v: Vec<&Row> = rs.rows.iter().collect();
    v.sort_by(|a, b| cmp_rows(a, b));
    v
}

fn cmp_rows(a: &Row, b: &Row) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
}

/// Same multiset of rows, reals within `rel_tol`.
pub fn multiset_eq(got: &Recordset, expect: &Recordset, rel_tol: f64) -> bool {
    if got.columns.len() != expect.columns.len() || got.rows.len() != expect.rows.len() {
        return false;
    }
    sorted_rows(got)
        .iter()
        .zip(sorted_rows(expect))
        .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_match(x, y, rel_tol)))
}

/// Every row of `got` occurs in `expect` at least as often (exact values).
pub fn is_sub_multiset(got: &Recordset, expect: &Recordset) -> bool {
    if got.columns.len() != expect.columns.len() {
        return false;
    }
    let (g, e) = (sorted_rows(got), sorted_rows(expect));
    let mut j = 0;
    for row in g {
        while j < e.len() && cmp_rows(e[j], row) == Ordering::Less {
            j += 1;
        }
        if j == e.len() || cmp_rows(e[j], row) != Ordering::Equal {
            return false;
        }
        j += 1;
    }
    true
}
