use alloc::boxed::Box;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{Catalog, Recordset, ResultColumn, Row, StorageError, TableSchema};
use crate::sql::{AggArg, AggFunc, CmpOp, ColumnRef, ExecutablePlan, Expr, Operand, Projection, SelectItem};
use crate::value::{ColumnType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    fn and(self, o: Truth) -> Truth {
        match (self, o) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

    fn or(self, o: Truth) -> Truth {
        match (self, o) {
            (Truth::True, _) | (_, Truth::True) => Truth::True,
            (Truth::False, Truth::False) => Truth::False,
            _ => Truth::Unknown,
        }
    }

    fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }
}

enum Arg<'a> {
    Col(usize),
    Lit(&'a Value),
}

/// Predicate with column references resolved to row positions.
enum Bound<'a> {
    And(Box<Bound<'a>>, Box<Bound<'a>>),
    Or(Box<Bound<'a>>, Box<Bound<'a>>),
    Not(Box<Bound<'a>>),
    Cmp(Arg<'a>, CmpOp, Arg<'a>),
    In(Arg<'a>, bool, &'a [Value]),
}

fn bind<'a>(
    expr: &'a Expr,
    resolve: &dyn Fn(&ColumnRef) -> Result<usize, StorageError>,
) -> Result<Bound<'a>, StorageError> {
    let arg = |o: &'a Operand| -> Result<Arg<'a>, StorageError> {
        match o {
            Operand::Column(c) => resolve(c).map(Arg::Col),
            Operand::Literal(v) => Ok(Arg::Lit(v)),
            Operand::Subquery(_) => Err(StorageError::TypeMismatch("unbound subquery".to_string())),
        }
    };
    Ok(match expr {
        Expr::And(a, b) => Bound::And(Box::new(bind(a, resolve)?), Box::new(bind(b, resolve)?)),
        Expr::Or(a, b) => Bound::Or(Box::new(bind(a, resolve)?), Box::new(bind(b, resolve)?)),
        Expr::Not(e) => Bound::Not(Box::new(bind(e, resolve)?)),
        Expr::Compare { left, op, right } => Bound::Cmp(arg(left)?, *op, arg(right)?),
        Expr::InList { operand, negated, list } => Bound::In(arg(operand)?, *negated, list),
        Expr::InSubquery { .. } => {
            return Err(StorageError::TypeMismatch("unbound subquery".to_string()))
        }
    })
}

fn cmp(a: &Value, b: &Value) -> Result<Option<Ordering>, StorageError> {
    a.sql_cmp(b).map_err(|_| StorageError::TypeMismatch(alloc::format!("cannot compare {a} with {b}")))
}

fn eval(b: &Bound<'_>, row: &[Value]) -> Result<Truth, StorageError> {
    let get = |a: &Arg<'_>| -> Value {
        match a {
            Arg::Col(i) => row[*i].clone(),
            Arg::Lit(v) => (*v).clone(),
        }
    };
    Ok(match b {
        Bound::And(x, y) => {
            let l = eval(x, row)?;
            if l == Truth::False {
                Truth::False
            } else {
                l.and(eval(y, row)?)
            }
        }
        Bound::Or(x, y) => {
            let l = eval(x, row)?;
            if l == Truth::True {
                Truth::True
            } else {
                l.or(eval(y, row)?)
            }
        }
        Bound::Not(x) => eval(x, row)?.not(),
        Bound::Cmp(l, op, r) => match cmp(&get(l), &get(r))? {
            None => Truth::Unknown,
            Some(ord) if op.holds(ord) => Truth::True,
            Some(_) => Truth::False,
        },
        Bound::In(a, negated, list) => {
            let v = get(a);
            let t = if v.is_null() {
                Truth::Unknown
            } else {
                let mut t = Truth::False;
                for item in list.iter() {
                    match cmp(&v, item)? {
                        Some(Ordering::Equal) => {
                            t = Truth::True;
                            break;
                        }
                        None => t = Truth::Unknown,
                        Some(_) => {}
                    }
                }
                t
            };
            if *negated {
                t.not()
            } else {
                t
            }
        }
    })
}

fn resolver(schema: &TableSchema) -> impl Fn(&ColumnRef) -> Result<usize, StorageError> + '_ {
    move |c: &ColumnRef| {
        if let Some(q) = &c.qualifier {
            if !q.eq_ignore_ascii_case(&schema.name) {
                return Err(StorageError::UnknownTable(q.clone()));
            }
        }
        schema.column(&c.name).map(|(i, _)| i).ok_or_else(|| StorageError::UnknownColumn(c.to_string()))
    }
}

/// Run `plan` against this peer's data only.
pub fn execute_local(catalog: &Catalog, plan: &ExecutablePlan) -> Result<Recordset, StorageError> {
    let select = &plan.select;
    let table = catalog.table(&select.table)?;
    let schema = &table.schema;
    let resolve = resolver(schema);

    let predicate = select.predicate.as_ref().map(|p| bind(p, &resolve)).transpose()?;
    let mut selected: Vec<&Row> = Vec::new();
    for row in &table.rows {
        let keep = match &predicate {
            Some(p) => eval(p, row)? == Truth::True,
            None => true,
        };
        if keep {
            selected.push(row);
        }
    }

    let items = match &select.projection {
        Projection::Star => {
            let columns = schema
                .columns
                .iter()
                .map(|c| ResultColumn { name: c.name.clone(), ty: c.ty })
                .collect();
            return Ok(Recordset { columns, rows: selected.into_iter().cloned().collect() });
        }
        Projection::Items(items) => items,
    };

    if select.has_aggregates() {
        let mut columns = Vec::with_capacity(items.len());
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let SelectItem::Aggregate { func, arg } = item else {
                return Err(StorageError::TypeMismatch("bare column in aggregate query".to_string()));
            };
            let (ty, value) = aggregate(*func, arg, schema, &resolve, &selected)?;
            columns.push(ResultColumn { name: item.to_string(), ty });
            out.push(value);
        }
        return Ok(Recordset { columns, rows: alloc::vec![out] });
    }

    let mut idx = Vec::with_capacity(items.len());
    let mut columns = Vec::with_capacity(items.len());
    for item in items {
        if let SelectItem::Column(c) = item {
            let i = resolve(c)?;
            idx.push(i);
            columns.push(ResultColumn { name: schema.columns[i].name.clone(), ty: schema.columns[i].ty });
        }
    }
    let rows = selected.into_iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect();
    Ok(Recordset { columns, rows })
}

fn aggregate(
    func: AggFunc,
    arg: &AggArg,
    schema: &TableSchema,
    resolve: &dyn Fn(&ColumnRef) -> Result<usize, StorageError>,
    rows: &[&Row],
) -> Result<(ColumnType, Value), StorageError> {
    let col = match arg {
        AggArg::Star => {
            if func != AggFunc::Count {
                return Err(StorageError::TypeMismatch(alloc::format!("{}(*)", func.name())));
            }
            return Ok((ColumnType::Integer, Value::Integer(rows.len() as i64)));
        }
        AggArg::Column(c) => resolve(c)?,
    };
    let ty = schema.columns[col].ty;
    let values = rows.iter().map(|r| &r[col]).filter(|v| !v.is_null());
    match func {
        AggFunc::Count => Ok((ColumnType::Integer, Value::Integer(values.count() as i64))),
        AggFunc::Sum | AggFunc::Avg => {
            let mut int_sum: Option<i64> = None;
            let mut real_sum: Option<f64> = None;
            let mut n = 0i64;
            for v in values {
                n += 1;
                match v {
                    Value::Integer(i) => {
                        int_sum = Some(int_sum.unwrap_or(0).checked_add(*i).ok_or(StorageError::IntegerOverflow)?)
                    }
                    Value::Real(r) => real_sum = Some(real_sum.unwrap_or(0.0) + r),
                    other => {
                        return Err(StorageError::TypeMismatch(alloc::format!(
                            "{}() over {other}",
                            func.name()
                        )))
                    }
                }
            }
            let sum = match (ty, int_sum, real_sum) {
                (_, None, None) => Value::Null,
                (ColumnType::Integer, Some(i), None) => Value::Integer(i),
                (_, i, r) => Value::Real(i.map(|i| i as f64).unwrap_or(0.0) + r.unwrap_or(0.0)),
            };
            if func == AggFunc::Sum {
                Ok((ty, sum))
            } else {
                let avg = match sum.as_f64() {
                    Some(s) if n > 0 => Value::Real(s / n as f64),
                    _ => Value::Null,
                };
                Ok((ColumnType::Real, avg))
            }
        }
        AggFunc::Min | AggFunc::Max => {
            let mut best: Option<&Value> = None;
            for v in values {
                best = match best {
                    None => Some(v),
                    Some(b) => {
                        let ord = cmp(v, b)?.unwrap_or(Ordering::Equal);
                        let better = if func == AggFunc::Min { ord == Ordering::Less } else { ord == Ordering::Greater };
                        Some(if better { v } else { b })
                    }
                };
            }
            Ok((ty, best.cloned().unwrap_or(Value::Null)))
        }
    }
}

/// Keep rows of `rs` satisfying `predicate`; columns resolve by name.
pub fn filter_recordset(rs: Recordset, predicate: &Expr) -> Result<Recordset, StorageError> {
    let names = rs.column_names();
    let resolve = |c: &ColumnRef| -> Result<usize, StorageError> {
        names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(&c.name))
            .ok_or_else(|| StorageError::UnknownColumn(c.to_string()))
    };
    let bound = bind(predicate, &resolve)?;
    let mut keep = Vec::with_capacity(rs.rows.len());
    for row in &rs.rows {
        keep.push(eval(&bound, row)? == Truth::True);
    }
    drop(bound);
    let Recordset { columns, rows } = rs;
    let rows = rows.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect();
    Ok(Recordset { columns, rows })
}
