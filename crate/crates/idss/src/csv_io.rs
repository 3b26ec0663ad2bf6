//! CSV ingestion and result output. Header row of column names, RFC 4180
//! quoting, an empty field is null.

use std::io::{Read, Write};

use idss_core::storage::{Recordset, Row, TableSchema};
use idss_core::{ColumnType, Value};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Invalid { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn invalid(line: u64, message: impl Into<String>) -> CsvError {
    CsvError::Invalid { line, message: message.into() }
}

/// Parse one field as `ty`. Timestamps are integer milliseconds.
pub fn parse_value(field: &str, ty: ColumnType) -> Result<Value, String> {
    if field.is_empty() {
        return Ok(Value::Null);
    }
    match ty {
        ColumnType::Integer => field.trim().parse().map(Value::Integer).map_err(|_| format!("{field:?} is not an integer")),
        ColumnType::Timestamp => {
            field.trim().parse().map(Value::Timestamp).map_err(|_| format!("{field:?} is not a millisecond timestamp"))
        }
        ColumnType::Real => match field.trim().parse::<f64>() {
            Ok(r) if r.is_finite() => Ok(Value::Real(r)),
            _ => Err(format!("{field:?} is not a finite real")),
        },
        ColumnType::Text => Ok(Value::Text(field.to_string())),
    }
}

/// Read rows for `schema`. Header columns may come in any order but must
/// name every column exactly once.
pub fn read_rows<R: Read>(schema: &TableSchema, input: R) -> Result<Vec<Row>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut pos = vec![usize::MAX; schema.columns.len()];
    for (i, h) in headers.iter().enumerate() {
        let (c, _) = schema
            .column(h.trim())
            .ok_or_else(|| invalid(1, format!("unknown column {h:?} for table {}", schema.name)))?;
        if pos[c] != usize::MAX {
            return Err(invalid(1, format!("column {h:?} given twice")));
        }
        pos[c] = i;
    }
    if let Some(missing) = pos.iter().position(|p| *p == usize::MAX) {
        return Err(invalid(1, format!("missing column {:?}", schema.columns[missing].name)));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(pos.len());
        for (def, &i) in schema.columns.iter().zip(&pos) {
            let v = parse_value(rec.get(i).unwrap_or(""), def.ty)
                .map_err(|m| invalid(line, format!("column {}: {m}", def.name)))?;
            if v.is_null() && !def.nullable {
                return Err(invalid(line, format!("column {} is not nullable", def.name)));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Field text used in CSV output. Reals keep a decimal point so the type is
/// visible; null is the empty field.
pub fn format_value(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Integer(i) | Value::Timestamp(i) => i.to_string(),
        Value::Real(r) => format!("{r:?}"),
        Value::Text(s) => s.clone(),
    }
}

pub fn write_recordset<W: Write>(rs: &Recordset, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(rs.columns.iter().map(|c| c.name.as_str()))?;
    for row in &rs.rows {
        w.write_record(row.iter().map(format_value))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows<W: Write>(schema: &TableSchema, rows: &[Row], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    for row in rows {
        w.write_record(row.iter().map(format_value))?;
    }
    w.flush()?;
    Ok(())
}
