//! Scalar values and column types shared by storage, the SQL layer and merging.

use alloc::string::String;
use core::cmp::Ordering;
use core::fmt;

/// Declared type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Integer,
    Real,
    Text,
    /// Milliseconds on the virtual clock.
    Timestamp,
}

impl ColumnType {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Integer => "integer",
            ColumnType::Real => "real",
            ColumnType::Text => "text",
            ColumnType::Timestamp => "timestamp",
        }
    }

    pub fn parse(s: &str) -> Option<ColumnType> {
        let ty = match s.to_ascii_lowercase().as_str() {
            "integer" | "int" => ColumnType::Integer,
            "real" | "float" | "double" => ColumnType::Real,
            "text" | "string" | "varchar" => ColumnType::Text,
            "timestamp" => ColumnType::Timestamp,
            _ => return None,
        };
        Some(ty)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operands of a comparison have incompatible types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incomparable;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Timestamp(i64),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Type of a non-null value.
    pub fn column_type(&self) -> Option<ColumnType> {
        match self {
            Value::Null => None,
            Value::Integer(_) => Some(ColumnType::Integer),
            Value::Real(_) => Some(ColumnType::Real),
            Value::Text(_) => Some(ColumnType::Text),
            Value::Timestamp(_) => Some(ColumnType::Timestamp),
        }
    }

    /// Numeric view used by sums and averages.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) | Value::Timestamp(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Coerce a value into a column of type `ty`. Integers widen into real and
    /// timestamp columns; everything else must match exactly.
    pub fn coerce_to(self, ty: ColumnType) -> Result<Value, Value> {
        match (self, ty) {
            (Value::Null, _) => Ok(Value::Null),
            (Value::Integer(i), ColumnType::Integer) => Ok(Value::Integer(i)),
            (Value::Integer(i), ColumnType::Real) => Ok(Value::Real(i as f64)),
            (Value::Integer(i), ColumnType::Timestamp) => Ok(Value::Timestamp(i)),
            (Value::Real(r), ColumnType::Real) => Ok(Value::Real(r)),
            (Value::Text(s), ColumnType::Text) => Ok(Value::Text(s)),
            (Value::Timestamp(t), ColumnType::Timestamp) => Ok(Value::Timestamp(t)),
            (other, _) => Err(other),
        }
    }

    /// SQL comparison. `Ok(None)` when either side is null.
    pub fn sql_cmp(&self, other: &Value) -> Result<Option<Ordering>, Incomparable> {
        use Value::*;
        match (self, other) {
            (Null, _) | (_, Null) => Ok(None),
            (Text(a), Text(b)) => Ok(Some(a.as_str().cmp(b.as_str()))),
            (Text(_), _) | (_, Text(_)) => Err(Incomparable),
            (Integer(a) | Timestamp(a), Integer(b) | Timestamp(b)) => Ok(Some(a.cmp(b))),
            (a, b) => {
                let (x, y) = (a.as_f64().ok_or(Incomparable)?, b.as_f64().ok_or(Incomparable)?);
                Ok(x.partial_cmp(&y))
            }
        }
    }

    /// Total order used for canonical sorting (nulls first, then numbers,
    /// then text). Not SQL semantics.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Integer(_) | Value::Real(_) | Value::Timestamp(_) => 1,
                Value::Text(_) => 2,
            }
        }
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            (a, b) if rank(a) == 1 && rank(b) == 1 => {
                let (x, y) = (a.as_f64().unwrap_or(0.0), b.as_f64().unwrap_or(0.0));
                x.total_cmp(&y).then_with(|| variant_tag(a).cmp(&variant_tag(b)))
            }
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }
}

fn variant_tag(v: &Value) -> u8 {
    match v {
        Value::Null => 0,
        Value::Integer(_) => 1,
        Value::Real(_) => 2,
        Value::Timestamp(_) => 3,
        Value::Text(_) => 4,
    }
}

impl fmt::Display for Value {
    /// Renders as a SQL literal.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) | Value::Timestamp(i) => write!(f, "{i}"),
            // Debug keeps the shortest round-trip form and always has a '.' or 'e'.
            Value::Real(r) => write!(f, "{r:?}"),
            Value::Text(s) => {
                f.write_str("'")?;
                for c in s.chars() {
                    if c == '\'' {
                        f.write_str("''")?;
                    } else {
                        write!(f, "{c}")?;
                    }
                }
                f.write_str("'")
            }
        }
    }
}
