//! Per-peer in-memory relational store over a common schema.

mod exec;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use sha2::{Digest, Sha256};

use crate::value::{ColumnType, Value};

pub use exec::{execute_local, filter_recordset};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("catalog must contain at least one table")]
    EmptyCatalog,
    #[error("duplicate table {0}")]
    DuplicateTable(String),
    #[error("duplicate column {column} in table {table}")]
    DuplicateColumn { table: String, column: String },
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("row has {found} values, table has {expected} columns")]
    ArityMismatch { expected: usize, found: usize },
    #[error("null value in non-nullable column {0}")]
    NullViolation(String),
    #[error("integer overflow in sum")]
    IntegerOverflow,
    #[error("injected local execution fault")]
    InjectedFault,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
    pub nullable: bool,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        ColumnDef { name: name.into(), ty, nullable: true }
    }

    pub fn not_null(mut self) -> Self {
        self.nullable = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnDef>) -> Result<Self, StorageError> {
        let name = name.into();
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|d| d.name.eq_ignore_ascii_case(&c.name)) {
                return Err(StorageError::DuplicateColumn { table: name, column: c.name.clone() });
            }
        }
        Ok(TableSchema { name, columns })
    }

    /// Case-insensitive column lookup.
    pub fn column(&self, name: &str) -> Option<(usize, &ColumnDef)> {
        self.columns.iter().enumerate().find(|(_, c)| c.name.eq_ignore_ascii_case(name))
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultColumn {
    pub name: String,
    pub ty: ColumnType,
}

/// Schema-tagged ordered rows: the unit of local results and of merging.
#[derive(Debug, Clone, PartialEq)]
pub struct Recordset {
    pub columns: Vec<ResultColumn>,
    pub rows: Vec<Row>,
}

impl Recordset {
    pub fn empty(columns: Vec<ResultColumn>) -> Self {
        Recordset { columns, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn same_schema(&self, other: &Recordset) -> bool {
        self.columns == other.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Row>,
}

/// The tables held by one peer.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    tables: Vec<Table>,
}

impl Catalog {
    pub fn new(schemas: Vec<TableSchema>) -> Result<Self, StorageError> {
        if schemas.is_empty() {
            return Err(StorageError::EmptyCatalog);
        }
        for (i, s) in schemas.iter().enumerate() {
            if schemas[..i].iter().any(|t| t.name.eq_ignore_ascii_case(&s.name)) {
                return Err(StorageError::DuplicateTable(s.name.clone()));
            }
            // re-validate columns for schemas built by hand
            TableSchema::new(s.name.clone(), s.columns.clone())?;
        }
        Ok(Catalog { tables: schemas.into_iter().map(|schema| Table { schema, rows: Vec::new() }).collect() })
    }

    /// Same schema, no rows.
    pub fn empty_like(&self) -> Catalog {
        Catalog {
            tables: self.tables.iter().map(|t| Table { schema: t.schema.clone(), rows: Vec::new() }).collect(),
        }
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Result<&Table, StorageError> {
        self.tables
            .iter()
            .find(|t| t.schema.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| StorageError::UnknownTable(name.to_string()))
    }

    pub fn schema(&self, name: &str) -> Result<&TableSchema, StorageError> {
        self.table(name).map(|t| &t.schema)
    }

    /// Validate and append `rows`; all-or-nothing.
    pub fn insert_rows(&mut self, table: &str, rows: Vec<Row>) -> Result<usize, StorageError> {
        let t = self
            .tables
            .iter_mut()
            .find(|t| t.schema.name.eq_ignore_ascii_case(table))
            .ok_or_else(|| StorageError::UnknownTable(table.to_string()))?;
        let mut accepted = Vec::with_capacity(rows.len());
        for row in rows {
            accepted.push(conform(&t.schema, row)?);
        }
        let n = accepted.len();
        t.rows.extend(accepted);
        Ok(n)
    }

    pub fn row_count(&self) -> usize {
        self.tables.iter().map(|t| t.rows.len()).sum()
    }

    /// Digest of the schema only. Peers of one overlay must agree on it.
    pub fn fingerprint(&self) -> String {
        let mut text = String::new();
        for t in &self.tables {
            let _ = write!(text, "{}(", t.schema.name);
            for c in &t.schema.columns {
                let _ = write!(text, "{}:{}:{},", c.name, c.ty, c.nullable);
            }
            text.push_str(");");
        }
        let digest = Sha256::digest(text.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

fn conform(schema: &TableSchema, row: Row) -> Result<Row, StorageError> {
    if row.len() != schema.columns.len() {
        return Err(StorageError::ArityMismatch { expected: schema.columns.len(), found: row.len() });
    }
    row.into_iter()
        .zip(&schema.columns)
        .map(|(v, c)| {
            if v.is_null() && !c.nullable {
                return Err(StorageError::NullViolation(c.name.clone()));
            }
            v.coerce_to(c.ty).map_err(|v| {
                StorageError::TypeMismatch(alloc::format!("{v} in {} column {}", c.ty, c.name))
            })
        })
        .collect()
}
