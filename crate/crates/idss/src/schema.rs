//! Common-schema files.
//!
//! ```toml
//! [[table]]
//! name = "tb_cpu_dynamic"
//! columns = [
//!     { name = "cpu_id", type = "integer", nullable = false },
//!     { name = "load", type = "real" },
//! ]
//! ```

use std::path::Path;

use idss_core::storage::{ColumnDef, TableSchema};
use idss_core::ColumnType;
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    #[serde(default = "yes")]
    pub nullable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    #[serde(default)]
    pub table: Vec<TableSpec>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = crate::read_file(path)?;
        toml::from_str(&text).map_err(|e| ConfigError::parse(path, e))
    }

    pub fn to_schemas(&self) -> Result<Vec<TableSchema>, ConfigError> {
        to_schemas(&self.table)
    }
}

pub fn to_schemas(tables: &[TableSpec]) -> Result<Vec<TableSchema>, ConfigError> {
    tables
        .iter()
        .enumerate()
        .map(|(t, spec)| {
            let cols = spec
                .columns
                .iter()
                .enumerate()
                .map(|(c, col)| {
                    let ty = ColumnType::parse(&col.ty).ok_or_else(|| {
                        ConfigError::field(
                            format!("table[{t}].columns[{c}].type"),
                            format!("unknown column type {:?}", col.ty),
                        )
                    })?;
                    let def = ColumnDef::new(col.name.clone(), ty);
                    Ok(if col.nullable { def } else { def.not_null() })
                })
                .collect::<Result<Vec<_>, ConfigError>>()?;
            TableSchema::new(spec.name.clone(), cols)
                .map_err(|e| ConfigError::field(format!("table[{t}]"), e.to_string()))
        })
        .collect()
}
