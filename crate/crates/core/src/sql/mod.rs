//! SQL subset: parsing, canonical rendering, classification, the avg rewrite
//! and decomposition of two-level nested queries.

mod ast;
mod parser;
mod plan;
mod render;

use alloc::string::String;

pub use ast::*;
pub use parser::parse;
pub use plan::{
    classify, decompose_nested, plan, rewrite_avg, AvgReconstruction, AvgSlot, Decomposition,
    ExecutablePlan, QueryKind, QueryPlan, SubqueryKind, SubqueryValue,
};

use crate::storage::StorageError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("nesting depth {depth} exceeds the two-level limit")]
    TooDeepNesting { depth: usize },
    #[error("parent query and subquery cannot both contain aggregate functions")]
    MixedAggregateNesting,
    #[error("subqueries must all be plain-field or all aggregate")]
    HeterogeneousSubqueries,
    #[error("subquery references parent column {column}")]
    CorrelatedSubquery { column: String },
    #[error("query is not nested")]
    NotNested,
    #[error("unbound subquery slot {0}")]
    UnboundSubquery(usize),
    #[error(transparent)]
    Catalog(#[from] StorageError),
}
