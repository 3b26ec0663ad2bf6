//! Best-effort merging of intermediate results under a decaying TTL.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::overlay::{PeerId, ResultPayload};
use crate::query_state::Uqi;
use crate::sql::{AggFunc, Decomposition, ExecutablePlan, SqlError, SubqueryValue};
use crate::storage::{filter_recordset, Recordset, ResultColumn, StorageError};
use crate::value::{ColumnType, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MergeError {
    #[error("recordset schemas differ")]
    SchemaMismatch,
    #[error("aggregate signatures differ")]
    SignatureMismatch,
    #[error("nothing to merge")]
    Empty,
    #[error("integer overflow while combining sums")]
    Overflow,
    #[error("subquery in slot {0} produced no result")]
    MissingSubqueryResult(usize),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Per-hop TTL multiplier `num/den`, strictly between 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecayFactor {
    num: u64,
    den: u64,
}

impl DecayFactor {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (num > 0 && den > num).then_some(DecayFactor { num, den })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for DecayFactor {
    fn default() -> Self {
        DecayFactor { num: 3, den: 4 }
    }
}

impl fmt::Display for DecayFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for DecayFactor {
    type Err = String;

    /// Accepts `num/den` or a decimal such as `0.75`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || alloc::format!("decay factor must be in (0, 1), got {s:?}");
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return DecayFactor::new(n, d).ok_or_else(bad);
        }
        let (int, frac) = s.split_once('.').ok_or_else(bad)?;
        if int.trim_start_matches('0').is_empty() && !frac.is_empty() && frac.len() <= 18 {
            let num: u64 = frac.parse().map_err(|_| bad())?;
            return DecayFactor::new(num, 10u64.pow(frac.len() as u32)).ok_or_else(bad);
        }
        Err(bad())
    }
}

/// TTL handed to the next hop: `floor(ttl * x)`.
pub fn ttl_decay(ttl: u64, x: DecayFactor) -> u64 {
    (ttl as u128 * x.num as u128 / x.den as u128) as u64
}

/// Partial state of one projected aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatePartial {
    pub func: AggFunc,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub columns: Vec<ResultColumn>,
    pub parts: Vec<AggregatePartial>,
}

impl AggregateRow {
    pub fn signature(&self) -> Vec<AggFunc> {
        self.parts.iter().map(|p| p.func).collect()
    }

    fn into_recordset(self) -> Recordset {
        Recordset { columns: self.columns, rows: alloc::vec![self.parts.into_iter().map(|p| p.value).collect()] }
    }
}

/// An intermediate result: appended rows, or combinable aggregate state.
#[derive(Debug, Clone, PartialEq)]
pub enum Partial {
    Rows(Recordset),
    Aggregate(AggregateRow),
}

impl Partial {
    /// Wrap a local execution result of `plan`.
    pub fn from_local(plan: &ExecutablePlan, rs: Recordset) -> Result<Partial, MergeError> {
        if !plan.is_aggregate() {
            return Ok(Partial::Rows(rs));
        }
        let sig = plan.signature();
        let row = rs.rows.into_iter().next().ok_or(MergeError::Empty)?;
        if row.len() != sig.len() {
            return Err(MergeError::SignatureMismatch);
        }
        let parts = sig.into_iter().zip(row).map(|(func, value)| AggregatePartial { func, value }).collect();
        Ok(Partial::Aggregate(AggregateRow { columns: rs.columns, parts }))
    }

    pub fn merge(self, other: Partial, mutation: MergeMutation) -> Result<Partial, MergeError> {
        match (self, other) {
            (Partial::Rows(a), Partial::Rows(b)) => {
                if mutation == MergeMutation::DropChildRows {
                    return if a.same_schema(&b) { Ok(Partial::Rows(a)) } else { Err(MergeError::SchemaMismatch) };
                }
                merge_recordsets(a, b).map(Partial::Rows)
            }
            (Partial::Aggregate(a), Partial::Aggregate(b)) => {
                combine_rows(a, &b, mutation).map(Partial::Aggregate)
            }
            _ => Err(MergeError::SchemaMismatch),
        }
    }
}

/// Append `b` to `a`. No deduplication.
pub fn merge_recordsets(mut a: Recordset, b: Recordset) -> Result<Recordset, MergeError> {
    if !a.same_schema(&b) {
        return Err(MergeError::SchemaMismatch);
    }
    a.rows.extend(b.rows);
    Ok(a)
}

/// Combine partial aggregate rows position by position.
pub fn merge_aggregates(parts: &[AggregateRow]) -> Result<AggregateRow, MergeError> {
    let (first, rest) = parts.split_first().ok_or(MergeError::Empty)?;
    rest.iter().try_fold(first.clone(), |acc, r| combine_rows(acc, r, MergeMutation::None))
}

fn combine_rows(mut acc: AggregateRow, other: &AggregateRow, mutation: MergeMutation) -> Result<AggregateRow, MergeError> {
    if acc.signature() != other.signature() || acc.columns != other.columns {
        return Err(MergeError::SignatureMismatch);
    }
    for (a, b) in acc.parts.iter_mut().zip(&other.parts) {
        let func = match (a.func, mutation) {
            (AggFunc::Sum, MergeMutation::SumTakesMax) => AggFunc::Max,
            (f, _) => f,
        };
        a.value = combine(func, &a.value, &b.value)?;
    }
    Ok(acc)
}

fn combine(func: AggFunc, a: &Value, b: &Value) -> Result<Value, MergeError> {
    if a.is_null() {
        return Ok(b.clone());
    }
    if b.is_null() {
        return Ok(a.clone());
    }
    match func {
        AggFunc::Sum | AggFunc::Count => match (a, b) {
            (Value::Integer(x), Value::Integer(y)) => x.checked_add(*y).map(Value::Integer).ok_or(MergeError::Overflow),
            _ => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => Ok(Value::Real(x + y)),
                _ => Err(MergeError::SignatureMismatch),
            },
        },
        AggFunc::Min | AggFunc::Max => {
            let ord = a.sql_cmp(b).map_err(|_| MergeError::SignatureMismatch)?.unwrap_or(Ordering::Equal);
            let take_b = if func == AggFunc::Min { ord == Ordering::Greater } else { ord == Ordering::Less };
            Ok(if take_b { b.clone() } else { a.clone() })
        }
        AggFunc::Avg => Err(MergeError::SignatureMismatch),
    }
}

/// Turn a fully merged partial into the user-facing recordset: replaces each
/// sum/count pair with its quotient (null when the count is 0).
pub fn finalize(plan: &ExecutablePlan, merged: Partial) -> Result<Recordset, MergeError> {
    let row = match merged {
        Partial::Rows(rs) => return Ok(rs),
        Partial::Aggregate(row) => row,
    };
    let recon = &plan.reconstruction;
    if recon.is_identity() {
        return Ok(row.into_recordset());
    }
    let mut columns = Vec::new();
    let mut values = Vec::new();
    let mut pos = 0;
    while pos < row.parts.len() {
        if let Some(slot) = recon.pair_at(pos) {
            let sum = &row.parts[slot.sum].value;
            let count = &row.parts[slot.count].value;
            let avg = match (sum.as_f64(), count) {
                (Some(s), Value::Integer(c)) if *c > 0 => Value::Real(s / *c as f64),
                _ => Value::Null,
            };
            let arg = row.columns[slot.sum].name.strip_prefix("sum").unwrap_or("(?)");
            columns.push(ResultColumn { name: alloc::format!("avg{arg}"), ty: ColumnType::Real });
            values.push(avg);
            pos = slot.count + 1;
        } else {
            columns.push(row.columns[pos].clone());
            values.push(row.parts[pos].value.clone());
            pos += 1;
        }
    }
    Ok(Recordset { columns, rows: alloc::vec![values] })
}

/// Final step of a nested query on the initiator: re-filter the widened parent
/// recordset with the bound subquery-dependent conjuncts and drop the columns
/// that were only fetched for that filter.
pub fn finalize_nested(
    decomposition: &Decomposition,
    values: &BTreeMap<usize, SubqueryValue>,
    parent: Recordset,
) -> Result<Recordset, MergeError> {
    for (slot, _) in &decomposition.subplans {
        if !values.contains_key(slot) {
            return Err(MergeError::MissingSubqueryResult(*slot));
        }
    }
    let mut rs = match decomposition.bind_refilter(values)? {
        Some(pred) => filter_recordset(parent, &pred)?,
        None => parent,
    };
    if let Some(width) = decomposition.output_width {
        rs.columns.truncate(width);
        for r in &mut rs.rows {
            r.truncate(width);
        }
    }
    Ok(rs)
}

/// Deliberate corruption of merging, used to prove the oracle comparison
/// catches broken combination logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMutation {
    #[default]
    None,
    SumTakesMax,
    DropChildRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Every peer returns its local result straight to the initiator.
    InitiatorCollector,
    /// Peers merge their children's results and return one message upstream.
    #[default]
    IntermediateCollector,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::InitiatorCollector => "initiator",
            Strategy::IntermediateCollector => "intermediate",
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "initiator" => Ok(Strategy::InitiatorCollector),
            "intermediate" => Ok(Strategy::IntermediateCollector),
            other => Err(alloc::format!("unknown strategy {other:?} (expected initiator or intermediate)")),
        }
    }
}

/// Results gathered by one peer for one query while it waits.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeBuffer {
    pub uqi: Uqi,
    pub deadline: u64,
    pub accumulated: Partial,
    pub contributors: BTreeSet<PeerId>,
    pub children_expected: usize,
    pub children_received: usize,
}

impl MergeBuffer {
    /// Open a buffer seeded with this peer's local result.
    pub fn open(uqi: Uqi, arrival: u64, ttl: u64, local: Partial, me: PeerId, children_expected: usize) -> Self {
        MergeBuffer {
            uqi,
            deadline: arrival.saturating_add(ttl),
            accumulated: local,
            contributors: BTreeSet::from([me]),
            children_expected,
            children_received: 0,
        }
    }

    pub fn absorb(&mut self, payload: ResultPayload, mutation: MergeMutation) -> Result<(), MergeError> {
        let current = core::mem::replace(&mut self.accumulated, Partial::Rows(Recordset::empty(Vec::new())));
        match current.clone().merge(payload.data, mutation) {
            Ok(merged) => self.accumulated = merged,
            Err(e) => {
                self.accumulated = current;
                return Err(e);
            }
        }
        self.contributors.extend(payload.contributors);
        self.children_received = (self.children_received + 1).min(self.children_expected.max(1));
        Ok(())
    }

    /// Every child we forwarded to has answered.
    pub fn is_complete(&self) -> bool {
        self.children_received >= self.children_expected
    }

    pub fn into_payload(self) -> ResultPayload {
        ResultPayload { data: self.accumulated, contributors: self.contributors.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeadlineAction {
    /// This peer is the initiator: the merged result is final.
    Deliver(ResultPayload),
    /// Return the merged result to the peer it came from.
    SendBack { to: PeerId, payload: ResultPayload },
}

/// Close `buffer` once its deadline passed or every child answered.
/// `return_to` is the sentinel on the initiator.
pub fn on_deadline(buffer: MergeBuffer, return_to: PeerId) -> DeadlineAction {
    let payload = buffer.into_payload();
    if return_to.is_sentinel() {
        DeadlineAction::Deliver(payload)
    } else {
        DeadlineAction::SendBack { to: return_to, payload }
    }
}
