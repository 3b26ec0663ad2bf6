//! Classification and rewriting of parsed queries into distributable plans.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::{parse, SqlError};
use crate::storage::{Catalog, Recordset, StorageError};
use crate::value::{ColumnType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    Simple,
    Aggregate,
    Nested,
}

impl QueryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::Simple => "simple",
            QueryKind::Aggregate => "aggregate",
            QueryKind::Nested => "nested",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubqueryKind {
    /// Projects a single plain column; binds as an IN-list.
    Plain,
    /// Projects a single aggregate; binds as a scalar.
    Aggregate,
}

/// One avg column of the user's projection and the sum/count pair that
/// replaced it in the rewritten projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgSlot {
    pub output: usize,
    pub sum: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AvgReconstruction {
    pub mapping: Vec<AvgSlot>,
}

impl AvgReconstruction {
    pub fn is_identity(&self) -> bool {
        self.mapping.is_empty()
    }

    /// The slot whose sum column sits at rewritten position `pos`.
    pub fn pair_at(&self, pos: usize) -> Option<&AvgSlot> {
        self.mapping.iter().find(|s| s.sum == pos)
    }
}

/// Replace every `avg(c)` with the pair `sum(c), count(c)` in place.
pub fn rewrite_avg(select: &Select) -> (Select, AvgReconstruction) {
    let mut out = select.clone();
    let mut recon = AvgReconstruction::default();
    if let Projection::Items(items) = &select.projection {
        let mut rewritten = Vec::with_capacity(items.len());
        for (output, item) in items.iter().enumerate() {
            match item {
                SelectItem::Aggregate { func: AggFunc::Avg, arg } => {
                    let sum = rewritten.len();
                    rewritten.push(SelectItem::Aggregate { func: AggFunc::Sum, arg: arg.clone() });
                    rewritten.push(SelectItem::Aggregate { func: AggFunc::Count, arg: arg.clone() });
                    recon.mapping.push(AvgSlot { output, sum, count: sum + 1 });
                }
                other => rewritten.push(other.clone()),
            }
        }
        out.projection = Projection::Items(rewritten);
    }
    (out, recon)
}

fn check_projection(select: &Select) -> Result<(), SqlError> {
    if let Projection::Items(items) = &select.projection {
        let aggs = items.iter().filter(|i| i.is_aggregate()).count();
        if aggs > 0 && aggs < items.len() {
            return Err(SqlError::Unsupported(
                "mixing plain columns with aggregates requires GROUP BY".into(),
            ));
        }
    }
    Ok(())
}

fn subquery_kind(sub: &Select) -> Result<SubqueryKind, SqlError> {
    match &sub.projection {
        Projection::Items(items) if items.len() == 1 => Ok(if items[0].is_aggregate() {
            SubqueryKind::Aggregate
        } else {
            SubqueryKind::Plain
        }),
        _ => Err(SqlError::Unsupported(
            "a subquery must project a single field or a single aggregate".into(),
        )),
    }
}

fn select_columns(select: &Select) -> Vec<&ColumnRef> {
    let mut cols = Vec::new();
    if let Projection::Items(items) = &select.projection {
        for item in items {
            match item {
                SelectItem::Column(c) | SelectItem::Aggregate { arg: AggArg::Column(c), .. } => {
                    cols.push(c)
                }
                _ => {}
            }
        }
    }
    if let Some(p) = &select.predicate {
        p.collect_columns(&mut cols);
    }
    cols
}

fn scalar_positions_plain(expr: &Expr, plain: &mut bool) {
    match expr {
        Expr::And(a, b) | Expr::Or(a, b) => {
            scalar_positions_plain(a, plain);
            scalar_positions_plain(b, plain);
        }
        Expr::Not(e) => scalar_positions_plain(e, plain),
        Expr::Compare { left, right, .. } => {
            for o in [left, right] {
                if let Operand::Subquery(s) = o {
                    if !s.query.has_aggregates() {
                        *plain = true;
                    }
                }
            }
        }
        Expr::InList { operand, .. } | Expr::InSubquery { operand, .. } => {
            if let Operand::Subquery(s) = operand {
                if !s.query.has_aggregates() {
                    *plain = true;
                }
            }
        }
    }
}

/// Assign a kind to a parsed query, enforcing the nesting restrictions.
pub fn classify(select: &Select) -> Result<QueryKind, SqlError> {
    let depth = select.depth();
    if depth > 2 {
        return Err(SqlError::TooDeepNesting { depth });
    }
    check_projection(select)?;
    let subs = select.subqueries();
    if subs.is_empty() {
        return Ok(if select.has_aggregates() { QueryKind::Aggregate } else { QueryKind::Simple });
    }
    let mut kinds = Vec::with_capacity(subs.len());
    for s in &subs {
        check_projection(&s.query)?;
        kinds.push(subquery_kind(&s.query)?);
        for c in select_columns(&s.query) {
            if let Some(q) = &c.qualifier {
                if !q.eq_ignore_ascii_case(&s.query.table) && q.eq_ignore_ascii_case(&select.table) {
                    return Err(SqlError::CorrelatedSubquery { column: c.to_string() });
                }
            }
        }
    }
    if kinds.iter().any(|k| *k != kinds[0]) {
        return Err(SqlError::HeterogeneousSubqueries);
    }
    if kinds[0] == SubqueryKind::Aggregate && select.has_aggregates() {
        return Err(SqlError::MixedAggregateNesting);
    }
    let mut plain_scalar = false;
    if let Some(p) = &select.predicate {
        scalar_positions_plain(p, &mut plain_scalar);
    }
    if plain_scalar {
        return Err(SqlError::Unsupported(
            "a plain-field subquery can only appear on the right of IN".into(),
        ));
    }
    Ok(QueryKind::Nested)
}

/// An avg-free, hole-free query that peers execute locally and merge.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutablePlan {
    pub select: Select,
    pub reconstruction: AvgReconstruction,
}

impl ExecutablePlan {
    /// Plan for a query received over the overlay. Peers only ever receive
    /// rewritten, bound queries.
    pub fn from_wire(sql: &str) -> Result<Self, SqlError> {
        let select = parse(sql)?;
        Self::from_select(select, AvgReconstruction::default())
    }

    pub fn from_select(select: Select, reconstruction: AvgReconstruction) -> Result<Self, SqlError> {
        check_projection(&select)?;
        if let Some(s) = select.subqueries().first() {
            return Err(SqlError::UnboundSubquery(s.slot));
        }
        if let Projection::Items(items) = &select.projection {
            if items.iter().any(|i| matches!(i, SelectItem::Aggregate { func: AggFunc::Avg, .. })) {
                return Err(SqlError::Unsupported("avg must be rewritten before distribution".into()));
            }
        }
        Ok(ExecutablePlan { select, reconstruction })
    }

    pub fn is_aggregate(&self) -> bool {
        self.select.has_aggregates()
    }

    /// Aggregate functions of the projection, in order. Empty for row queries.
    pub fn signature(&self) -> Vec<AggFunc> {
        match &self.select.projection {
            Projection::Items(items) => items
                .iter()
                .filter_map(|i| match i {
                    SelectItem::Aggregate { func, .. } => Some(*func),
                    _ => None,
                })
                .collect(),
            Projection::Star => Vec::new(),
        }
    }

    /// Canonical text shipped to peers.
    pub fn sql(&self) -> String {
        self.select.to_string()
    }
}

/// Result of a distributed subquery, ready to be bound into its slot.
#[derive(Debug, Clone, PartialEq)]
pub enum SubqueryValue {
    List(Vec<Value>),
    Scalar(Value),
}

impl SubqueryValue {
    /// Turn a finalized subquery recordset into its binding. Plain results are
    /// deduplicated and sorted.
    pub fn from_result(kind: SubqueryKind, rs: &Recordset) -> SubqueryValue {
        match kind {
            SubqueryKind::Plain => {
                let mut vals: Vec<Value> =
                    rs.rows.iter().filter_map(|r| r.first().cloned()).collect();
                vals.sort_by(|a, b| a.total_cmp(b));
                vals.dedup_by(|a, b| a.total_cmp(b).is_eq());
                SubqueryValue::List(vals)
            }
            SubqueryKind::Aggregate => SubqueryValue::Scalar(
                rs.rows.first().and_then(|r| r.first().cloned()).unwrap_or(Value::Null),
            ),
        }
    }

    fn as_list(&self) -> Vec<Value> {
        match self {
            SubqueryValue::List(v) => v.clone(),
            SubqueryValue::Scalar(v) => alloc::vec![v.clone()],
        }
    }
}

/// Replace every subquery hole of `expr` with its bound value.
pub fn bind_expr(expr: &Expr, values: &BTreeMap<usize, SubqueryValue>) -> Result<Expr, SqlError> {
    let bind_operand = |o: &Operand| -> Result<Operand, SqlError> {
        match o {
            Operand::Subquery(s) => match values.get(&s.slot) {
                Some(SubqueryValue::Scalar(v)) => Ok(Operand::Literal(v.clone())),
                Some(SubqueryValue::List(_)) => Err(SqlError::Unsupported(
                    "list-valued subquery in scalar position".into(),
                )),
                None => Err(SqlError::UnboundSubquery(s.slot)),
            },
            other => Ok(other.clone()),
        }
    };
    Ok(match expr {
        Expr::And(a, b) => Expr::And(bind_expr(a, values)?.into(), bind_expr(b, values)?.into()),
        Expr::Or(a, b) => Expr::Or(bind_expr(a, values)?.into(), bind_expr(b, values)?.into()),
        Expr::Not(e) => Expr::Not(bind_expr(e, values)?.into()),
        Expr::Compare { left, op, right } => {
            Expr::Compare { left: bind_operand(left)?, op: *op, right: bind_operand(right)? }
        }
        Expr::InList { operand, negated, list } => {
            Expr::InList { operand: bind_operand(operand)?, negated: *negated, list: list.clone() }
        }
        Expr::InSubquery { operand, negated, subquery } => {
            let v = values.get(&subquery.slot).ok_or(SqlError::UnboundSubquery(subquery.slot))?;
            Expr::InList { operand: bind_operand(operand)?, negated: *negated, list: v.as_list() }
        }
    })
}

/// Parent skeleton and independent subplans of a nested query.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub subquery_kind: SubqueryKind,
    /// Avg-rewritten parent. For plain subqueries its predicate still holds
    /// IN-holes; for aggregate subqueries the hole-bearing conjuncts are
    /// removed and the projection widened with the columns they reference.
    pub skeleton: Select,
    pub skeleton_reconstruction: AvgReconstruction,
    /// Slot and avg-rewritten plan of each subquery.
    pub subplans: Vec<(usize, ExecutablePlan)>,
    /// Dropped conjuncts, re-applied on the initiator after binding.
    pub refilter: Option<Expr>,
    /// Number of leading columns of the widened recordset the user asked for.
    pub output_width: Option<usize>,
}

impl Decomposition {
    /// Bind subquery results into the skeleton, yielding the parent phase plan.
    pub fn bind_skeleton(
        &self,
        values: &BTreeMap<usize, SubqueryValue>,
    ) -> Result<ExecutablePlan, SqlError> {
        let mut select = self.skeleton.clone();
        if let Some(p) = &select.predicate {
            select.predicate = Some(bind_expr(p, values)?);
        }
        ExecutablePlan::from_select(select, self.skeleton_reconstruction.clone())
    }

    pub fn bind_refilter(
        &self,
        values: &BTreeMap<usize, SubqueryValue>,
    ) -> Result<Option<Expr>, SqlError> {
        self.refilter.as_ref().map(|e| bind_expr(e, values)).transpose()
    }
}

/// Partition a nested query into its parent skeleton and subqueries.
pub fn decompose_nested(select: &Select) -> Result<Decomposition, SqlError> {
    if classify(select)? != QueryKind::Nested {
        return Err(SqlError::NotNested);
    }
    let subs = select.subqueries();
    let subquery_kind = subquery_kind(&subs[0].query)?;
    let mut subplans = Vec::with_capacity(subs.len());
    for s in &subs {
        let (rewritten, recon) = rewrite_avg(&s.query);
        subplans.push((s.slot, ExecutablePlan::from_select(rewritten, recon)?));
    }

    let (mut skeleton, skeleton_reconstruction) = rewrite_avg(select);
    let mut refilter = None;
    let mut output_width = None;
    if subquery_kind == SubqueryKind::Aggregate {
        let conjuncts = skeleton.predicate.take().map(Expr::into_conjuncts).unwrap_or_default();
        let (dropped, kept): (Vec<_>, Vec<_>) =
            conjuncts.into_iter().partition(Expr::contains_subquery);
        skeleton.predicate = Expr::conjoin(kept);
        if let Projection::Items(items) = &mut skeleton.projection {
            output_width = Some(items.len());
            let mut needed = Vec::new();
            for c in &dropped {
                c.collect_columns(&mut needed);
            }
            for c in needed {
                let present = items.iter().any(|i| {
                    matches!(i, SelectItem::Column(x) if x.name.eq_ignore_ascii_case(&c.name))
                });
                if !present {
                    items.push(SelectItem::Column(ColumnRef::bare(c.name.clone())));
                }
            }
        }
        refilter = Expr::conjoin(dropped);
    }
    Ok(Decomposition {
        subquery_kind,
        skeleton,
        skeleton_reconstruction,
        subplans,
        refilter,
        output_width,
    })
}

/// A classified, rewritten query ready for distribution from its initiator.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub kind: QueryKind,
    pub original: Select,
    /// Executable parent; for nested plans, `None` until subqueries bind.
    pub parent: Option<ExecutablePlan>,
    pub nested: Option<Decomposition>,
}

impl QueryPlan {
    /// Subplans in slot order; empty unless nested.
    pub fn subplans(&self) -> Vec<&ExecutablePlan> {
        self.nested.as_ref().map(|d| d.subplans.iter().map(|(_, p)| p).collect()).unwrap_or_default()
    }

    /// Canonical text of the user's query, used for identifiers and logs.
    pub fn canonical_sql(&self) -> String {
        self.original.to_string()
    }

    /// Verify tables, columns and literal types against the common schema.
    pub fn check_against(&self, catalog: &Catalog) -> Result<(), SqlError> {
        check_select(&self.original, None, catalog)?;
        for s in self.original.subqueries() {
            check_select(&s.query, Some(&self.original.table), catalog)?;
        }
        Ok(())
    }
}

fn check_select(select: &Select, parent: Option<&str>, catalog: &Catalog) -> Result<(), SqlError> {
    let schema = catalog.schema(&select.table)?;
    let lookup = |c: &ColumnRef| -> Result<ColumnType, SqlError> {
        if let Some(q) = &c.qualifier {
            if !q.eq_ignore_ascii_case(&schema.name) {
                return Err(StorageError::UnknownTable(q.clone()).into());
            }
        }
        match schema.column(&c.name) {
            Some((_, col)) => Ok(col.ty),
            None => {
                let in_parent = parent
                    .and_then(|p| catalog.schema(p).ok())
                    .is_some_and(|p| p.column(&c.name).is_some());
                if in_parent {
                    Err(SqlError::CorrelatedSubquery { column: c.to_string() })
                } else {
                    Err(StorageError::UnknownColumn(c.to_string()).into())
                }
            }
        }
    };
    if let Projection::Items(items) = &select.projection {
        for item in items {
            match item {
                SelectItem::Column(c) => {
                    lookup(c)?;
                }
                SelectItem::Aggregate { func, arg: AggArg::Column(c) } => {
                    let ty = lookup(c)?;
                    let numeric = matches!(ty, ColumnType::Integer | ColumnType::Real);
                    if matches!(func, AggFunc::Sum | AggFunc::Avg) && !numeric {
                        return Err(StorageError::TypeMismatch(alloc::format!(
                            "{}() over {ty} column {c}",
                            func.name()
                        ))
                        .into());
                    }
                }
                SelectItem::Aggregate { .. } => {}
            }
        }
    }
    if let Some(p) = &select.predicate {
        check_expr(p, &lookup)?;
    }
    Ok(())
}

fn literal_fits(ty: ColumnType, v: &Value) -> bool {
    match v.column_type() {
        None => true,
        Some(ColumnType::Text) => ty == ColumnType::Text,
        Some(_) => ty != ColumnType::Text,
    }
}

fn check_expr(
    expr: &Expr,
    lookup: &dyn Fn(&ColumnRef) -> Result<ColumnType, SqlError>,
) -> Result<(), SqlError> {
    let mismatch = |c: &ColumnRef, v: &Value| -> SqlError {
        StorageError::TypeMismatch(alloc::format!("{c} compared with {v}")).into()
    };
    match expr {
        Expr::And(a, b) | Expr::Or(a, b) => {
            check_expr(a, lookup)?;
            check_expr(b, lookup)
        }
        Expr::Not(e) => check_expr(e, lookup),
        Expr::Compare { left, right, .. } => {
            for (x, y) in [(left, right), (right, left)] {
                if let Operand::Column(c) = x {
                    let ty = lookup(c)?;
                    if let Operand::Literal(v) = y {
                        if !literal_fits(ty, v) {
                            return Err(mismatch(c, v));
                        }
                    }
                }
            }
            Ok(())
        }
        Expr::InList { operand, list, .. } => {
            if let Operand::Column(c) = operand {
                let ty = lookup(c)?;
                if let Some(v) = list.iter().find(|v| !literal_fits(ty, v)) {
                    return Err(mismatch(c, v));
                }
            }
            Ok(())
        }
        Expr::InSubquery { operand, .. } => {
            if let Operand::Column(c) = operand {
                lookup(c)?;
            }
            Ok(())
        }
    }
}

/// Parse, classify, rewrite and (when nested) decompose `sql`.
pub fn plan(sql: &str) -> Result<QueryPlan, SqlError> {
    let original = parse(sql)?;
    let kind = classify(&original)?;
    let (parent, nested) = match kind {
        QueryKind::Nested => (None, Some(decompose_nested(&original)?)),
        _ => {
            let (rewritten, recon) = rewrite_avg(&original);
            (Some(ExecutablePlan::from_select(rewritten, recon)?), None)
        }
    };
    Ok(QueryPlan { kind, original, parent, nested })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse;

    fn kind(sql: &str) -> Result<QueryKind, SqlError> {
        classify(&parse(sql).unwrap())
    }

    #[test]
    fn classification_examples() {
        assert_eq!(kind("SELECT sum(load) from tb_cpu_dynamic where load > 0.1;"), Ok(QueryKind::Aggregate));
        assert_eq!(kind("SELECT * from tb_cpu_dynamic where load > 0.1;"), Ok(QueryKind::Simple));
        assert_eq!(
            kind("SELECT * from tb_cpu_dynamic where load > (select avg(load) from tb_cpu_dynamic);"),
            Ok(QueryKind::Nested)
        );
        assert_eq!(
            kind("SELECT * from t where x in (select y from u where z in (select w from v))"),
            Err(SqlError::TooDeepNesting { depth: 3 })
        );
    }

    #[test]
    fn nesting_restrictions() {
        assert_eq!(
            kind("SELECT max(a) FROM t WHERE a > (SELECT avg(a) FROM t)"),
            Err(SqlError::MixedAggregateNesting)
        );
        assert_eq!(
            kind("SELECT a FROM t WHERE a > (SELECT avg(a) FROM t) AND b IN (SELECT b FROM u)"),
            Err(SqlError::HeterogeneousSubqueries)
        );
        assert!(matches!(
            kind("SELECT a FROM t WHERE b IN (SELECT b FROM u WHERE u.c = t.c)"),
            Err(SqlError::CorrelatedSubquery { .. })
        ));
        assert!(matches!(kind("SELECT a FROM t WHERE b > (SELECT b FROM u)"), Err(SqlError::Unsupported(_))));
        assert!(matches!(kind("SELECT a FROM t WHERE b IN (SELECT b, c FROM u)"), Err(SqlError::Unsupported(_))));
        assert!(matches!(kind("SELECT a, sum(b) FROM t"), Err(SqlError::Unsupported(_))));
        // Plain parent aggregate with a plain subquery is fine.
        assert_eq!(kind("SELECT sum(a) FROM t WHERE b IN (SELECT b FROM u)"), Ok(QueryKind::Nested));
    }

    #[test]
    fn avg_rewrite_matches_the_worked_example() {
        let (q, r) = rewrite_avg(&parse("select avg (load), max (load) from tb_cpu_dynamic;").unwrap());
        assert_eq!(q.to_string(), "SELECT sum(load), count(load), max(load) FROM tb_cpu_dynamic");
        assert_eq!(r.mapping, [AvgSlot { output: 0, sum: 0, count: 1 }]);
    }

    #[test]
    fn avg_rewrite_twice_and_identity() {
        let (q, r) = rewrite_avg(&parse("select avg(a), avg(b) from t").unwrap());
        assert_eq!(q.to_string(), "SELECT sum(a), count(a), sum(b), count(b) FROM t");
        assert_eq!(
            r.mapping,
            [AvgSlot { output: 0, sum: 0, count: 1 }, AvgSlot { output: 1, sum: 2, count: 3 }]
        );
        let plain = parse("select max(a) from t").unwrap();
        let (same, r) = rewrite_avg(&plain);
        assert_eq!(same, plain);
        assert!(r.is_identity());
        let (again, r2) = rewrite_avg(&q);
        assert_eq!(again, q);
        assert!(r2.is_identity());
    }

    #[test]
    fn decompose_aggregate_subquery_widens_parent() {
        let q = parse("SELECT * from tb_cpu_dynamic where load > (select avg (load) from tb_cpu_dynamic);")
            .unwrap();
        let d = decompose_nested(&q).unwrap();
        assert_eq!(d.subquery_kind, SubqueryKind::Aggregate);
        assert_eq!(d.skeleton.to_string(), "SELECT * FROM tb_cpu_dynamic");
        assert_eq!(d.subplans.len(), 1);
        assert_eq!(d.subplans[0].1.sql(), "SELECT sum(load), count(load) FROM tb_cpu_dynamic");
        let mut vals = BTreeMap::new();
        vals.insert(0, SubqueryValue::Scalar(Value::Real(0.4)));
        assert_eq!(d.bind_refilter(&vals).unwrap().unwrap().to_string(), "load > 0.4");
    }

    #[test]
    fn decompose_keeps_other_conjuncts_and_needed_columns() {
        let q = parse("SELECT cpu_id FROM t WHERE cpu_id > 2 AND load > (SELECT avg(load) FROM t)").unwrap();
        let d = decompose_nested(&q).unwrap();
        assert_eq!(d.skeleton.to_string(), "SELECT cpu_id, load FROM t WHERE cpu_id > 2");
        assert_eq!(d.output_width, Some(1));
    }

    #[test]
    fn decompose_plain_subquery_keeps_hole() {
        let q = parse(
            "SELECT Model from Product where ManufacturerID in \
             (SELECT ManufacturerID from manufacturer where manufacturer = 'Dell');",
        )
        .unwrap();
        let d = decompose_nested(&q).unwrap();
        assert_eq!(d.subquery_kind, SubqueryKind::Plain);
        assert!(d.refilter.is_none());
        assert_eq!(
            d.subplans[0].1.sql(),
            "SELECT ManufacturerID FROM manufacturer WHERE manufacturer = 'Dell'"
        );
        let mut vals = BTreeMap::new();
        vals.insert(0, SubqueryValue::List(alloc::vec![Value::Integer(3), Value::Integer(7)]));
        assert_eq!(
            d.bind_skeleton(&vals).unwrap().sql(),
            "SELECT Model FROM Product WHERE ManufacturerID IN (3, 7)"
        );
    }

    #[test]
    fn decompose_requires_nested() {
        assert_eq!(decompose_nested(&parse("SELECT a FROM t").unwrap()), Err(SqlError::NotNested));
    }
}
