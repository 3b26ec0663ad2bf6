use idss_core::merge::{finalize, merge_aggregates, AggregateRow, MergeMutation, Partial};
use idss_core::query_state::{QueryRecord, State, Uqi};
use idss_core::overlay::PeerId;
use idss_core::sql::{parse, plan, rewrite_avg, AggArg, Projection, SelectItem};
use idss_core::storage::{execute_local, Catalog, ColumnDef, TableSchema};
use idss_core::{ColumnType, Value};
use proptest::prelude::*;

fn literal() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<i64>().prop_map(|i| i.to_string()),
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(|f| format!("{f:?}")),
        "[a-z' ]{0,6}".prop_map(|s| format!("'{}'", s.replace('\'', "''"))),
        Just("NULL".to_string()),
    ]
}

fn column() -> impl Strategy<Value = String> {
    prop_oneof![Just("a"), Just("b"), Just("load"), Just("t.c")].prop_map(String::from)
}

fn leaf() -> impl Strategy<Value = String> {
    let cmp = prop_oneof![Just("="), Just("<>"), Just("<"), Just("<="), Just(">"), Just(">=")];
    prop_oneof![
        (column(), cmp, literal()).prop_map(|(c, o, l)| format!("{c} {o} {l}")),
        (literal(), column()).prop_map(|(l, c)| format!("{l} = {c}")),
        (column(), any::<bool>(), prop::collection::vec(literal(), 1..4))
            .prop_map(|(c, n, l)| format!("{c} {}IN ({})", if n { "NOT " } else { "" }, l.join(", "))),
        (column(), any::<bool>()).prop_map(|(c, n)| format!(
            "{c} {}IN (SELECT x FROM u WHERE y > 1)",
            if n { "not " } else { "" }
        )),
        column().prop_map(|c| format!("{c} > (select AVG(x) from u)")),
    ]
}

fn predicate() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} AND {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) or ({b})")),
            inner.clone().prop_map(|a| format!("NOT ({a})")),
            inner.prop_map(|a| format!("({a})")),
        ]
    })
}

fn projection() -> impl Strategy<Value = String> {
    let agg = (
        prop_oneof![Just("sum"), Just("AVG"), Just("min"), Just("Max"), Just("count")],
        prop_oneof![Just("load"), Just("a")],
    )
        .prop_map(|(f, c)| format!("{f}({c})"));
    prop_oneof![
        Just("*".to_string()),
        prop::collection::vec(column(), 1..4).prop_map(|v| v.join(", ")),
        prop::collection::vec(agg, 1..4).prop_map(|v| v.join(", ")),
        Just("count(*)".to_string()),
    ]
}

fn query() -> impl Strategy<Value = String> {
    (projection(), prop::option::of(predicate()), any::<bool>()).prop_map(|(p, w, semi)| {
        let mut q = format!("select {p} from t");
        if let Some(w) = w {
            q.push_str(" where ");
            q.push_str(&w);
        }
        if semi {
            q.push(';');
        }
        q
    })
}

fn table(values: &[Option<i64>]) -> Catalog {
    let schema = TableSchema::new("t", vec![ColumnDef::new("v", ColumnType::Integer)]).unwrap();
    let mut c = Catalog::new(vec![schema]).unwrap();
    c.insert_rows("t", values.iter().map(|v| vec![v.map_or(Value::Null, Value::Integer)]).collect()).unwrap();
    c
}

fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Real(x), Value::Real(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn render_then_parse_is_identity(sql in query()) {
        let ast = parse(&sql).unwrap();
        let rendered = ast.to_string();
        prop_assert_eq!(parse(&rendered).unwrap(), ast.clone());
        prop_assert_eq!(parse(&rendered).unwrap().to_string(), rendered);
    }

    #[test]
    fn avg_rewrite_is_idempotent_and_avg_free(sql in query()) {
        let ast = parse(&sql).unwrap();
        let (once, recon) = rewrite_avg(&ast);
        let (twice, again) = rewrite_avg(&once);
        prop_assert_eq!(&twice, &once);
        prop_assert!(again.is_identity());
        if let Projection::Items(items) = &once.projection {
            let has_avg = items.iter().any(|i| matches!(i, SelectItem::Aggregate { func, .. } if func.name() == "avg"));
            prop_assert!(!has_avg);
        }
        for slot in &recon.mapping {
            prop_assert_eq!(slot.count, slot.sum + 1);
        }
    }

    #[test]
    fn partitioned_aggregates_match_whole(
        values in prop::collection::vec(prop::option::weighted(0.9, -1000i64..1000), 0..40),
        cuts in prop::collection::vec(0usize..40, 0..7),
    ) {
        let sql = "SELECT avg(v), sum(v), count(v), min(v), max(v), count(*) FROM t";
        let q = plan(sql).unwrap();
        let exec = q.parent.as_ref().unwrap();

        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c.min(values.len())).collect();
        bounds.push(0);
        bounds.push(values.len());
        bounds.sort_unstable();
        let parts: Vec<AggregateRow> = bounds
            .windows(2)
            .map(|w| {
                let rs = execute_local(&table(&values[w[0]..w[1]]), exec).unwrap();
                match Partial::from_local(exec, rs).unwrap() {
                    Partial::Aggregate(r) => r,
                    Partial::Rows(_) => unreachable!(),
                }
            })
            .collect();
        let merged = merge_aggregates(&parts).unwrap();
        let got = finalize(exec, Partial::Aggregate(merged)).unwrap();

        // Reference computed straight from the values.
        let present: Vec<i64> = values.iter().flatten().copied().collect();
        let sum: i64 = present.iter().sum();
        let n = present.len() as i64;
        let expect = [
            if n == 0 { Value::Null } else { Value::Real(sum as f64 / n as f64) },
            if n == 0 { Value::Null } else { Value::Integer(sum) },
            Value::Integer(n),
            present.iter().min().map_or(Value::Null, |m| Value::Integer(*m)),
            present.iter().max().map_or(Value::Null, |m| Value::Integer(*m)),
            Value::Integer(values.len() as i64),
        ];
        prop_assert_eq!(got.rows.len(), 1);
        for (g, e) in got.rows[0].iter().zip(expect.iter()) {
            prop_assert!(close(g, e), "{:?} vs {:?}", g, e);
        }
        prop_assert_eq!(got.columns[0].name.as_str(), "avg(v)");
    }

    #[test]
    fn row_merge_order_does_not_change_multiset(
        values in prop::collection::vec(-50i64..50, 0..30),
        split in 0usize..30,
    ) {
        let exec = plan("SELECT v FROM t WHERE v > 0").unwrap().parent.unwrap();
        let split = split.min(values.len());
        let run = |vals: &[i64]| {
            let c = table(&vals.iter().map(|v| Some(*v)).collect::<Vec<_>>());
            Partial::from_local(&exec, execute_local(&c, &exec).unwrap()).unwrap()
        };
        let (a, b) = (run(&values[..split]), run(&values[split..]));
        let ab = a.clone().merge(b.clone(), MergeMutation::None).unwrap();
        let ba = b.merge(a, MergeMutation::None).unwrap();
        let sorted = |p: Partial| match p {
            Partial::Rows(mut r) => { r.rows.sort_by(|x, y| x[0].total_cmp(&y[0])); r.rows }
            Partial::Aggregate(_) => unreachable!(),
        };
        let expect: Vec<Vec<Value>> = {
            let mut v: Vec<i64> = values.iter().copied().filter(|v| *v > 0).collect();
            v.sort_unstable();
            v.into_iter().map(|x| vec![Value::Integer(x)]).collect()
        };
        prop_assert_eq!(sorted(ab), expect.clone());
        prop_assert_eq!(sorted(ba), expect);
    }

    #[test]
    fn observed_states_follow_the_lifecycle(
        initiator in any::<bool>(),
        attempts in prop::collection::vec(0usize..5, 0..20),
    ) {
        let sender = if initiator { PeerId::INITIATOR_SENTINEL } else { PeerId(9) };
        let mut r = QueryRecord::new(Uqi(1), String::new(), 0, 10, sender);
        let mut seen = vec![r.state()];
        for a in attempts {
            if r.transition(State::ALL[a]).is_ok() {
                seen.push(r.state());
            }
        }
        let happy = [State::Queued, State::LocallyExecuted, State::Completed, State::SentBack];
        let cut = seen.iter().position(|s| *s == State::Failed).unwrap_or(seen.len());
        prop_assert!(seen[cut..].len() <= 1);
        prop_assert_eq!(&seen[..cut], &happy[..cut]);
        if initiator {
            prop_assert!(!seen.contains(&State::SentBack));
        }
    }
}

#[test]
fn count_star_counts_null_rows() {
    let exec = plan("SELECT count(*), count(v) FROM t").unwrap().parent.unwrap();
    let rs = execute_local(&table(&[Some(1), None, None]), &exec).unwrap();
    assert_eq!(rs.rows, vec![vec![Value::Integer(3), Value::Integer(1)]]);
    assert!(matches!(
        parse("select count(*) from t").unwrap().projection,
        Projection::Items(ref i) if matches!(i[0], SelectItem::Aggregate { arg: AggArg::Star, .. })
    ));
}
