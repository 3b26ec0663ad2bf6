use std::collections::BTreeMap;

use idss_core::merge::{DecayFactor, Strategy};
use idss_core::overlay::{LatencyModel, PeerId, TransportModel};
use idss_core::peer::PeerConfig;
use idss_core::query_state::{State, Uqi};
use idss_core::sim::{SimConfig, Simulator};
use idss_core::storage::{Catalog, ColumnDef, TableSchema};
use idss_core::{ColumnType, Value};

fn catalog(rows: &[(i64, f64)]) -> Catalog {
    let schema = TableSchema::new(
        "tb_cpu_dynamic",
        vec![ColumnDef::new("cpu_id", ColumnType::Integer), ColumnDef::new("load", ColumnType::Real)],
    )
    .unwrap();
    let mut c = Catalog::new(vec![schema]).unwrap();
    c.insert_rows("tb_cpu_dynamic", rows.iter().map(|(i, l)| vec![Value::Integer(*i), Value::Real(*l)]).collect())
        .unwrap();
    c
}

fn build(n: u128, strategy: Strategy, seed: u64) -> Simulator {
    let config = SimConfig {
        peer: PeerConfig { strategy, seed, ..PeerConfig::default() },
        transport: TransportModel::new(LatencyModel::default(), 0.0, seed),
        keep_log: false,
    };
    let mut s = Simulator::new(config);
    for i in 1..=n {
        s.add_peer(PeerId(i * 1000), catalog(&[(i as i64, (i % 10) as f64 / 10.0)])).unwrap();
    }
    s
}

/// Every record's TTL equals the initial TTL decayed once per hop along the
/// chain of sender keys back to the initiator.
#[test]
fn ttl_at_depth_is_iterated_decay() {
    let mut s = build(64, Strategy::IntermediateCollector, 4);
    let t0 = 123_456_789u64;
    let uqi = s.submit(PeerId(5000), "SELECT * FROM tb_cpu_dynamic", t0).unwrap();
    s.run_until(u64::MAX);

    let sender: BTreeMap<PeerId, PeerId> =
        s.peers().map(|p| (p.id, p.query_table().get(&uqi).unwrap().sender_key)).collect();
    for p in s.peers() {
        let mut depth = 0u32;
        let mut at = p.id;
        while !sender[&at].is_sentinel() {
            at = sender[&at];
            depth += 1;
        }
        // independent recomputation in rationals: floor(floor(t*3/4)*3/4)...
        let mut expect = t0 as u128;
        for _ in 0..depth {
            expect = expect * 3 / 4;
        }
        assert_eq!(p.query_table().get(&uqi).unwrap().ttl as u128, expect, "peer {} depth {depth}", p.id);
    }
}

#[test]
fn concurrent_queries_stay_isolated() {
    let mut s = build(32, Strategy::IntermediateCollector, 9);
    let a = s.submit(PeerId(1000), "SELECT cpu_id FROM tb_cpu_dynamic WHERE cpu_id <= 10", 1_000_000_000).unwrap();
    let b = s.submit(PeerId(2000), "SELECT cpu_id FROM tb_cpu_dynamic WHERE cpu_id > 10", 1_000_000_000).unwrap();
    let c = s.submit(PeerId(1000), "SELECT count(cpu_id) FROM tb_cpu_dynamic", 1_000_000_000).unwrap();
    s.run_until(u64::MAX);
    let ids = |u: &Uqi, at: u128| {
        let mut v: Vec<i64> = s
            .fetch(PeerId(at), u)
            .unwrap()
            .result
            .unwrap()
            .rows
            .iter()
            .map(|r| match r[0] {
                Value::Integer(i) => i,
                _ => panic!(),
            })
            .collect();
        v.sort_unstable();
        v
    };
    assert_eq!(ids(&a, 1000), (1..=10).collect::<Vec<_>>());
    assert_eq!(ids(&b, 2000), (11..=32).collect::<Vec<_>>());
    assert_eq!(ids(&c, 1000), [32]);
}

#[test]
fn initiator_collector_receives_from_everyone() {
    let mut s = build(16, Strategy::InitiatorCollector, 2);
    let uqi = s.submit(PeerId(3000), "SELECT sum(load) FROM tb_cpu_dynamic", 1_000_000).unwrap();
    s.run_until(u64::MAX);
    let st = s.fetch(PeerId(3000), &uqi).unwrap();
    assert_eq!(st.state, State::Completed);
    assert_eq!(st.contributors.len(), 16);
    assert_eq!(s.traffic(&[uqi]).initiator_inbound, 15);
    for p in s.peers().filter(|p| p.id != PeerId(3000)) {
        assert_eq!(p.query_table().get(&uqi).unwrap().state(), State::SentBack);
    }
}

#[test]
fn nested_query_runs_in_phases() {
    let mut s = build(8, Strategy::IntermediateCollector, 5);
    let sql = "SELECT * from tb_cpu_dynamic where load > (select avg(load) from tb_cpu_dynamic);";
    let uqi = s.submit(PeerId(1000), sql, 1_000_000_000).unwrap();
    s.run_until(u64::MAX);
    let st = s.fetch(PeerId(1000), &uqi).unwrap();
    assert_eq!(st.state, State::Completed);
    // loads 0.1..0.8, mean 0.45
    let mut loads: Vec<f64> = st.result.unwrap().rows.iter().filter_map(|r| r[1].as_f64()).collect();
    loads.sort_by(f64::total_cmp);
    assert_eq!(loads, [0.5, 0.6, 0.7, 0.8]);
    let phases = s.peer(PeerId(1000)).unwrap().phase_uqis(&uqi);
    assert_eq!(phases.len(), 2);
    for p in s.peers().filter(|p| p.id != PeerId(1000)) {
        assert!(phases.iter().all(|u| p.query_table().get(u).is_some()));
        assert!(p.query_table().get(&uqi).is_none());
    }
}

#[test]
fn custom_decay_factor() {
    let config = SimConfig {
        peer: PeerConfig { decay: DecayFactor::new(1, 2).unwrap(), ..PeerConfig::default() },
        transport: TransportModel::new(LatencyModel::Constant(1), 0.0, 0),
        keep_log: false,
    };
    let mut s = Simulator::new(config);
    for i in 1..=4u128 {
        s.add_peer(PeerId(i), catalog(&[])).unwrap();
    }
    let uqi = s.submit(PeerId(1), "SELECT * FROM tb_cpu_dynamic", 1000).unwrap();
    s.run_until(u64::MAX);
    for p in s.peers().filter(|p| p.id != PeerId(1)) {
        let r = p.query_table().get(&uqi).unwrap();
        assert!([500, 250, 125].contains(&r.ttl), "{}", r.ttl);
    }
}
