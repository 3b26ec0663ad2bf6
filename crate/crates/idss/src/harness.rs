//! Deterministic scenario runner: builds the overlay from a [`ScenarioConfig`],
//! plays the workload and churn script on the simulator, and checks every
//! completed query against the [oracle](crate::oracle).

use std::fmt::Write as _;
use std::fs::File;

use idss_core::overlay::{PeerId, TransportModel};
use idss_core::peer::{PeerConfig, PeerFault};
use idss_core::query_state::{State, Uqi};
use idss_core::sim::{SimConfig, Simulator};
use idss_core::sql::{plan, QueryKind};
use idss_core::storage::{Catalog, Recordset, Row, TableSchema};
use sha2::{Digest, Sha256};

use crate::config::{churn_action, ChurnAction, Resolved, ScenarioConfig};
use crate::oracle::{is_sub_multiset, multiset_eq, oracle};
use crate::schema::{self, SchemaFile};
use crate::{alloc_counter, csv_io, datagen, ConfigError};

pub const REL_TOL: f64 = 1e-9;

/// Stable overlay identifier of the peer at `index`. Independent of the seed
/// so that one topology can be rerun under many seeds.
pub fn peer_id(index: usize) -> PeerId {
    let mut h = Sha256::new();
    h.update(b"peer");
    h.update((index as u64).to_be_bytes());
    let d = h.finalize();
    let mut b = [0u8; 16];
    b.copy_from_slice(&d[..16]);
    PeerId(u128::from_be_bytes(b).max(1))
}

/// A validated config with its data loaded and placed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub resolved: Resolved,
    pub schemas: Vec<TableSchema>,
    /// Every initial peer's rows together.
    pub union: Catalog,
    /// Catalog of each initial peer.
    pub catalogs: Vec<Catalog>,
}

impl Scenario {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Scenario::from_config(ScenarioConfig::load(path)?)
    }

    /// Read the schema and data files named by `config`, generate rows if
    /// asked, and place everything on the initial peers.
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.resolve()?;
        let schemas = match &config.schema {
            Some(p) => SchemaFile::load(p)?.to_schemas()?,
            None => schema::to_schemas(&config.table)?,
        };
        let mut rows: Vec<(String, Option<usize>, Vec<Row>)> = Vec::new();
        for (i, d) in config.data.iter().enumerate() {
            let s = schemas
                .iter()
                .find(|s| s.name.eq_ignore_ascii_case(&d.table))
                .ok_or_else(|| ConfigError::field(format!("data[{i}].table"), format!("unknown table {:?}", d.table)))?;
            let f = File::open(&d.file).map_err(|e| ConfigError::io(&d.file, e))?;
            let r = csv_io::read_rows(s, f).map_err(|source| ConfigError::Csv { path: d.file.clone(), source })?;
            rows.push((s.name.clone(), d.peer, r));
        }
        if let Some(g) = &config.generate {
            for s in &schemas {
                rows.push((s.name.clone(), None, datagen::random_rows(s, g.rows, config.seed)));
            }
        }
        Scenario::with_rows(config, schemas, rows)
    }

    /// Place `rows` (table, optional pinned peer, rows) on the initial peers.
    pub fn with_rows(
        config: ScenarioConfig,
        schemas: Vec<TableSchema>,
        rows: Vec<(String, Option<usize>, Vec<Row>)>,
    ) -> Result<Self, ConfigError> {
        let resolved = config.resolve()?;
        let empty = Catalog::new(schemas.clone()).map_err(|e| ConfigError::field("table", e.to_string()))?;
        let mut union = empty.clone();
        let mut catalogs = vec![empty; config.peers];
        let mut placed = 0usize;
        for (table, pin, batch) in rows {
            union.insert_rows(&table, batch.clone()).map_err(|e| ConfigError::field("data", e.to_string()))?;
            let targets = match pin {
                Some(p) => vec![p; batch.len()],
                None => {
                    // offset by what was placed before so tables interleave
                    let t = datagen::place(placed + batch.len(), config.peers, resolved.placement, config.seed);
                    t[placed..].to_vec()
                }
            };
            placed += batch.len();
            let mut per_peer: Vec<Vec<Row>> = vec![Vec::new(); config.peers];
            for (row, p) in batch.into_iter().zip(targets) {
                per_peer[p].push(row);
            }
            for (c, r) in catalogs.iter_mut().zip(per_peer) {
                c.insert_rows(&table, r).map_err(|e| ConfigError::field("data", e.to_string()))?;
            }
        }
        Ok(Scenario { config, resolved, schemas, union, catalogs })
    }

    fn sim_config(&self, keep_log: bool) -> SimConfig {
        let c = &self.config;
        SimConfig {
            peer: PeerConfig {
                fanout: c.fanout,
                decay: self.resolved.decay,
                strategy: self.resolved.strategy,
                merge_mutation: self.resolved.merge_mutation,
                seed: c.seed,
            },
            transport: TransportModel::new(self.resolved.latency, c.loss, c.seed),
            keep_log,
        }
    }

    /// Build the simulator with peers, churn and faults in place.
    pub fn build(&self, keep_log: bool) -> Simulator {
        let mut sim = Simulator::new(self.sim_config(keep_log));
        for f in &self.config.faults {
            sim.set_fault(peer_id(f.peer), PeerFault::LocalExec);
        }
        for (i, c) in self.catalogs.iter().enumerate() {
            sim.add_peer(peer_id(i), c.clone()).expect("peer ids are distinct");
        }
        for c in &self.config.churn {
            match churn_action(&c.action).expect("validated") {
                ChurnAction::Join => sim.schedule_join(c.time, peer_id(c.peer), self.union.empty_like()),
                ChurnAction::Leave => sim.schedule_leave(c.time, peer_id(c.peer)),
            }
        }
        sim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Equal to the oracle.
    Match,
    /// A proper sub-multiset of the oracle rows (simple queries, partial coverage).
    Subset,
    /// Differs from the oracle, but some peer's data was not covered.
    Partial,
    /// Differs from the oracle although it should not.
    Mismatch,
    Failed,
    /// Not finished by the horizon.
    Incomplete,
    /// Submission refused.
    Rejected,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Match => "match",
            Verdict::Subset => "subset",
            Verdict::Partial => "partial",
            Verdict::Mismatch => "mismatch",
            Verdict::Failed => "failed",
            Verdict::Incomplete => "incomplete",
            Verdict::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metrics {
    pub peers_included: usize,
    pub duplicates_suppressed: u64,
    pub late_or_lost: u64,
    /// Virtual ms from submission to completion.
    pub completion_time: Option<u64>,
    pub messages_total: u64,
    pub initiator_inbound: u64,
}

#[derive(Debug, Clone)]
pub struct QueryReport {
    pub index: usize,
    pub sql: String,
    pub initiator: usize,
    pub submitted_at: u64,
    pub uqi: Option<Uqi>,
    pub state: Option<State>,
    pub verdict: Verdict,
    /// Rejection or failure diagnostic.
    pub error: Option<String>,
    pub metrics: Metrics,
    pub result: Option<Recordset>,
    pub expected: Option<Recordset>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub queries: Vec<QueryReport>,
    pub event_digest: String,
    /// SHA-256 over every query's state and result CSV.
    pub results_digest: String,
    pub events: u64,
    pub final_time: u64,
    pub quiescent: bool,
    /// Peak heap use during the run, when the counting allocator is installed.
    pub peak_alloc_bytes: Option<u64>,
    pub log: Vec<String>,
}

impl RunReport {
    /// No comparison with the oracle failed.
    pub fn passed(&self) -> bool {
        self.queries.iter().all(|q| q.verdict != Verdict::Mismatch)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for q in &self.queries {
            let state = q.state.map_or("-", State::as_str);
            let uqi = q.uqi.map(|u| u.to_string()).unwrap_or_else(|| "-".into());
            let _ = write!(
                s,
                "query {} uqi={} state={} verdict={} peers_included={} messages_total={}",
                q.index,
                uqi,
                state,
                q.verdict.as_str(),
                q.metrics.peers_included,
                q.metrics.messages_total
            );
            if let Some(e) = &q.error {
                let _ = write!(s, " error={e:?}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "events={} final_time={} quiescent={}", self.events, self.final_time, self.quiescent);
        if let Some(p) = self.peak_alloc_bytes {
            let _ = writeln!(s, "peak_alloc_bytes={p}");
        }
        let _ = writeln!(s, "event_digest={}", self.event_digest);
        let _ = writeln!(s, "results_digest={}", self.results_digest);
        let _ = writeln!(s, "{}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(
            "query,uqi,state,verdict,peers_included,duplicates_suppressed,late_or_lost,completion_time,messages_total,initiator_inbound\n",
        );
        for q in &self.queries {
            let m = &q.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                q.index,
                q.uqi.map(|u| u.to_string()).unwrap_or_default(),
                q.state.map_or("", State::as_str),
                q.verdict.as_str(),
                m.peers_included,
                m.duplicates_suppressed,
                m.late_or_lost,
                m.completion_time.map(|t| t.to_string()).unwrap_or_default(),
                m.messages_total,
                m.initiator_inbound
            );
        }
        s
    }
}

/// A finished simulation together with the uqis the workload produced.
pub struct Replay {
    pub sim: Simulator,
    /// Per workload entry, in config order.
    pub submissions: Vec<Result<Uqi, String>>,
    pub quiescent: bool,
}

/// Play the workload up to `config.horizon` without judging anything.
pub fn replay(scenario: &Scenario, keep_log: bool) -> Replay {
    let cfg = &scenario.config;
    let mut sim = scenario.build(keep_log);
    let mut order: Vec<usize> = (0..cfg.workload.len()).collect();
    order.sort_by_key(|&i| cfg.workload[i].time);
    let mut submissions = vec![Err("not submitted before the horizon".to_string()); cfg.workload.len()];
    for i in order {
        let w = &cfg.workload[i];
        if w.time > cfg.horizon {
            continue;
        }
        sim.run_until(w.time);
        submissions[i] = sim.submit(peer_id(w.initiator), &w.sql, w.ttl).map_err(|e| e.to_string());
    }
    let quiescent = sim.run_until(cfg.horizon);
    Replay { sim, submissions, quiescent }
}

pub fn run_scenario(scenario: &Scenario) -> RunReport {
    run_scenario_logged(scenario, false)
}

/// Like [`run_scenario`], keeping the event log lines in the report.
pub fn run_scenario_logged(scenario: &Scenario, keep_log: bool) -> RunReport {
    alloc_counter::reset_peak();
    let rep = replay(scenario, keep_log);
    let peak_alloc_bytes = alloc_counter::peak();
    let sim = &rep.sim;
    let cfg = &scenario.config;
    let mut queries = Vec::new();
    let mut digest = Sha256::new();
    for (i, (w, sub)) in cfg.workload.iter().zip(&rep.submissions).enumerate() {
        let mut q = QueryReport {
            index: i,
            sql: w.sql.clone(),
            initiator: w.initiator,
            submitted_at: w.time,
            uqi: None,
            state: None,
            verdict: Verdict::Rejected,
            error: None,
            metrics: Metrics::default(),
            result: None,
            expected: None,
        };
        match sub {
            Err(e) => q.error = Some(e.clone()),
            Ok(uqi) => {
                q.uqi = Some(*uqi);
                judge(scenario, sim, &mut q, *uqi);
            }
        }
        digest.update(format!("{i},{}\n", q.state.map_or("-", State::as_str)).as_bytes());
        if let Some(rs) = &q.result {
            let mut out = Vec::new();
            csv_io::write_recordset(rs, &mut out).expect("writing to memory");
            digest.update(&out);
        }
        queries.push(q);
    }
    RunReport {
        queries,
        event_digest: sim.digest(),
        results_digest: hex(&digest.finalize()),
        events: sim.events_processed(),
        final_time: sim.now(),
        quiescent: rep.quiescent,
        peak_alloc_bytes,
        log: sim.log_lines().to_vec(),
    }
}

fn judge(scenario: &Scenario, sim: &Simulator, q: &mut QueryReport, uqi: Uqi) {
    let init = peer_id(q.initiator);
    let Some(node) = sim.peer(init) else { return };
    let status = match node.fetch_results(&uqi) {
        Ok(s) => s,
        Err(e) => {
            q.error = Some(e.to_string());
            return;
        }
    };
    q.state = Some(status.state);
    let phases = node.phase_uqis(&uqi);
    let traffic = sim.traffic(&phases);
    let mut m = Metrics {
        peers_included: status.contributors.len(),
        messages_total: traffic.messages_total(),
        initiator_inbound: traffic.initiator_inbound,
        late_or_lost: traffic.results_dropped,
        completion_time: status.completed_at.map(|t| t - q.submitted_at),
        ..Metrics::default()
    };
    for p in sim.peers() {
        for ph in &phases {
            let c = p.counters(ph);
            m.duplicates_suppressed += c.duplicates;
            m.late_or_lost += c.discarded;
        }
    }
    q.metrics = m;
    match status.state {
        State::Completed => {}
        State::Failed => {
            q.verdict = Verdict::Failed;
            q.error = status.failure;
            return;
        }
        _ => {
            q.verdict = Verdict::Incomplete;
            return;
        }
    }
    let Some(got) = status.result else {
        q.verdict = Verdict::Incomplete;
        return;
    };
    let expected = match oracle(&q.sql, &scenario.union) {
        Ok(e) => e,
        Err(e) => {
            q.error = Some(format!("oracle: {e}"));
            q.verdict = Verdict::Mismatch;
            q.result = Some(got);
            return;
        }
    };
    let covered = (0..scenario.config.peers).all(|i| status.contributors.contains(&peer_id(i)));
    let simple = plan(&q.sql).map(|p| p.kind == QueryKind::Simple).unwrap_or(false);
    q.verdict = if multiset_eq(&got, &expected, REL_TOL) {
        Verdict::Match
    } else if covered {
        Verdict::Mismatch
    } else if simple {
        if is_sub_multiset(&got, &expected) {
            Verdict::Subset
        } else {
            Verdict::Mismatch
        }
    } else {
        Verdict::Partial
    };
    q.result = Some(got);
    q.expected = Some(expected);
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub ttl: u64,
    pub mean_peers_included: f64,
    /// Over completed queries; `None` when none completed.
    pub mean_completion_time: Option<f64>,
}

/// Rerun the workload with every ttl set to each of `ttls`, `repetitions`
/// times with seeds `seed, seed + 1, ...`. Queries that did not complete
/// count as including no peers.
pub fn sweep_ttl(scenario: &Scenario, ttls: &[u64], repetitions: usize) -> Result<Vec<SweepRow>, ConfigError> {
    if ttls.len() < 2 {
        return Err(ConfigError::field("ttls", "give at least two ttl values"));
    }
    if repetitions == 0 {
        return Err(ConfigError::field("repetitions", "must be at least 1"));
    }
    if scenario.config.workload.is_empty() {
        return Err(ConfigError::field("workload", "nothing to sweep"));
    }
    let mut out = Vec::new();
    for &ttl in ttls {
        let (mut included, mut n) = (0usize, 0usize);
        let (mut time, mut done) = (0u64, 0usize);
        for r in 0..repetitions {
            let mut s = scenario.clone();
            s.config.seed = scenario.config.seed.wrapping_add(r as u64);
            for w in &mut s.config.workload {
                w.ttl = ttl;
            }
            for q in run_scenario(&s).queries {
                n += 1;
                if q.state == Some(State::Completed) {
                    included += q.metrics.peers_included;
                    if let Some(t) = q.metrics.completion_time {
                        time += t;
                        done += 1;
                    }
                }
            }
        }
        out.push(SweepRow {
            ttl,
            mean_peers_included: included as f64 / n as f64,
            mean_completion_time: (done > 0).then(|| time as f64 / done as f64),
        });
    }
    Ok(out)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("ttl,mean_peers_included,mean_completion_time\n");
    for r in rows {
        let t = r.mean_completion_time.map(|t| format!("{t:.3}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.3},{t}", r.ttl, r.mean_peers_included);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorkloadSpec;
    use idss_core::storage::ColumnDef;
    use idss_core::{ColumnType, Value};

    fn cpu_scenario(peers: usize, sql: &str, ttl: u64) -> Scenario {
        let mut c = ScenarioConfig::new(peers);
        c.workload.push(WorkloadSpec { time: 0, initiator: 0, sql: sql.into(), ttl });
        let s = TableSchema::new(
            "tb_cpu_dynamic",
            vec![ColumnDef::new("cpu_id", ColumnType::Integer), ColumnDef::new("load", ColumnType::Real)],
        )
        .unwrap();
        c.table = vec![crate::schema::TableSpec {
            name: "tb_cpu_dynamic".into(),
            columns: vec![
                crate::schema::ColumnSpec { name: "cpu_id".into(), ty: "integer".into(), nullable: true },
                crate::schema::ColumnSpec { name: "load".into(), ty: "real".into(), nullable: true },
            ],
        }];
        let rows = (0..40).map(|i| vec![Value::Integer(i), Value::Real((i % 10) as f64 / 10.0)]).collect();
        Scenario::with_rows(c, vec![s], vec![("tb_cpu_dynamic".into(), None, rows)]).unwrap()
    }

    #[test]
    fn peer_ids_distinct() {
        let ids: std::collections::BTreeSet<_> = (0..2000).map(peer_id).collect();
        assert_eq!(ids.len(), 2000);
    }

    #[test]
    fn baseline_eight_peers_match() {
        let s = cpu_scenario(8, "SELECT * FROM tb_cpu_dynamic WHERE load > 0.1", 1_000_000_000);
        let r = run_scenario(&s);
        let q = &r.queries[0];
        assert_eq!(q.verdict, Verdict::Match, "{}", r.summary());
        assert_eq!(q.metrics.peers_included, 8);
        assert!(r.passed());
        assert_eq!(run_scenario(&s).event_digest, r.event_digest);
    }

    #[test]
    fn tiny_ttl_only_initiator() {
        let s = cpu_scenario(8, "SELECT count(*) FROM tb_cpu_dynamic", 1);
        let q = &run_scenario(&s).queries[0];
        assert_eq!(q.metrics.peers_included, 1);
        assert_eq!(q.verdict, Verdict::Partial);
    }

    #[test]
    fn mutation_is_caught() {
        let mut s = cpu_scenario(8, "SELECT sum(cpu_id), avg(load) FROM tb_cpu_dynamic", 1_000_000_000);
        s.config.merge_mutation = "sum_takes_max".into();
        s.resolved = s.config.resolve().unwrap();
        let r = run_scenario(&s);
        assert_eq!(r.queries[0].verdict, Verdict::Mismatch);
        assert!(!r.passed());
    }

    #[test]
    fn rejected_submission_recorded() {
        let s = cpu_scenario(2, "SELECT nope FROM tb_cpu_dynamic", 100);
        let q = &run_scenario(&s).queries[0];
        assert_eq!(q.verdict, Verdict::Rejected);
        assert!(q.error.is_some());
    }

    #[test]
    fn sweep_needs_two_ttls() {
        let s = cpu_scenario(4, "SELECT * FROM tb_cpu_dynamic", 100);
        assert!(sweep_ttl(&s, &[100], 1).is_err());
        let rows = sweep_ttl(&s, &[1, 1_000_000_000], 2).unwrap();
        assert_eq!(rows[0].mean_peers_included, 1.0);
        assert_eq!(rows[1].mean_peers_included, 4.0);
    }
}
