//! One peer: QUERY table, local store and merge buffers, driven by messages
//! and timers. Handlers never perform IO; they append [`Action`]s.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::merge::{
    finalize, finalize_nested, on_deadline, DeadlineAction, DecayFactor, MergeBuffer, MergeMutation,
    Partial, Strategy,
};
use crate::overlay::{Membership, MessageBody, OverlayMessage, PeerId, ResultPayload};
use crate::query_state::{new_uqi, QueryRecord, QueryTable, Recorded, State, Uqi};
use crate::sql::{plan, ExecutablePlan, QueryKind, QueryPlan, SqlError, SubqueryValue};
use crate::storage::{execute_local, Catalog, Recordset, StorageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerConfig {
    pub fanout: usize,
    pub decay: DecayFactor,
    pub strategy: Strategy,
    pub merge_mutation: MergeMutation,
    /// Seed mixed into every identifier this peer assigns.
    pub seed: u64,
}

impl Default for PeerConfig {
    fn default() -> Self {
        PeerConfig {
            fanout: 3,
            decay: DecayFactor::default(),
            strategy: Strategy::default(),
            merge_mutation: MergeMutation::None,
            seed: 0,
        }
    }
}

/// Injected misbehaviour of a single peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeerFault {
    #[default]
    None,
    /// Every local execution fails.
    LocalExec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send(OverlayMessage),
    /// Call [`PeerNode::on_timer`] for `uqi` at virtual time `at`.
    Timer { at: u64, uqi: Uqi },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("ttl must be positive")]
    InvalidTtl,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeerError {
    #[error("unknown uqi {0}")]
    UnknownUqi(Uqi),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryStatus {
    pub uqi: Uqi,
    pub state: State,
    /// Present iff this peer initiated the query and it completed.
    pub result: Option<Recordset>,
    pub failure: Option<String>,
    /// Peers whose local data the result covers; for nested queries, those
    /// covered by every phase. Empty unless completed on the initiator.
    pub contributors: Vec<PeerId>,
    pub completed_at: Option<u64>,
}

/// Per-uqi observations used for metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UqiCounters {
    pub duplicates: u64,
    /// Results that found no open buffer, or did not merge.
    pub discarded: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Role {
    /// Simple or aggregate query: the phase is the user query itself.
    Whole,
    Sub { slot: usize },
    Parent,
}

#[derive(Debug, Clone)]
struct Phase {
    user: Uqi,
    role: Role,
    plan: ExecutablePlan,
}

/// Initiator-side ledger entry linking a user query to its phases.
#[derive(Debug, Clone)]
struct Submission {
    plan: QueryPlan,
    ttl: u64,
    phases: Vec<Uqi>,
    values: BTreeMap<usize, SubqueryValue>,
    pending_subs: usize,
    result: Option<Recordset>,
    contributors: Vec<PeerId>,
    /// Peers reflected in every phase finished so far.
    coverage: Option<Vec<PeerId>>,
    completed_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct PeerNode {
    pub id: PeerId,
    pub catalog: Catalog,
    pub config: PeerConfig,
    pub fault: PeerFault,
    table: QueryTable,
    buffers: BTreeMap<Uqi, MergeBuffer>,
    ledger: BTreeMap<Uqi, Submission>,
    phases: BTreeMap<Uqi, Phase>,
    failures: BTreeMap<Uqi, String>,
    counters: BTreeMap<Uqi, UqiCounters>,
    submissions: u64,
}

impl PeerNode {
    pub fn new(id: PeerId, catalog: Catalog, config: PeerConfig) -> Self {
        PeerNode {
            id,
            catalog,
            config,
            fault: PeerFault::None,
            table: QueryTable::new(),
            buffers: BTreeMap::new(),
            ledger: BTreeMap::new(),
            phases: BTreeMap::new(),
            failures: BTreeMap::new(),
            counters: BTreeMap::new(),
            submissions: 0,
        }
    }

    pub fn query_table(&self) -> &QueryTable {
        &self.table
    }

    pub fn counters(&self, uqi: &Uqi) -> UqiCounters {
        self.counters.get(uqi).copied().unwrap_or_default()
    }

    /// Internal identifiers broadcast for a user query this peer initiated.
    pub fn phase_uqis(&self, user: &Uqi) -> Vec<Uqi> {
        self.ledger.get(user).map(|s| s.phases.clone()).unwrap_or_default()
    }

    /// Accept a user query. Returns as soon as the first broadcasts are
    /// queued; results are collected with [`PeerNode::fetch_results`].
    pub fn submit_query(
        &mut self,
        now: u64,
        ring: &Membership,
        sql: &str,
        ttl: u64,
        out: &mut Vec<Action>,
    ) -> Result<Uqi, SubmitError> {
        let plan = plan(sql)?;
        plan.check_against(&self.catalog)?;
        if ttl == 0 {
            return Err(SubmitError::InvalidTtl);
        }
        let uqi = new_uqi(&plan.canonical_sql(), self.id, self.submissions, self.config.seed);
        self.submissions += 1;

        match plan.kind {
            QueryKind::Simple | QueryKind::Aggregate => {
                let exec = plan.parent.clone().expect("non-nested plans carry a parent");
                self.ledger.insert(uqi, Submission::new(plan, ttl, alloc::vec![uqi], 0));
                self.phases.insert(uqi, Phase { user: uqi, role: Role::Whole, plan: exec.clone() });
                self.start_phase(now, ring, uqi, &exec, ttl, out);
            }
            QueryKind::Nested => {
                let d = plan.nested.clone().expect("nested plans carry a decomposition");
                let m = d.subplans.len() as u64;
                let sub_ttl = (ttl / 2) / m;
                let mut phases: Vec<Uqi> = (0..d.subplans.len()).map(|i| uqi.derive(i as u32 + 1)).collect();
                phases.push(uqi.derive(0));
                let canonical = plan.canonical_sql();
                self.table.record_if_new(QueryRecord::new(uqi, canonical, now, ttl, PeerId::INITIATOR_SENTINEL));
                self.ledger.insert(uqi, Submission::new(plan, ttl, phases.clone(), d.subplans.len()));
                for (i, (slot, sub)) in d.subplans.iter().enumerate() {
                    self.phases.insert(phases[i], Phase { user: uqi, role: Role::Sub { slot: *slot }, plan: sub.clone() });
                }
                if self.state_of(&uqi) == Some(State::Queued) {
                    let _ = self.table.transition(&uqi, State::LocallyExecuted);
                }
                for (i, (_, sub)) in d.subplans.iter().enumerate() {
                    self.start_phase(now, ring, phases[i], sub, sub_ttl, out);
                }
            }
        }
        Ok(uqi)
    }

    /// A QueryBroadcast arrived from `src`.
    #[allow(clippy::too_many_arguments)]
    pub fn handle_broadcast(
        &mut self,
        now: u64,
        ring: &Membership,
        src: PeerId,
        uqi: Uqi,
        sql: &str,
        ttl: u64,
        initiator: PeerId,
        out: &mut Vec<Action>,
    ) {
        let record = QueryRecord::new(uqi, sql.to_string(), now, ttl, src);
        if self.table.record_if_new(record) == Recorded::Duplicate {
            self.counters.entry(uqi).or_default().duplicates += 1;
            return;
        }
        let children = self.forward(now, ring, uqi, sql, ttl, Some(src), initiator, out);
        let local = ExecutablePlan::from_wire(sql)
            .map_err(|e| e.to_string())
            .and_then(|p| self.execute(&p));
        let local = match local {
            Ok(p) => p,
            Err(reason) => return self.fail(uqi, reason),
        };
        let _ = self.table.transition(&uqi, State::LocallyExecuted);
        match self.config.strategy {
            Strategy::IntermediateCollector => {
                self.open_buffer(now, ring, uqi, ttl, local, children, out);
            }
            Strategy::InitiatorCollector => {
                let _ = self.table.transition(&uqi, State::Completed);
                let payload = ResultPayload { data: local, contributors: alloc::vec![self.id] };
                self.send_result(now, initiator, uqi, payload, out);
                let _ = self.table.transition(&uqi, State::SentBack);
            }
        }
    }

    /// A ResultReturn arrived.
    pub fn handle_result(
        &mut self,
        now: u64,
        ring: &Membership,
        uqi: Uqi,
        payload: ResultPayload,
        out: &mut Vec<Action>,
    ) {
        let mutation = self.config.merge_mutation;
        let complete = match self.buffers.get_mut(&uqi) {
            Some(buf) => match buf.absorb(payload, mutation) {
                Ok(()) => buf.is_complete(),
                Err(_) => {
                    self.counters.entry(uqi).or_default().discarded += 1;
                    false
                }
            },
            None => {
                self.counters.entry(uqi).or_default().discarded += 1;
                false
            }
        };
        if complete {
            self.close(now, ring, uqi, out);
        }
    }

    pub fn on_timer(&mut self, now: u64, ring: &Membership, uqi: Uqi, out: &mut Vec<Action>) {
        if self.buffers.get(&uqi).is_some_and(|b| now >= b.deadline) {
            self.close(now, ring, uqi, out);
        }
    }

    pub fn fetch_results(&self, uqi: &Uqi) -> Result<QueryStatus, PeerError> {
        let record = self.table.get(uqi).ok_or(PeerError::UnknownUqi(*uqi))?;
        let state = record.state();
        let sub = self.ledger.get(uqi).filter(|_| state == State::Completed);
        Ok(QueryStatus {
            uqi: *uqi,
            state,
            result: sub.and_then(|s| s.result.clone()),
            failure: self.failures.get(uqi).cloned(),
            contributors: sub.map(|s| s.contributors.clone()).unwrap_or_default(),
            completed_at: sub.and_then(|s| s.completed_at),
        })
    }

    fn state_of(&self, uqi: &Uqi) -> Option<State> {
        self.table.get(uqi).map(QueryRecord::state)
    }

    fn execute(&self, plan: &ExecutablePlan) -> Result<Partial, String> {
        if self.fault == PeerFault::LocalExec {
            return Err(StorageError::InjectedFault.to_string());
        }
        let rs = execute_local(&self.catalog, plan).map_err(|e| e.to_string())?;
        Partial::from_local(plan, rs).map_err(|e| e.to_string())
    }

    fn fail(&mut self, uqi: Uqi, reason: String) {
        if self.table.transition(&uqi, State::Failed).is_ok() {
            self.failures.insert(uqi, reason);
        }
    }

    /// Broadcast one phase from this peer as its initiator.
    fn start_phase(&mut self, now: u64, ring: &Membership, uqi: Uqi, plan: &ExecutablePlan, ttl: u64, out: &mut Vec<Action>) {
        let sql = plan.sql();
        self.table.record_if_new(QueryRecord::new(uqi, sql.clone(), now, ttl, PeerId::INITIATOR_SENTINEL));
        let children = self.forward(now, ring, uqi, &sql, ttl, None, self.id, out);
        let local = match self.execute(plan) {
            Ok(p) => p,
            Err(reason) => {
                self.fail(uqi, reason.clone());
                return self.phase_failed(uqi, reason);
            }
        };
        let _ = self.table.transition(&uqi, State::LocallyExecuted);
        let expected = match self.config.strategy {
            Strategy::IntermediateCollector => children,
            Strategy::InitiatorCollector => ring.len().saturating_sub(1),
        };
        self.open_buffer(now, ring, uqi, ttl, local, expected, out);
    }

    /// Send the query on to this peer's children; returns how many.
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &mut self,
        now: u64,
        ring: &Membership,
        uqi: Uqi,
        sql: &str,
        ttl: u64,
        sender: Option<PeerId>,
        initiator: PeerId,
        out: &mut Vec<Action>,
    ) -> usize {
        let next = crate::merge::ttl_decay(ttl, self.config.decay);
        if next == 0 {
            return 0;
        }
        let mut n = 0;
        for child in ring.broadcast_children(self.id, self.config.fanout) {
            if Some(child) == sender {
                continue;
            }
            out.push(Action::Send(OverlayMessage {
                src: self.id,
                dst: child,
                send_time: now,
                body: MessageBody::QueryBroadcast {
                    uqi,
                    sql: sql.to_string(),
                    ttl: next,
                    sender_key: self.id,
                    initiator,
                },
            }));
            n += 1;
        }
        n
    }

    #[allow(clippy::too_many_arguments)]
    fn open_buffer(
        &mut self,
        now: u64,
        ring: &Membership,
        uqi: Uqi,
        ttl: u64,
        local: Partial,
        expected: usize,
        out: &mut Vec<Action>,
    ) {
        let buf = MergeBuffer::open(uqi, now, ttl, local, self.id, expected);
        let (deadline, complete) = (buf.deadline, buf.is_complete());
        self.buffers.insert(uqi, buf);
        if complete {
            self.close(now, ring, uqi, out);
        } else {
            out.push(Action::Timer { at: deadline, uqi });
        }
    }

    fn send_result(&self, now: u64, to: PeerId, uqi: Uqi, payload: ResultPayload, out: &mut Vec<Action>) {
        out.push(Action::Send(OverlayMessage {
            src: self.id,
            dst: to,
            send_time: now,
            body: MessageBody::ResultReturn { uqi, payload, origin: self.id },
        }));
    }

    fn close(&mut self, now: u64, ring: &Membership, uqi: Uqi, out: &mut Vec<Action>) {
        let Some(buf) = self.buffers.remove(&uqi) else { return };
        let Some(sender) = self.table.get(&uqi).map(|r| r.sender_key) else { return };
        match on_deadline(buf, sender) {
            DeadlineAction::SendBack { to, payload } => {
                let _ = self.table.transition(&uqi, State::Completed);
                self.send_result(now, to, uqi, payload, out);
                let _ = self.table.transition(&uqi, State::SentBack);
            }
            DeadlineAction::Deliver(payload) => self.deliver(now, ring, uqi, payload, out),
        }
    }

    /// A phase this peer initiated has its final merged result.
    fn deliver(&mut self, now: u64, ring: &Membership, uqi: Uqi, payload: ResultPayload, out: &mut Vec<Action>) {
        let Some(phase) = self.phases.get(&uqi).cloned() else { return };
        let rs = match finalize(&phase.plan, payload.data) {
            Ok(rs) => rs,
            Err(e) => {
                self.fail(uqi, e.to_string());
                return self.phase_failed(uqi, e.to_string());
            }
        };
        let _ = self.table.transition(&uqi, State::Completed);
        let user = phase.user;
        match phase.role {
            Role::Whole => self.complete_user(now, user, Ok(rs), payload.contributors),
            Role::Sub { slot } => {
                let Some(sub) = self.ledger.get_mut(&user) else { return };
                sub.narrow_coverage(payload.contributors);
                let Some(d) = sub.plan.nested.as_ref() else { return };
                sub.values.insert(slot, SubqueryValue::from_result(d.subquery_kind, &rs));
                sub.pending_subs -= 1;
                if sub.pending_subs > 0 {
                    return;
                }
                let parent = d.bind_skeleton(&sub.values);
                let parent_ttl = sub.ttl - sub.ttl / 2;
                let parent_uqi = *sub.phases.last().expect("parent phase id");
                match parent {
                    Ok(p) => {
                        self.phases.insert(parent_uqi, Phase { user, role: Role::Parent, plan: p.clone() });
                        self.start_phase(now, ring, parent_uqi, &p, parent_ttl, out);
                    }
                    Err(e) => self.complete_user(now, user, Err(e.to_string()), Vec::new()),
                }
            }
            Role::Parent => {
                let Some(sub) = self.ledger.get_mut(&user) else { return };
                sub.narrow_coverage(payload.contributors);
                let d = sub.plan.nested.as_ref().expect("parent phase of a nested plan");
                let result = finalize_nested(d, &sub.values, rs).map_err(|e| e.to_string());
                let covered = sub.coverage.clone().unwrap_or_default();
                self.complete_user(now, user, result, covered);
            }
        }
    }

    fn phase_failed(&mut self, phase: Uqi, reason: String) {
        let Some(p) = self.phases.get(&phase) else { return };
        let user = p.user;
        let reason = match p.role {
            Role::Sub { slot } => format!("subquery in slot {slot} produced no result: {reason}"),
            _ => reason,
        };
        if user != phase {
            self.fail(user, reason);
        }
    }

    fn complete_user(&mut self, now: u64, user: Uqi, result: Result<Recordset, String>, contributors: Vec<PeerId>) {
        match result {
            Ok(rs) => {
                if self.state_of(&user) != Some(State::Completed) {
                    let _ = self.table.transition(&user, State::Completed);
                }
                if let Some(sub) = self.ledger.get_mut(&user) {
                    sub.result = Some(rs);
                    sub.contributors = contributors;
                    sub.completed_at = Some(now);
                }
            }
            Err(reason) => self.fail(user, reason),
        }
    }
}

impl Submission {
    fn new(plan: QueryPlan, ttl: u64, phases: Vec<Uqi>, pending_subs: usize) -> Self {
        Submission {
            plan,
            ttl,
            phases,
            values: BTreeMap::new(),
            pending_subs,
            result: None,
            contributors: Vec::new(),
            coverage: None,
            completed_at: None,
        }
    }

    fn narrow_coverage(&mut self, phase: Vec<PeerId>) {
        self.coverage = Some(match self.coverage.take() {
            None => phase,
            Some(prev) => prev.into_iter().filter(|p| phase.binary_search(p).is_ok()).collect(),
        });
    }
}
