//! Deterministic virtual-time simulation of the peer network.
//!
//! A single-threaded event queue drives the same peers, orderer and contract
//! the synchronous [`Network`] uses, but every hop between nodes becomes a
//! message with a configured latency that may be dropped. Events at equal
//! times run in scheduling order and all randomness comes from one seeded
//! ChaCha stream, so a `(SimConfig, Scenario)` pair always yields the same
//! commit trace.
//!
//! Nodes are the peers, the ordering service ([`ORDERER_NODE`]) and a single
//! [`CLIENT_NODE`] that signs for every identity. A lost proposal, response,
//! envelope or query is resent by its sender after [`RETRY_MS`], up to
//! [`MAX_ATTEMPTS`] attempts. Block delivery is resent until it lands.

mod config;
mod metrics;
mod scenario;
mod workload;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

pub use config::{Latency, LinkSpec, PeerSpec, Probability, SimConfig, CLIENT_NODE, ORDERER_NODE};
pub use metrics::{Metrics, Percentiles};
pub use scenario::{Action, ActionKind, Scenario};
pub use workload::{apply_scenario, generate_chain_workload, workload_config, ApplyReport, STAGES};

use crate::chaincode::{self, QueryError, RecallReport};
use crate::codec::Doc;
use crate::hash::{hash_payload, Hash};
use crate::ledger::{Block, Validity};
use crate::membership::MAIN_CHANNEL;
use crate::network::{Network, NetworkError, Storage, TxRequest};
use crate::txflow::{assemble, Endorsement, Envelope, Proposal, TxError, TxId, CONFIG_OP};

pub const RETRY_MS: u64 = 100;
pub const MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("action {action} cannot run: {code}: {detail}")]
    Script { action: usize, code: String, detail: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl SimError {
    pub fn code(&self) -> &str {
        match self {
            SimError::Config(_) => "BAD_CONFIG",
            SimError::Script { .. } => "SCRIPT_ERROR",
            SimError::Network(e) => e.code(),
        }
    }
}

impl From<TxError> for SimError {
    fn from(e: TxError) -> Self {
        SimError::Network(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Commit { at: u64, peer: String, channel: String, block: u64, flags: Vec<Validity> },
    Query { at: u64, action: usize, affected: usize },
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub metrics: Metrics,
    pub trace: Vec<TraceEvent>,
}

impl SimOutcome {
    pub fn trace_digest(&self) -> Hash {
        hash_payload(&serde_json::to_vec(&self.trace).expect("trace serializes"))
    }
}

/// Builds the network for `config` and runs `scenario` on it.
pub fn run_scenario(config: &SimConfig, scenario: &Scenario) -> Result<SimOutcome, SimError> {
    SimNetwork::build(config)?.run(scenario)
}

enum Payload {
    Proposal { tx: usize, slot: usize },
    Endorsement { tx: usize, slot: usize, result: Result<Endorsement, TxError> },
    Envelope { tx: usize, envelope: Box<Envelope> },
    Block(Arc<Block>),
    QueryRequest { query: usize },
    QueryResponse { query: usize, result: Result<QueryAnswer, QueryError> },
}

enum Event {
    Action(usize),
    Send { from: String, to: String, attempt: u32, payload: Payload },
    Deliver { to: String, payload: Payload },
    OrdererTimer { channel: String },
}

struct SimTx {
    action: usize,
    issued: u64,
    proposal: Proposal,
    endorsements: Vec<Option<Endorsement>>,
    done: bool,
}

enum QueryKind {
    Forward { origin: String },
    Back { batch_id: String },
    Recall { actor: String, origin: String, batch_ids: Option<Vec<String>> },
}

struct SimQuery {
    action: usize,
    issued: u64,
    peer: String,
    kind: QueryKind,
}

enum QueryAnswer {
    Report(RecallReport),
    Trace(usize),
}

struct InFlight {
    remaining: usize,
    counted: bool,
    txs: Vec<usize>,
}

pub struct SimNetwork {
    net: Network,
    rng: ChaCha20Rng,
    drop: Probability,
    default_latency: u64,
    links: HashMap<(String, String), u64>,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: HashMap<u64, Event>,
    seq: u64,
    now: u64,
    actions: Vec<Action>,
    txs: Vec<SimTx>,
    tx_by_id: HashMap<TxId, usize>,
    queries: Vec<SimQuery>,
    timers: BTreeSet<(String, u64)>,
    in_flight: BTreeMap<(String, u64), InFlight>,
    buffered: BTreeMap<(String, String), BTreeMap<u64, Arc<Block>>>,
    latencies: Vec<u64>,
    metrics: Metrics,
    trace: Vec<TraceEvent>,
}

impl SimNetwork {
    /// Bootstraps membership, orderer and peers at virtual time 0. The main
    /// channel holds every non-consumer identity.
    pub fn build(config: &SimConfig) -> Result<SimNetwork, SimError> {
        let net = Network::bootstrap_at(config.network_config()?, Storage::Memory, 0)?;
        Ok(SimNetwork {
            net,
            rng: ChaCha20Rng::seed_from_u64(config.rng_seed),
            drop: config.drop_probability,
            default_latency: config.link_latency_ms.default,
            links: config.link_table(),
            queue: BinaryHeap::new(),
            events: HashMap::new(),
            seq: 0,
            now: 0,
            actions: Vec::new(),
            txs: Vec::new(),
            tx_by_id: HashMap::new(),
            queries: Vec::new(),
            timers: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            buffered: BTreeMap::new(),
            latencies: Vec::new(),
            metrics: Metrics::default(),
            trace: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Runs `scenario` to quiescence. A refusal is a script error as long as
    /// no message has been lost yet; after a loss it is only counted.
    pub fn run(&mut self, scenario: &Scenario) -> Result<SimOutcome, SimError> {
        let started = Instant::now();
        self.metrics = Metrics::default();
        self.latencies.clear();
        let base = self.actions.len();
        let mut order: Vec<usize> = (0..scenario.actions.len()).collect();
        order.sort_by_key(|&i| scenario.actions[i].at);
        self.actions.extend(scenario.actions.iter().cloned());
        for i in order {
            self.schedule(scenario.actions[i].at.max(self.now), Event::Action(base + i));
        }
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            self.now = at;
            let event = self.events.remove(&seq).expect("queued event");
            self.handle(event)?;
        }
        self.metrics.virtual_end_ms = self.now;
        self.metrics.commit_latency_ms = Percentiles::of(&self.latencies);
        self.metrics.end_to_end_wallclock_ms = started.elapsed().as_millis() as u64;
        Ok(SimOutcome { metrics: self.metrics.clone(), trace: std::mem::take(&mut self.trace) })
    }

    fn schedule(&mut self, at: u64, event: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.events.insert(seq, event);
        self.queue.push(Reverse((at, seq)));
    }

    fn latency(&self, from: &str, to: &str) -> u64 {
        self.links.get(&(from.to_string(), to.to_string())).copied().unwrap_or(self.default_latency)
    }

    fn send(&mut self, from: &str, to: &str, payload: Payload) -> Result<(), SimError> {
        self.transmit(from.to_string(), to.to_string(), 0, payload)
    }

    fn transmit(&mut self, from: String, to: String, attempt: u32, payload: Payload) -> Result<(), SimError> {
        if !self.drop.sample(&mut self.rng) {
            let at = self.now + self.latency(&from, &to);
            self.schedule(at, Event::Deliver { to, payload });
            return Ok(());
        }
        self.metrics.dropped_messages += 1;
        if matches!(payload, Payload::Block(_)) || attempt + 1 < MAX_ATTEMPTS {
            self.schedule(self.now + RETRY_MS, Event::Send { from, to, attempt: attempt + 1, payload });
        } else {
            self.give_up(payload);
        }
        Ok(())
    }

    fn give_up(&mut self, payload: Payload) {
        match payload {
            Payload::Proposal { tx, .. } | Payload::Endorsement { tx, .. } => {
                if !self.txs[tx].done {
                    self.txs[tx].done = true;
                    self.metrics.abandoned_tx += 1;
                }
            }
            Payload::Envelope { .. } => self.metrics.abandoned_tx += 1,
            Payload::QueryRequest { .. } | Payload::QueryResponse { .. } => self.metrics.abandoned_tx += 1,
            Payload::Block(_) => unreachable!("blocks are resent until delivered"),
        }
    }

    fn refuse(&mut self, action: usize, code: &str, detail: String) -> Result<(), SimError> {
        if self.metrics.dropped_messages == 0 {
            return Err(SimError::Script { action, code: code.to_string(), detail });
        }
        self.metrics.refused_tx += 1;
        Ok(())
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Action(i) => self.start_action(i),
            Event::Send { from, to, attempt, payload } => self.transmit(from, to, attempt, payload),
            Event::Deliver { to, payload } => self.deliver(to, payload),
            Event::OrdererTimer { channel } => {
                self.timers.remove(&(channel.clone(), self.now));
                self.cut(&channel)
            }
        }
    }

    fn start_action(&mut self, i: usize) -> Result<(), SimError> {
        let kind = self.actions[i].kind.clone();
        match kind {
            ActionKind::Submit { actor, op, channel, args } => self.start_tx(i, TxRequest::new(&actor, &channel, &op, args)),
            ActionKind::CreateChannel { name, members } => {
                self.net.set_time(self.now);
                let members = members.into_iter().collect();
                match self.net.open_channel(&name, &members) {
                    Ok(genesis) => self.dispatch(genesis),
                    Err(e) => self.refuse(i, e.code(), e.to_string()),
                }
            }
            ActionKind::TraceForward { origin } => self.start_query(i, QueryKind::Forward { origin }),
            ActionKind::TraceBack { batch_id } => self.start_query(i, QueryKind::Back { batch_id }),
            ActionKind::Recall { actor, origin, batch_ids } => {
                self.start_query(i, QueryKind::Recall { actor, origin, batch_ids })
            }
        }
    }

    fn start_tx(&mut self, action: usize, request: TxRequest) -> Result<(), SimError> {
        self.net.set_time(self.now);
        let proposal = match self.net.propose(&request) {
            Ok(p) => p,
            Err(e) => return self.refuse(action, e.code(), e.to_string()),
        };
        let tx = self.txs.len();
        let endorsers = proposal.endorser_peers.clone();
        self.txs.push(SimTx {
            action,
            issued: self.now,
            endorsements: vec![None; endorsers.len()],
            proposal,
            done: false,
        });
        for (slot, peer) in endorsers.iter().enumerate() {
            self.send(CLIENT_NODE, peer, Payload::Proposal { tx, slot })?;
        }
        Ok(())
    }

    fn start_query(&mut self, action: usize, kind: QueryKind) -> Result<(), SimError> {
        let Some(peer) = self.net.member_peers(MAIN_CHANNEL).into_iter().next() else {
            return self.refuse(action, "UNKNOWN_CHANNEL", "main has no peers".into());
        };
        let query = self.queries.len();
        self.queries.push(SimQuery { action, issued: self.now, peer: peer.clone(), kind });
        self.send(CLIENT_NODE, &peer, Payload::QueryRequest { query })
    }

    fn deliver(&mut self, to: String, payload: Payload) -> Result<(), SimError> {
        match payload {
            Payload::Proposal { tx, slot } => {
                let result = self.net.endorse_on(&to, &self.txs[tx].proposal);
                self.send(&to, CLIENT_NODE, Payload::Endorsement { tx, slot, result })
            }
            Payload::Endorsement { tx, slot, result } => self.on_endorsement(tx, slot, result),
            Payload::Envelope { tx, envelope } => {
                let channel = envelope.proposal.channel.clone();
                if let Err(e) = self.net.orderer_mut().submit(*envelope, self.now) {
                    return self.refuse(self.txs[tx].action, e.code(), e.to_string());
                }
                self.cut(&channel)
            }
            Payload::Block(block) => self.on_block(to, block),
            Payload::QueryRequest { query } => {
                let result = self.answer(query);
                self.send(&to, CLIENT_NODE, Payload::QueryResponse { query, result })
            }
            Payload::QueryResponse { query, result } => self.on_answer(query, result),
        }
    }

    fn on_endorsement(&mut self, tx: usize, slot: usize, result: Result<Endorsement, TxError>) -> Result<(), SimError> {
        if self.txs[tx].done {
            return Ok(());
        }
        let action = self.txs[tx].action;
        match result {
            Err(e) => {
                self.txs[tx].done = true;
                return self.refuse(action, e.code(), e.to_string());
            }
            Ok(e) => self.txs[tx].endorsements[slot] = Some(e),
        }
        if self.txs[tx].endorsements.iter().any(Option::is_none) {
            return Ok(());
        }
        self.txs[tx].done = true;
        let endorsements = self.txs[tx].endorsements.iter().flatten().cloned().collect();
        match assemble(self.txs[tx].proposal.clone(), endorsements, self.net.membership()) {
            Ok(envelope) => {
                self.tx_by_id.insert(envelope.tx_id, tx);
                self.send(CLIENT_NODE, ORDERER_NODE, Payload::Envelope { tx, envelope: Box::new(envelope) })
            }
            Err(e) => self.refuse(action, e.code(), e.to_string()),
        }
    }

    fn cut(&mut self, channel: &str) -> Result<(), SimError> {
        while let Some(block) = self.net.orderer_mut().cut(channel, self.now) {
            self.dispatch(block)?;
        }
        if let Some(deadline) = self.net.orderer_mut().deadline(channel) {
            if self.timers.insert((channel.to_string(), deadline)) {
                self.schedule(deadline, Event::OrdererTimer { channel: channel.to_string() });
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, block: Block) -> Result<(), SimError> {
        let channel = block.channel().unwrap_or_default().to_string();
        let txs: Vec<usize> = block
            .envelopes
            .iter()
            .filter(|e| e.proposal.contract_op != CONFIG_OP)
            .filter_map(|e| self.tx_by_id.get(&e.tx_id).copied())
            .collect();
        self.metrics.total_ordered += txs.len() as u64;
        let members = self.net.member_peers(&channel);
        let key = (channel, block.header.number);
        self.in_flight.insert(key, InFlight { remaining: members.len(), counted: false, txs });
        let block = Arc::new(block);
        for peer in members {
            self.send(ORDERER_NODE, &peer, Payload::Block(block.clone()))?;
        }
        Ok(())
    }

    fn on_block(&mut self, peer: String, block: Arc<Block>) -> Result<(), SimError> {
        let channel = block.channel().unwrap_or_default().to_string();
        let Some(cs) = self.net.peer(&peer).and_then(|p| p.channel(&channel)) else {
            return Ok(());
        };
        let mut height = cs.ledger.height();
        if block.header.number < height {
            return Ok(());
        }
        let key = (peer.clone(), channel.clone());
        self.buffered.entry(key.clone()).or_default().insert(block.header.number, block);
        while let Some(next) = self.buffered.get_mut(&key).and_then(|b| b.remove(&height)) {
            let outcome = self.net.commit_on(&peer, (*next).clone())?;
            self.trace.push(TraceEvent::Commit {
                at: self.now,
                peer: peer.clone(),
                channel: channel.clone(),
                block: height,
                flags: outcome.flags.clone(),
            });
            self.account(&channel, &next, &outcome.flags);
            height += 1;
        }
        Ok(())
    }

    fn account(&mut self, channel: &str, block: &Block, flags: &[Validity]) {
        let key = (channel.to_string(), block.header.number);
        let Some(flight) = self.in_flight.get_mut(&key) else { return };
        if !flight.counted {
            flight.counted = true;
            for (env, flag) in block.envelopes.iter().zip(flags) {
                if env.proposal.contract_op == CONFIG_OP {
                    continue;
                }
                if *flag == Validity::Valid {
                    self.metrics.committed_tx += 1;
                } else {
                    *self.metrics.invalid_tx.entry(flag.as_str().to_string()).or_default() += 1;
                }
            }
        }
        flight.remaining -= 1;
        if flight.remaining == 0 {
            let flight = self.in_flight.remove(&key).expect("present");
            for tx in flight.txs {
                self.latencies.push(self.now - self.txs[tx].issued);
            }
        }
    }

    fn answer(&self, query: usize) -> Result<QueryAnswer, QueryError> {
        let q = &self.queries[query];
        let cs = self.net.peer(&q.peer).and_then(|p| p.channel(MAIN_CHANNEL)).expect("query peer joined main");
        let state = cs.state.read();
        match &q.kind {
            QueryKind::Forward { origin } | QueryKind::Recall { origin, .. } => {
                chaincode::trace_forward(&state, &cs.index, self.net.membership(), origin, cs.ledger.height())
                    .map(QueryAnswer::Report)
            }
            QueryKind::Back { batch_id } => {
                chaincode::trace_back(&state, &cs.index, batch_id).map(|t| QueryAnswer::Trace(t.tree.len()))
            }
        }
    }

    fn on_answer(&mut self, query: usize, result: Result<QueryAnswer, QueryError>) -> Result<(), SimError> {
        let (action, issued) = (self.queries[query].action, self.queries[query].issued);
        self.metrics.recall_trace_latency_ms.push(self.now - issued);
        let answer = match result {
            Ok(a) => a,
            Err(e) => return self.refuse(action, e.code(), e.to_string()),
        };
        let affected = match &answer {
            QueryAnswer::Report(r) => r.affected_batches.len(),
            QueryAnswer::Trace(edges) => *edges,
        };
        self.trace.push(TraceEvent::Query { at: self.now, action, affected });
        if let (QueryKind::Recall { actor, batch_ids, .. }, QueryAnswer::Report(report)) =
            (&self.queries[query].kind, answer)
        {
            let batch_ids = batch_ids.clone().unwrap_or_else(|| report.affected_batches.iter().cloned().collect());
            let args = Doc::map()
                .with("report", Doc::from_serde(&report).expect("reports hold no floats"))
                .with("batch_ids", Doc::from(batch_ids));
            let request = TxRequest::main(actor, "mark_recalled", args);
            return self.start_tx(action, request);
        }
        Ok(())
    }
}
