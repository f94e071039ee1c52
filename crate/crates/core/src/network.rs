//! In-process network driver.
//!
//! [`Network`] owns the membership service, the orderer and every peer, and
//! plays the client role for all identities: it builds proposals, collects
//! endorsements, submits envelopes and delivers cut blocks to the member
//! peers of each channel. Submission is synchronous: a call returns once the
//! transaction's block has been committed by every member peer.
//!
//! With a data directory the network persists `network.json` (the bootstrap
//! config with resolved ids), `membership.json` and one ledger file per peer
//! and channel. [`Network::open`] rebuilds all world state by replaying those
//! ledgers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::chaincode::{self, *};
use crate::codec::Doc;
use crate::ledger::{ledger_path, Block, Durability, Ledger, LedgerError, Validity};
use crate::membership::{Membership, MembershipError, Role, MAIN_CHANNEL};
use crate::peer::{ChannelState, Peer, ReplayError};
use crate::txflow::{
    assemble, CommitOutcome, Contract, Endorsement, Envelope, Orderer, OrdererConfig, Proposal, TxError, TxId, MIN_ENDORSEMENTS,
};

pub const NETWORK_FILE: &str = "network.json";
pub const MEMBERSHIP_FILE: &str = "membership.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentitySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub display_name: String,
    pub role: Role,
    /// Peer node run by this identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<String>,
    /// Static bearer token for the gateway.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub members: Vec<String>,
}

fn default_batch_size() -> usize {
    OrdererConfig::default().batch_size
}

fn default_batch_timeout() -> u64 {
    OrdererConfig::default().batch_timeout_ms
}

fn default_endorsers() -> usize {
    MIN_ENDORSEMENTS
}

/// Bootstrap configuration, loaded from JSON.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub identities: Vec<IdentitySpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_batch_timeout")]
    pub batch_timeout_ms: u64,
    #[serde(default = "default_endorsers")]
    pub endorsers_per_tx: usize,
    /// Seed for keys, salts and nonces; random when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl NetworkConfig {
    pub fn new(identities: Vec<IdentitySpec>) -> Self {
        NetworkConfig {
            identities,
            channels: Vec::new(),
            batch_size: default_batch_size(),
            batch_timeout_ms: default_batch_timeout(),
            endorsers_per_tx: default_endorsers(),
            seed: None,
        }
    }

    /// A small dairy consortium: two farms, two processors, a transporter,
    /// two shops, a bank, an auditor and a consumer app. Every identity except
    /// the consumer runs a peer, and each has the bearer token `<id>-token`.
    pub fn demo() -> Self {
        let parties = [
            ("farm-a", "Ferma Dealul Verde", Role::Farm),
            ("farm-b", "Ferma Valea Mare", Role::Farm),
            ("proc-1", "Lactate Carpati", Role::Processor),
            ("proc-2", "Branzeturi Sibiu", Role::Processor),
            ("trans-1", "Trans Lapte", Role::Transporter),
            ("shop-1", "Magazin Central", Role::Shop),
            ("shop-2", "Piata Noua", Role::Shop),
            ("bank", "Banca Agricola", Role::Bank),
            ("auditor", "Food Safety Authority", Role::Auditor),
        ];
        let mut identities: Vec<IdentitySpec> = parties
            .iter()
            .map(|(id, name, role)| {
                IdentitySpec::new(id, name, *role).with_peer(&format!("peer-{id}")).with_token(&format!("{id}-token"))
            })
            .collect();
        identities.push(IdentitySpec::new("consumer", "Consumer App", Role::Consumer).with_token("consumer-token"));
        let mut config = NetworkConfig::new(identities);
        config.seed = Some(42);
        config
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        serde_json::from_str(text).map_err(|e| NetworkError::Config(e.to_string()))
    }
}

impl IdentitySpec {
    pub fn new(id: &str, display_name: &str, role: Role) -> Self {
        IdentitySpec { id: Some(id.into()), display_name: display_name.into(), role, peer: None, token: None }
    }

    pub fn with_peer(mut self, peer: &str) -> Self {
        self.peer = Some(peer.into());
        self
    }

    pub fn with_token(mut self, token: &str) -> Self {
        self.token = Some(token.into());
        self
    }
}

#[derive(Clone, Debug)]
pub enum Storage {
    Memory,
    Dir { path: PathBuf, durability: Durability },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Membership(#[from] MembershipError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("peer {peer} channel {channel}: {error}")]
    Replay { peer: String, channel: String, error: ReplayError },
    #[error("{step} committed as {validity}")]
    Rejected { step: &'static str, validity: Validity },
    #[error("bad config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl NetworkError {
    pub fn code(&self) -> &str {
        match self {
            NetworkError::Tx(e) => e.code(),
            NetworkError::Query(e) => e.code(),
            NetworkError::Membership(e) => e.code(),
            NetworkError::Ledger(e) => e.code(),
            NetworkError::Replay { error, .. } => error.code(),
            NetworkError::Rejected { validity, .. } => validity.as_str(),
            NetworkError::Config(_) => "BAD_CONFIG",
            NetworkError::Io(_) => "IO_ERROR",
        }
    }
}

impl From<std::io::Error> for NetworkError {
    fn from(e: std::io::Error) -> Self {
        NetworkError::Io(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TxOutcome {
    pub tx_id: TxId,
    pub channel: String,
    pub validity: Validity,
    pub block_no: u64,
    pub tx_index: usize,
    pub response: Doc,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRequest {
    pub actor: String,
    pub channel: String,
    pub op: String,
    pub args: Doc,
    /// Peers to collect endorsements from; empty means the channel default.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub endorsers: Vec<String>,
}

impl TxRequest {
    pub fn new(actor: &str, channel: &str, op: &str, args: Doc) -> Self {
        TxRequest { actor: actor.into(), channel: channel.into(), op: op.into(), args, endorsers: Vec::new() }
    }

    pub fn main(actor: &str, op: &str, args: Doc) -> Self {
        TxRequest::new(actor, MAIN_CHANNEL, op, args)
    }

    pub fn endorsed_by(mut self, peers: Vec<String>) -> Self {
        self.endorsers = peers;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferRequest {
    pub offer_id: String,
    pub product_id: String,
    pub standard_price: i64,
    #[serde(default)]
    pub targeted: Vec<TargetedPrice>,
    #[serde(default)]
    pub settlement: Settlement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Acceptance {
    pub offer_id: String,
    pub buyer: String,
    pub price: i64,
    /// Channel the acceptance was transacted on.
    pub channel: String,
    pub outcomes: Vec<TxOutcome>,
}

/// Record written under `network.json`.
#[derive(Serialize, Deserialize)]
struct NetworkFile {
    config: NetworkConfig,
}

pub struct Network {
    config: NetworkConfig,
    membership: Membership,
    orderer: Orderer,
    peers: BTreeMap<String, Peer>,
    contract: TraceContract,
    storage: Storage,
    tokens: HashMap<String, String>,
    manual_clock: Option<u64>,
    nonce_counter: u64,
    nonce_salt: [u8; 8],
}

fn system_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl Network {
    /// Registers identities, channels and peers, and commits each channel's
    /// genesis block on its member peers.
    pub fn bootstrap(config: NetworkConfig, storage: Storage) -> Result<Network, NetworkError> {
        Network::bootstrap_inner(config, storage, None)
    }

    /// Like [`Network::bootstrap`] with the clock frozen at `now_ms` from the
    /// start, so genesis blocks are reproducible.
    pub fn bootstrap_at(config: NetworkConfig, storage: Storage, now_ms: u64) -> Result<Network, NetworkError> {
        Network::bootstrap_inner(config, storage, Some(now_ms))
    }

    fn bootstrap_inner(mut config: NetworkConfig, storage: Storage, clock: Option<u64>) -> Result<Network, NetworkError> {
        let mut membership = match config.seed {
            Some(seed) => Membership::with_seed(seed),
            None => Membership::from_entropy(),
        };
        let mut seen_peers = BTreeSet::new();
        let mut seen_tokens = BTreeSet::new();
        for spec in &mut config.identities {
            let identity = match &spec.id {
                Some(id) => membership.register_identity_with_id(id, &spec.display_name, spec.role)?,
                None => membership.register_identity(&spec.display_name, spec.role)?,
            };
            spec.id = Some(identity.id.clone());
            if let Some(peer) = &spec.peer {
                if !seen_peers.insert(peer.clone()) {
                    return Err(NetworkError::Config(format!("duplicate peer id {peer}")));
                }
                membership.register_peer(peer, &identity.id)?;
            }
            if let Some(token) = &spec.token {
                if !seen_tokens.insert(token.clone()) {
                    return Err(NetworkError::Config(format!("token of {} is not unique", identity.id)));
                }
            }
        }
        if config.batch_size == 0 {
            return Err(NetworkError::Config("batch_size must be positive".into()));
        }
        if config.endorsers_per_tx < MIN_ENDORSEMENTS {
            return Err(NetworkError::Config(format!("endorsers_per_tx must be at least {MIN_ENDORSEMENTS}")));
        }
        if !config.identities.iter().any(|s| s.role == Role::Orderer) {
            config.identities.push(IdentitySpec::new("orderer", "Ordering Service", Role::Orderer));
            membership.register_identity_with_id("orderer", "Ordering Service", Role::Orderer)?;
        }
        for ch in &config.channels {
            membership.create_channel(&ch.name, &ch.members.iter().cloned().collect())?;
        }
        let seed = config.seed;
        let mut net = Network::assemble_parts(config, membership, storage)?;
        net.manual_clock = clock;
        if let Some(seed) = seed {
            net.nonce_salt = seed.to_be_bytes();
        }
        if let Storage::Dir { path, .. } = &net.storage {
            std::fs::create_dir_all(path)?;
            let file = NetworkFile { config: net.config.clone() };
            let text = serde_json::to_string_pretty(&file).expect("config serializes");
            std::fs::write(path.join(NETWORK_FILE), text)?;
        }
        net.save_membership()?;
        let channels: Vec<String> = net.membership.channels().map(|c| c.name.clone()).collect();
        for channel in channels {
            net.start_channel(&channel)?;
        }
        Ok(net)
    }

    fn assemble_parts(config: NetworkConfig, membership: Membership, storage: Storage) -> Result<Network, NetworkError> {
        let orderer_id = config
            .identities
            .iter()
            .find(|s| s.role == Role::Orderer)
            .and_then(|s| s.id.clone())
            .ok_or_else(|| NetworkError::Config("no orderer identity".into()))?;
        let orderer = Orderer::new(
            &orderer_id,
            OrdererConfig { batch_size: config.batch_size, batch_timeout_ms: config.batch_timeout_ms },
        );
        let tokens = config
            .identities
            .iter()
            .filter_map(|s| Some((s.token.clone()?, s.id.clone()?)))
            .collect();
        let peers = membership.peers().map(|(p, _)| (p.to_string(), Peer::new(p))).collect();
        Ok(Network {
            config,
            membership,
            orderer,
            peers,
            contract: TraceContract,
            storage,
            tokens,
            manual_clock: None,
            nonce_counter: 0,
            nonce_salt: rand::random(),
        })
    }

    /// Reopens a persisted network, replaying every ledger file.
    pub fn open(datadir: &Path, durability: Durability) -> Result<Network, NetworkError> {
        let text = std::fs::read_to_string(datadir.join(NETWORK_FILE))?;
        let file: NetworkFile = serde_json::from_str(&text).map_err(|e| NetworkError::Config(e.to_string()))?;
        let membership = Membership::load(&datadir.join(MEMBERSHIP_FILE))?;
        let storage = Storage::Dir { path: datadir.to_path_buf(), durability };
        let mut net = Network::assemble_parts(file.config, membership, storage)?;
        let channels: Vec<String> = net.membership.channels().map(|c| c.name.clone()).collect();
        for channel in &channels {
            let members = net.member_peers(channel);
            for peer_id in &members {
                let path = ledger_path(datadir, peer_id, channel);
                let peer = net.peers.get_mut(peer_id).expect("registered peer");
                if path.exists() {
                    let ledger = Ledger::open_file(peer_id, channel, &path, durability)?;
                    peer.join_replayed(ledger, &net.membership).map_err(|error| NetworkError::Replay {
                        peer: peer_id.clone(),
                        channel: channel.clone(),
                        error,
                    })?;
                } else {
                    peer.join(Ledger::create_file(peer_id, channel, &path, durability)?);
                }
            }
            net.resume_channel(channel, &members)?;
        }
        Ok(net)
    }

    /// Points the orderer at the longest stored chain of `channel` and
    /// brings lagging member peers up to it.
    fn resume_channel(&mut self, channel: &str, members: &[String]) -> Result<(), NetworkError> {
        let Some(source) = members.iter().max_by_key(|p| self.peers[*p].height(channel)).cloned() else {
            return Ok(());
        };
        let ledger = &self.peers[&source].channel(channel).expect("joined").ledger;
        let height = ledger.height();
        if height == 0 {
            return Ok(());
        }
        let mut blocks = Vec::new();
        let mut ids = Vec::new();
        ledger.for_each_block(|b| {
            ids.extend(b.envelopes.iter().map(|e| e.tx_id));
            blocks.push(b.clone());
        })?;
        self.orderer.resume_channel(channel, height, ledger.last_header_hash().expect("nonempty"));
        self.orderer.mark_seen(ids);
        for peer_id in members {
            let from = self.peers[peer_id].height(channel);
            for block in &blocks[from as usize..] {
                let peer = self.peers.get_mut(peer_id).expect("registered peer");
                peer.commit(&self.membership, block.clone())?;
            }
        }
        Ok(())
    }

    fn save_membership(&self) -> Result<(), NetworkError> {
        if let Storage::Dir { path, .. } = &self.storage {
            self.membership.save(&path.join(MEMBERSHIP_FILE))?;
        }
        Ok(())
    }

    fn new_ledger(&self, peer: &str, channel: &str) -> Result<Ledger, NetworkError> {
        Ok(match &self.storage {
            Storage::Memory => Ledger::in_memory(peer, channel),
            Storage::Dir { path, durability } => {
                Ledger::create_file(peer, channel, &ledger_path(path, peer, channel), *durability)?
            }
        })
    }

    /// Peers whose identity belongs to `channel`.
    pub fn member_peers(&self, channel: &str) -> Vec<String> {
        self.membership.channel_peers(channel)
    }

    fn genesis_config(&self, channel: &str) -> Result<Doc, NetworkError> {
        let ch = self.membership.channel(channel)?;
        let mut members = Vec::new();
        for id in &ch.members {
            let role = self.membership.identity(id)?.role;
            members.push(Doc::map().with("id", id.as_str()).with("role", role.as_str()));
        }
        Ok(Doc::map()
            .with("channel", channel)
            .with("members", Doc::List(members))
            .with("orderer", self.orderer.identity())
            .with("batch_size", self.config.batch_size as i64)
            .with("batch_timeout_ms", self.config.batch_timeout_ms as i64))
    }

    fn start_channel(&mut self, channel: &str) -> Result<(), NetworkError> {
        let genesis = self.genesis_block(channel)?;
        self.deliver(genesis)?;
        Ok(())
    }

    /// Member peers join `channel` with empty ledgers and the orderer cuts
    /// its genesis block, which is returned undelivered.
    fn genesis_block(&mut self, channel: &str) -> Result<Block, NetworkError> {
        let config = self.genesis_config(channel)?;
        for peer_id in self.member_peers(channel) {
            let ledger = self.new_ledger(&peer_id, channel)?;
            self.peers.get_mut(&peer_id).expect("registered peer").join(ledger);
        }
        Ok(self.orderer.create_channel(channel, config, self.now()))
    }

    /// Registers a new channel and returns its genesis block for delivery.
    pub(crate) fn open_channel(&mut self, channel: &str, members: &BTreeSet<String>) -> Result<Block, NetworkError> {
        self.membership.create_channel(channel, members)?;
        self.save_membership()?;
        self.genesis_block(channel)
    }

    pub(crate) fn orderer_mut(&mut self) -> &mut Orderer {
        &mut self.orderer
    }

    pub(crate) fn endorse_on(&self, peer_id: &str, proposal: &Proposal) -> Result<Endorsement, TxError> {
        let peer = self.peers.get(peer_id).ok_or_else(|| TxError::NotAnEndorser(peer_id.to_string()))?;
        peer.endorse(&self.membership, &self.contract, proposal).map(|(e, _)| e)
    }

    pub(crate) fn commit_on(&mut self, peer_id: &str, block: Block) -> Result<CommitOutcome, TxError> {
        let peer = self.peers.get_mut(peer_id).ok_or_else(|| TxError::NotAnEndorser(peer_id.to_string()))?;
        peer.commit(&self.membership, block)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn membership(&self) -> &Membership {
        &self.membership
    }

    pub fn contract(&self) -> &dyn Contract {
        &self.contract
    }

    pub fn peer(&self, id: &str) -> Option<&Peer> {
        self.peers.get(id)
    }

    pub fn peers(&self) -> impl Iterator<Item = &Peer> {
        self.peers.values()
    }

    pub fn datadir(&self) -> Option<&Path> {
        match &self.storage {
            Storage::Memory => None,
            Storage::Dir { path, .. } => Some(path),
        }
    }

    /// Identity behind a gateway bearer token.
    pub fn token_identity(&self, token: &str) -> Option<&str> {
        self.tokens.get(token).map(String::as_str)
    }

    /// Freezes the clock at `ms`; blocks and custody timestamps use it.
    pub fn set_time(&mut self, ms: u64) {
        self.manual_clock = Some(ms);
    }

    pub fn now(&self) -> u64 {
        self.manual_clock.unwrap_or_else(system_ms)
    }

    pub fn endorsers_for(&self, channel: &str) -> Result<Vec<String>, NetworkError> {
        self.membership.channel(channel)?;
        let peers = self.member_peers(channel);
        if peers.len() < MIN_ENDORSEMENTS {
            return Err(TxError::InsufficientEndorsements { got: peers.len(), needed: MIN_ENDORSEMENTS }.into());
        }
        Ok(peers.into_iter().take(self.config.endorsers_per_tx).collect())
    }

    /// Builds a proposal with a fresh nonce, filling `now` when absent.
    pub fn propose(&mut self, request: &TxRequest) -> Result<Proposal, NetworkError> {
        let endorsers = if request.endorsers.is_empty() {
            self.endorsers_for(&request.channel)?
        } else {
            request.endorsers.clone()
        };
        self.nonce_counter += 1;
        let mut nonce = [0u8; 16];
        nonce[..8].copy_from_slice(&self.nonce_counter.to_be_bytes());
        nonce[8..].copy_from_slice(&self.nonce_salt);
        let mut args = request.args.clone();
        if let Doc::Map(m) = &mut args {
            m.entry("now".to_string()).or_insert(Doc::Int(self.now() as i64));
        }
        Ok(Proposal {
            channel: request.channel.clone(),
            contract_op: request.op.clone(),
            args,
            creator: request.actor.clone(),
            nonce,
            endorser_peers: endorsers,
        })
    }

    /// Collects endorsements from every designated endorser and assembles
    /// the envelope.
    pub fn endorse(&self, proposal: Proposal) -> Result<(Envelope, Doc), NetworkError> {
        let mut endorsements = Vec::new();
        let mut response = Doc::Null;
        for peer_id in &proposal.endorser_peers {
            let peer = self.peers.get(peer_id).ok_or_else(|| TxError::NotAnEndorser(peer_id.clone()))?;
            let (e, r) = peer.endorse(&self.membership, &self.contract, &proposal)?;
            endorsements.push(e);
            response = r;
        }
        Ok((assemble(proposal, endorsements, &self.membership)?, response))
    }

    fn deliver(&mut self, block: Block) -> Result<Vec<Validity>, NetworkError> {
        let channel = block.channel().unwrap_or_default().to_string();
        let mut flags = None;
        for peer_id in self.member_peers(&channel) {
            let peer = self.peers.get_mut(&peer_id).expect("registered peer");
            let outcome = peer.commit(&self.membership, block.clone())?;
            debug_assert!(flags.as_ref().is_none_or(|f| *f == outcome.flags));
            flags.get_or_insert(outcome.flags);
        }
        Ok(flags.unwrap_or_default())
    }

    /// Orders and commits every pending envelope on `channels`.
    fn drain(&mut self, channels: &BTreeSet<String>) -> Result<HashMap<TxId, (u64, usize, Validity)>, NetworkError> {
        let mut placed = HashMap::new();
        let now = self.now();
        for channel in channels {
            while let Some(block) = self.orderer.flush(channel, now) {
                let number = block.header.number;
                let ids: Vec<TxId> = block.envelopes.iter().map(|e| e.tx_id).collect();
                let flags = self.deliver(block)?;
                for (i, (id, flag)) in ids.into_iter().zip(flags).enumerate() {
                    placed.insert(id, (number, i, flag));
                }
            }
        }
        Ok(placed)
    }

    /// Endorses, orders and commits one transaction.
    pub fn submit(&mut self, request: TxRequest) -> Result<TxOutcome, NetworkError> {
        self.submit_batch(vec![request]).pop().expect("one result per request")
    }

    pub fn submit_op(&mut self, actor: &str, op: &str, args: Doc) -> Result<TxOutcome, NetworkError> {
        self.submit(TxRequest::main(actor, op, args))
    }

    /// Endorses every request against the current state, then orders them
    /// together (in tx id order) and commits the resulting blocks.
    pub fn submit_batch(&mut self, requests: Vec<TxRequest>) -> Vec<Result<TxOutcome, NetworkError>> {
        let now = self.now();
        let mut pending = Vec::with_capacity(requests.len());
        let mut channels = BTreeSet::new();
        for request in &requests {
            let endorsed = self.propose(request).and_then(|p| self.endorse(p));
            let result = endorsed.and_then(|(env, response)| {
                let tx_id = env.tx_id;
                self.orderer.submit(env, now)?;
                channels.insert(request.channel.clone());
                Ok((tx_id, response))
            });
            pending.push(result);
        }
        let placed = match self.drain(&channels) {
            Ok(p) => p,
            Err(e) => return requests.iter().map(|_| Err(e.clone())).collect(),
        };
        pending
            .into_iter()
            .zip(&requests)
            .map(|(r, request)| {
                let (tx_id, response) = r?;
                let (block_no, tx_index, validity) = placed[&tx_id];
                Ok(TxOutcome { tx_id, channel: request.channel.clone(), validity, block_no, tx_index, response })
            })
            .collect()
    }

    fn require_valid(outcome: TxOutcome, step: &'static str) -> Result<TxOutcome, NetworkError> {
        if outcome.validity == Validity::Valid {
            Ok(outcome)
        } else {
            Err(NetworkError::Rejected { step, validity: outcome.validity })
        }
    }

    /// Publishes an offer. Targeted prices go to a fresh private channel
    /// holding the seller, the targeted buyers and the orderer.
    pub fn publish_offer(&mut self, seller: &str, request: OfferRequest) -> Result<Offer, NetworkError> {
        let targeted = !request.targeted.is_empty();
        let deal = deal_channel(&request.offer_id);
        let mut members: BTreeSet<String> = request.targeted.iter().map(|t| t.buyer.clone()).collect();
        members.insert(seller.to_string());
        members.insert(self.orderer.identity().to_string());
        if targeted {
            let with_peers = self
                .membership
                .peers()
                .filter(|(_, identity)| members.contains(*identity))
                .count();
            if with_peers < MIN_ENDORSEMENTS {
                return Err(TxError::InsufficientEndorsements { got: with_peers, needed: MIN_ENDORSEMENTS }.into());
            }
        }
        let mut args = Doc::map()
            .with("offer_id", request.offer_id.as_str())
            .with("product_id", request.product_id.as_str())
            .with("standard_price", request.standard_price)
            .with("settlement", Doc::from_serde(&request.settlement).expect("enum"));
        if targeted {
            args = args.with("channel", deal.as_str());
        }
        let outcome = self.submit_op(seller, "publish_offer", args.clone())?;
        Self::require_valid(outcome, "publish_offer")?;
        if targeted {
            let genesis = self.open_channel(&deal, &members)?;
            self.deliver(genesis)?;
            let args = args.with("targeted", Doc::from_serde(&request.targeted).expect("prices are integers"));
            let request = TxRequest::new(seller, &deal, "publish_deal", args);
            let outcome = self.submit(request)?;
            Self::require_valid(outcome, "publish_deal")?;
        }
        Ok(Offer {
            offer_id: request.offer_id,
            seller: seller.to_string(),
            product_id: request.product_id,
            standard_price: request.standard_price,
            targeted: request.targeted,
            channel: targeted.then_some(deal),
            settlement: request.settlement,
        })
    }

    pub fn public_offer(&self, offer_id: &str) -> Result<PublicOffer, NetworkError> {
        let cs = self.query_channel(MAIN_CHANNEL)?;
        let entry = cs.state.get(&offer_key(offer_id));
        let unknown = || TxError::Contract(crate::txflow::ContractError::new("UNKNOWN_OFFER", offer_id));
        let entry = entry.ok_or_else(unknown)?;
        Ok(entry.doc.to_serde().expect("stored offers decode"))
    }

    /// Accepts an offer: on its deal channel at the targeted price when the
    /// buyer is a deal member, otherwise on main at the standard price.
    pub fn accept_offer(&mut self, buyer: &str, offer_id: &str) -> Result<Acceptance, NetworkError> {
        let offer = self.public_offer(offer_id)?;
        let deal = offer.channel.clone().filter(|c| self.membership.authorize(buyer, c));
        let args = Doc::map().with("offer_id", offer_id);
        let mut outcomes = Vec::new();
        let (price_doc, channel) = match deal {
            Some(deal) => {
                let request = TxRequest::new(buyer, &deal, "accept_deal", args);
                let accepted = Self::require_valid(self.submit(request)?, "accept_deal")?;
                let price = accepted.response.clone();
                outcomes.push(accepted);
                let settle = Doc::map().with("offer_id", offer_id).with("buyer", buyer);
                outcomes.push(Self::require_valid(self.submit_op(&offer.seller, "settle_offer", settle)?, "settle_offer")?);
                (price, deal)
            }
            None => {
                let accepted = Self::require_valid(self.submit_op(buyer, "accept_offer", args)?, "accept_offer")?;
                let price = accepted.response.clone();
                outcomes.push(accepted);
                (price, MAIN_CHANNEL.to_string())
            }
        };
        let price = price_doc.get("price").and_then(Doc::as_int).unwrap_or(offer.standard_price);
        Ok(Acceptance { offer_id: offer_id.to_string(), buyer: buyer.to_string(), price, channel, outcomes })
    }

    /// Flags `batch_ids` from `report` as recalled.
    pub fn recall(&mut self, auditor: &str, report: &RecallReport, batch_ids: &[String]) -> Result<TxOutcome, NetworkError> {
        let args = Doc::map()
            .with("report", Doc::from_serde(report).expect("reports hold no floats"))
            .with("batch_ids", Doc::from(batch_ids.to_vec()));
        self.submit_op(auditor, "mark_recalled", args)
    }

    /// Channel state of the first member peer, used for read-only queries.
    pub fn query_channel(&self, channel: &str) -> Result<&ChannelState, NetworkError> {
        self.member_peers(channel)
            .iter()
            .find_map(|p| self.peers[p].channel(channel))
            .ok_or_else(|| TxError::UnknownChannel(channel.to_string()).into())
    }

    pub fn trace_back(&self, batch_id: &str) -> Result<TraceBack, NetworkError> {
        let cs = self.query_channel(MAIN_CHANNEL)?;
        Ok(chaincode::trace_back(&cs.state.read(), &cs.index, batch_id)?)
    }

    pub fn trace_forward(&self, origin: &str) -> Result<RecallReport, NetworkError> {
        let cs = self.query_channel(MAIN_CHANNEL)?;
        let snapshot = cs.state.read();
        let height = cs.ledger.height();
        Ok(chaincode::trace_forward(&snapshot, &cs.index, &self.membership, origin, height)?)
    }

    pub fn token_entry(&self, farm: &str) -> Result<TokenLedgerEntry, NetworkError> {
        let cs = self.query_channel(MAIN_CHANNEL)?;
        Ok(chaincode::token_entry(&cs.state.read(), &self.membership, farm)?)
    }

    pub fn token_balance(&self, farm: &str) -> Result<u64, NetworkError> {
        self.token_entry(farm).map(|e| e.balance)
    }

    pub fn batch(&self, batch_id: &str) -> Result<Batch, NetworkError> {
        let cs = self.query_channel(MAIN_CHANNEL)?;
        chaincode::get_batch(&cs.state.read(), batch_id)
            .ok_or_else(|| QueryError::UnknownBatch(batch_id.to_string()).into())
    }

    pub fn encode_qr(&self, batch_id: &str) -> Result<QrPayload, NetworkError> {
        let cs = self.query_channel(MAIN_CHANNEL)?;
        let header = |n| cs.ledger.header(n).map(|h| h.hash());
        Ok(chaincode::encode_qr(&cs.state.read(), batch_id, header)?)
    }

    pub fn verify_qr(&self, payload: &str) -> Result<TraceBack, NetworkError> {
        let cs = self.query_channel(MAIN_CHANNEL)?;
        let header = |n| cs.ledger.header(n).map(|h| h.hash());
        Ok(chaincode::verify_qr(&cs.state.read(), &cs.index, payload, header)?)
    }

    pub fn block(&self, channel: &str, number: u64) -> Result<Option<Block>, NetworkError> {
        let cs = self.query_channel(channel)?;
        Ok(cs.ledger.block(number)?.map(|b| b.into_owned()))
    }

    pub fn height(&self, channel: &str) -> Result<u64, NetworkError> {
        Ok(self.query_channel(channel)?.ledger.height())
    }
}

/// World state of one peer's channel as JSON lines
/// `{"key":..,"version":[b,t],"doc":..}`, sorted by key.
pub fn state_dump(cs: &ChannelState) -> Vec<String> {
    cs.state
        .read()
        .entries()
        .map(|e| {
            serde_json::json!({
                "key": e.key,
                "version": [e.version.block_no, e.version.tx_index],
                "doc": e.doc.to_json(),
            })
            .to_string()
        })
        .collect()
}

/// JSON view of a stored block: header fields, hashes and one entry per
/// transaction with its validity flag and written keys.
pub fn block_json(block: &Block) -> serde_json::Value {
    let txs: Vec<serde_json::Value> = block
        .envelopes
        .iter()
        .zip(&block.validity)
        .map(|(env, flag)| {
            serde_json::json!({
                "tx_id": env.tx_id.to_string(),
                "op": env.proposal.contract_op,
                "creator": env.proposal.creator,
                "validity": flag,
                "endorsers": env.endorsements.iter().map(|e| e.peer.as_str()).collect::<Vec<_>>(),
                "args": env.proposal.args.to_json(),
                "writes": env.write_set().iter().map(|w| w.key.as_str()).collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({
        "number": block.header.number,
        "channel": block.channel(),
        "prev_hash": block.header.prev_hash.to_hex(),
        "data_hash": block.header.data_hash.to_hex(),
        "header_hash": block.header.hash().to_hex(),
        "commit_hash": block.commit_hash.to_hex(),
        "timestamp_ms": block.header.timestamp,
        "transactions": txs,
    })
}
