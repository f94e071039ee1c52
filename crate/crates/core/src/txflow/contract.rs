use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::Doc;
use crate::membership::{Channel, Identity, Membership};
use crate::state::{StateView, Version, WriteItem};

use super::types::{ReadItem, TxId};

/// A typed refusal raised by contract logic during simulation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct ContractError {
    pub code: String,
    pub detail: String,
}

impl ContractError {
    pub fn new(code: &str, detail: impl fmt::Display) -> Self {
        ContractError { code: code.to_string(), detail: detail.to_string() }
    }
}

/// Deterministic domain logic executed by endorsers.
pub trait Contract: Send + Sync {
    fn supports(&self, op: &str) -> bool;

    /// Runs `op` against the simulation context. The returned document is
    /// handed back to the client and is not part of the endorsed result.
    fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &Doc) -> Result<Doc, ContractError>;
}

/// Simulation context: reads come from a fixed snapshot and are recorded
/// with their versions; writes are buffered. Nothing touches the store.
pub struct TxContext<'a> {
    state: &'a dyn StateView,
    membership: &'a Membership,
    channel: &'a Channel,
    creator: &'a Identity,
    tx_id: TxId,
    reads: BTreeMap<String, Option<Version>>,
    writes: BTreeMap<String, Option<Doc>>,
}

impl<'a> TxContext<'a> {
    pub fn new(
        state: &'a dyn StateView,
        membership: &'a Membership,
        channel: &'a Channel,
        creator: &'a Identity,
        tx_id: TxId,
    ) -> Self {
        TxContext { state, membership, channel, creator, tx_id, reads: BTreeMap::new(), writes: BTreeMap::new() }
    }

    pub fn creator(&self) -> &Identity {
        self.creator
    }

    pub fn channel(&self) -> &Channel {
        self.channel
    }

    pub fn membership(&self) -> &Membership {
        self.membership
    }

    pub fn tx_id(&self) -> TxId {
        self.tx_id
    }

    /// Reads a key, seeing this transaction's own buffered writes first.
    pub fn get(&mut self, key: &str) -> Option<Doc> {
        if let Some(pending) = self.writes.get(key) {
            return pending.clone();
        }
        let entry = self.state.get(key);
        self.reads.entry(key.to_string()).or_insert(entry.map(|e| e.version));
        entry.map(|e| e.doc.clone())
    }

    pub fn exists(&mut self, key: &str) -> bool {
        self.get(key).is_some()
    }

    /// Committed entries under `prefix`. Each returned key is recorded as
    /// read; keys inserted under the prefix later are not detected.
    pub fn scan_prefix(&mut self, prefix: &str) -> Vec<(String, Doc)> {
        let found: Vec<(String, Doc, Version)> = self
            .state
            .scan_prefix(prefix)
            .map(|e| (e.key.clone(), e.doc.clone(), e.version))
            .collect();
        found
            .into_iter()
            .map(|(k, d, v)| {
                self.reads.entry(k.clone()).or_insert(Some(v));
                (k, d)
            })
            .collect()
    }

    pub fn put(&mut self, key: impl Into<String>, doc: Doc) {
        self.writes.insert(key.into(), Some(doc));
    }

    pub fn delete(&mut self, key: impl Into<String>) {
        self.writes.insert(key.into(), None);
    }

    /// Read and write sets, each sorted by key.
    pub fn into_sets(self) -> (Vec<ReadItem>, Vec<WriteItem>) {
        let reads = self.reads.into_iter().map(|(key, version)| ReadItem { key, version }).collect();
        let writes = self.writes.into_iter().map(|(key, value)| WriteItem { key, value }).collect();
        (reads, writes)
    }
}
