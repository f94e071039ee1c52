use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::codec::Doc;
use crate::hash::Hash;
use crate::ledger::{build_block, Block, Validity};

use super::types::{Envelope, TxId};
use super::TxError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrdererConfig {
    pub batch_size: usize,
    pub batch_timeout_ms: u64,
}

impl Default for OrdererConfig {
    fn default() -> Self {
        OrdererConfig { batch_size: 10, batch_timeout_ms: 500 }
    }
}

#[derive(Default)]
struct ChannelQueue {
    next_number: u64,
    prev_hash: Hash,
    pending: BTreeSet<(u64, TxId)>,
    envelopes: BTreeMap<TxId, Envelope>,
}

/// Single ordering service. Envelopes are sequenced by arrival time with
/// ties broken by ascending tx id, and cut into blocks when a batch fills or
/// its oldest envelope has waited `batch_timeout_ms`.
///
/// The orderer never inspects read/write sets; flags in the blocks it emits
/// are placeholders that committing peers overwrite.
pub struct Orderer {
    identity: String,
    config: OrdererConfig,
    channels: BTreeMap<String, ChannelQueue>,
    seen: HashSet<TxId>,
}

impl Orderer {
    pub fn new(identity: &str, config: OrdererConfig) -> Self {
        Orderer { identity: identity.to_string(), config, channels: BTreeMap::new(), seen: HashSet::new() }
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn config(&self) -> OrdererConfig {
        self.config
    }

    /// Starts a channel and returns its genesis block carrying `config`.
    pub fn create_channel(&mut self, channel: &str, config: Doc, now: u64) -> Block {
        let envelope = Envelope::config(channel, &self.identity, config);
        let genesis = build_block(0, Hash::ZERO, vec![envelope], vec![Validity::Valid], now)
            .expect("one flag per envelope");
        self.channels.insert(
            channel.to_string(),
            ChannelQueue { next_number: 1, prev_hash: genesis.header.hash(), ..Default::default() },
        );
        genesis
    }

    /// Resumes sequencing a channel whose blocks up to `height - 1` exist
    /// already, the last having header hash `last_hash`.
    pub fn resume_channel(&mut self, channel: &str, height: u64, last_hash: Hash) {
        self.channels.insert(
            channel.to_string(),
            ChannelQueue { next_number: height, prev_hash: last_hash, ..Default::default() },
        );
    }

    pub fn has_channel(&self, channel: &str) -> bool {
        self.channels.contains_key(channel)
    }

    /// Marks tx ids already present on a resumed chain.
    pub fn mark_seen(&mut self, ids: impl IntoIterator<Item = TxId>) {
        self.seen.extend(ids);
    }

    pub fn submit(&mut self, envelope: Envelope, arrival: u64) -> Result<(), TxError> {
        let channel = envelope.proposal.channel.clone();
        let queue = self.channels.get_mut(&channel).ok_or(TxError::UnknownChannel(channel))?;
        if !self.seen.insert(envelope.tx_id) {
            return Err(TxError::DuplicateTx(envelope.tx_id));
        }
        queue.pending.insert((arrival, envelope.tx_id));
        queue.envelopes.insert(envelope.tx_id, envelope);
        Ok(())
    }

    pub fn pending(&self, channel: &str) -> usize {
        self.channels.get(channel).map_or(0, |q| q.pending.len())
    }

    /// Time at which the oldest pending envelope of `channel` times out.
    pub fn deadline(&self, channel: &str) -> Option<u64> {
        let queue = self.channels.get(channel)?;
        let (oldest, _) = queue.pending.first()?;
        Some(oldest + self.config.batch_timeout_ms)
    }

    /// Cuts a block if a batch is full or has timed out at `now`.
    pub fn cut(&mut self, channel: &str, now: u64) -> Option<Block> {
        let full = self.pending(channel) >= self.config.batch_size;
        let timed_out = self.deadline(channel).is_some_and(|d| now >= d);
        if full || timed_out {
            self.flush(channel, now)
        } else {
            None
        }
    }

    /// Cuts a block from whatever is pending, up to one batch.
    pub fn flush(&mut self, channel: &str, now: u64) -> Option<Block> {
        let batch_size = self.config.batch_size;
        let queue = self.channels.get_mut(channel)?;
        if queue.pending.is_empty() {
            return None;
        }
        let mut envelopes = Vec::with_capacity(batch_size.min(queue.pending.len()));
        while envelopes.len() < batch_size {
            let Some((_, id)) = queue.pending.pop_first() else { break };
            envelopes.push(queue.envelopes.remove(&id).expect("pending id has an envelope"));
        }
        let flags = vec![Validity::Valid; envelopes.len()];
        let block = build_block(queue.next_number, queue.prev_hash, envelopes, flags, now)
            .expect("one flag per envelope");
        queue.next_number += 1;
        queue.prev_hash = block.header.hash();
        Some(block)
    }

    /// Cuts every full or timed-out batch across all channels.
    pub fn cut_all(&mut self, now: u64) -> Vec<Block> {
        let names: Vec<String> = self.channels.keys().cloned().collect();
        let mut blocks = Vec::new();
        for name in names {
            while let Some(block) = self.cut(&name, now) {
                blocks.push(block);
            }
        }
        blocks
    }
}
