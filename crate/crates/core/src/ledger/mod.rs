//! Blocks, chain verification and the per-peer append-only ledger.
//!
//! A block header links to its predecessor by `prev_hash` and commits to the
//! ordered transaction ids through `data_hash`. Headers are produced by the
//! orderer and are identical on every peer.
//!
//! Validity flags are assigned by each committing peer after ordering, so the
//! header cannot cover them. Each stored block therefore also carries a
//! `commit_hash`, chained over the previous block's commit hash, the header
//! hash, the envelopes and the flags. Since all honest peers compute the same
//! flags the commit hash is identical across peers, and together with the
//! header chain it covers every byte of a persisted block.

mod store;

use std::borrow::Cow;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_encode, Canonical, CodecError, Reader};
use crate::hash::{hash_parts, hash_payload, merkle_root, Hash};
use crate::txflow::Envelope;

pub use store::{ledger_path, read_ledger_file, verify_ledger_file, Durability, LedgerFileReader};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Validity {
    Valid,
    BadEndorsement,
    MvccConflict,
    Unauthorized,
}

impl Validity {
    pub const ALL: [Validity; 4] = [
        Validity::Valid,
        Validity::BadEndorsement,
        Validity::MvccConflict,
        Validity::Unauthorized,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Validity::Valid => "VALID",
            Validity::BadEndorsement => "BAD_ENDORSEMENT",
            Validity::MvccConflict => "MVCC_CONFLICT",
            Validity::Unauthorized => "UNAUTHORIZED",
        }
    }
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Canonical for Validity {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(*self as u8);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = reader.byte()?;
        Validity::ALL
            .get(tag as usize)
            .copied()
            .ok_or(CodecError::InvalidTag(tag))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub number: u64,
    pub prev_hash: Hash,
    pub data_hash: Hash,
    /// Milliseconds since the epoch, assigned by the orderer.
    pub timestamp: u64,
}

impl BlockHeader {
    pub fn hash(&self) -> Hash {
        hash_payload(&canonical_encode(self))
    }
}

impl Canonical for BlockHeader {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.number.encode_to(out);
        self.prev_hash.encode_to(out);
        self.data_hash.encode_to(out);
        self.timestamp.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BlockHeader {
            number: u64::decode_from(reader)?,
            prev_hash: Hash::decode_from(reader)?,
            data_hash: Hash::decode_from(reader)?,
            timestamp: u64::decode_from(reader)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub envelopes: Vec<Envelope>,
    pub validity: Vec<Validity>,
    /// Zero until the block is appended to a ledger.
    pub commit_hash: Hash,
}

impl Canonical for Block {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.header.encode_to(out);
        self.envelopes.encode_to(out);
        self.validity.encode_to(out);
        self.commit_hash.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Block {
            header: BlockHeader::decode_from(reader)?,
            envelopes: Vec::decode_from(reader)?,
            validity: Vec::decode_from(reader)?,
            commit_hash: Hash::decode_from(reader)?,
        })
    }
}

impl Block {
    pub fn channel(&self) -> Option<&str> {
        self.envelopes.first().map(|e| e.proposal.channel.as_str())
    }

    pub fn tx_ids(&self) -> Vec<Hash> {
        self.envelopes.iter().map(|e| e.tx_id.0).collect()
    }

    /// Commit digest of this block given the previous block's commit hash.
    pub fn compute_commit_hash(&self, prev_commit: &Hash) -> Hash {
        let envelopes = hash_payload(&canonical_encode(&self.envelopes));
        let flags = canonical_encode(&self.validity);
        hash_parts(&[&prev_commit.0, &self.header.hash().0, &envelopes.0, &flags])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("block {got} does not follow height {expected}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("block {0} prev_hash does not link to its predecessor")]
    BadLink(u64),
    #[error("{envelopes} envelopes but {flags} validity flags")]
    LengthMismatch { envelopes: usize, flags: usize },
    #[error("block {0} data_hash does not match its envelopes")]
    BadDataHash(u64),
    #[error("ledger record {record}: {error}")]
    Decode { record: u64, error: CodecError },
    #[error("ledger io: {0}")]
    Io(String),
}

impl LedgerError {
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::SequenceGap { .. } => "SEQUENCE_GAP",
            LedgerError::BadLink(_) => "BAD_LINK",
            LedgerError::LengthMismatch { .. } => "LENGTH_MISMATCH",
            LedgerError::BadDataHash(_) => "BAD_DATA_HASH",
            LedgerError::Decode { .. } => "MALFORMED_LEDGER",
            LedgerError::Io(_) => "IO_ERROR",
        }
    }
}

impl From<std::io::Error> for LedgerError {
    fn from(e: std::io::Error) -> Self {
        LedgerError::Io(e.to_string())
    }
}

pub fn build_block(
    number: u64,
    prev_hash: Hash,
    envelopes: Vec<Envelope>,
    validity: Vec<Validity>,
    timestamp: u64,
) -> Result<Block, LedgerError> {
    if envelopes.len() != validity.len() {
        return Err(LedgerError::LengthMismatch { envelopes: envelopes.len(), flags: validity.len() });
    }
    let ids: Vec<Hash> = envelopes.iter().map(|e| e.tx_id.0).collect();
    Ok(Block {
        header: BlockHeader { number, prev_hash, data_hash: merkle_root(&ids), timestamp },
        envelopes,
        validity,
        commit_hash: Hash::ZERO,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ChainReport {
    pub ok: bool,
    pub first_bad_block: Option<u64>,
    pub blocks: u64,
}

/// Incremental chain checker; feed blocks in order.
#[derive(Default)]
pub struct ChainVerifier {
    next: u64,
    prev_header: Option<Hash>,
    prev_commit: Hash,
}

impl ChainVerifier {
    /// Returns `false` at the first block that violates a chain rule.
    pub fn check(&mut self, block: &Block) -> bool {
        let h = &block.header;
        let linked = match self.prev_header {
            None => h.prev_hash == Hash::ZERO,
            Some(prev) => h.prev_hash == prev,
        };
        let ok = h.number == self.next
            && linked
            && block.validity.len() == block.envelopes.len()
            && block.envelopes.iter().all(|e| e.tx_id == e.proposal.tx_id())
            && merkle_root(&block.tx_ids()) == h.data_hash
            && block.compute_commit_hash(&self.prev_commit) == block.commit_hash;
        if ok {
            self.next += 1;
            self.prev_header = Some(h.hash());
            self.prev_commit = block.commit_hash;
        }
        ok
    }
}

pub fn verify_blocks<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> ChainReport {
    let mut verifier = ChainVerifier::default();
    let mut count = 0;
    for block in blocks {
        if !verifier.check(block) {
            return ChainReport { ok: false, first_bad_block: Some(count), blocks: count };
        }
        count += 1;
    }
    ChainReport { ok: true, first_bad_block: None, blocks: count }
}

enum BlockStore {
    Memory(Vec<Block>),
    File(store::FileStore),
}

/// A peer's copy of one channel's chain. Only ever appended to.
pub struct Ledger {
    owner_peer: String,
    channel: String,
    headers: Vec<BlockHeader>,
    commit_hashes: Vec<Hash>,
    store: BlockStore,
}

impl Ledger {
    pub fn in_memory(owner_peer: &str, channel: &str) -> Ledger {
        Ledger {
            owner_peer: owner_peer.to_string(),
            channel: channel.to_string(),
            headers: Vec::new(),
            commit_hashes: Vec::new(),
            store: BlockStore::Memory(Vec::new()),
        }
    }

    /// Creates an empty file-backed ledger at `path`, truncating any
    /// existing file. Blocks live on disk; only headers stay in memory.
    pub fn create_file(owner_peer: &str, channel: &str, path: &Path, durability: Durability) -> Result<Ledger, LedgerError> {
        Ok(Ledger {
            owner_peer: owner_peer.to_string(),
            channel: channel.to_string(),
            headers: Vec::new(),
            commit_hashes: Vec::new(),
            store: BlockStore::File(store::FileStore::create(path, durability)?),
        })
    }

    pub fn owner_peer(&self) -> &str {
        &self.owner_peer
    }

    pub fn channel(&self) -> &str {
        &self.channel
    }

    pub fn height(&self) -> u64 {
        self.headers.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.headers.is_empty()
    }

    pub fn header(&self, number: u64) -> Option<&BlockHeader> {
        self.headers.get(number as usize)
    }

    pub fn last_header_hash(&self) -> Option<Hash> {
        self.headers.last().map(BlockHeader::hash)
    }

    pub fn path(&self) -> Option<&PathBuf> {
        match &self.store {
            BlockStore::Memory(_) => None,
            BlockStore::File(f) => Some(f.path()),
        }
    }

    pub fn block(&self, number: u64) -> Result<Option<Cow<'_, Block>>, LedgerError> {
        if number >= self.height() {
            return Ok(None);
        }
        match &self.store {
            BlockStore::Memory(blocks) => Ok(Some(Cow::Borrowed(&blocks[number as usize]))),
            BlockStore::File(f) => Ok(Some(Cow::Owned(f.read_block(number)?))),
        }
    }

    /// Appends `block` after checking sequence and linkage, stamps its
    /// commit hash, and persists it.
    pub fn append_block(&mut self, block: Block) -> Result<&BlockHeader, LedgerError> {
        self.append_with(block, |_| ())?;
        Ok(self.headers.last().unwrap())
    }

    /// Appends like [`Ledger::append_block`], then hands the stamped block to
    /// `f` once it is durable.
    pub fn append_with<R>(&mut self, mut block: Block, f: impl FnOnce(&Block) -> R) -> Result<R, LedgerError> {
        let h = &block.header;
        if h.number != self.height() {
            return Err(LedgerError::SequenceGap { expected: self.height(), got: h.number });
        }
        let expected_prev = self.last_header_hash().unwrap_or(Hash::ZERO);
        if h.prev_hash != expected_prev {
            return Err(LedgerError::BadLink(h.number));
        }
        if block.validity.len() != block.envelopes.len() {
            return Err(LedgerError::LengthMismatch {
                envelopes: block.envelopes.len(),
                flags: block.validity.len(),
            });
        }
        if merkle_root(&block.tx_ids()) != h.data_hash {
            return Err(LedgerError::BadDataHash(h.number));
        }
        let prev_commit = self.commit_hashes.last().copied().unwrap_or(Hash::ZERO);
        block.commit_hash = block.compute_commit_hash(&prev_commit);
        if let BlockStore::File(file) = &mut self.store {
            file.append(&block)?;
        }
        let out = f(&block);
        self.headers.push(block.header.clone());
        self.commit_hashes.push(block.commit_hash);
        if let BlockStore::Memory(blocks) = &mut self.store {
            blocks.push(block);
        }
        Ok(out)
    }

    pub fn verify(&self) -> Result<ChainReport, LedgerError> {
        match &self.store {
            BlockStore::Memory(blocks) => Ok(verify_blocks(blocks)),
            BlockStore::File(f) => Ok(verify_ledger_file(f.path())),
        }
    }

    /// Visits every block in order.
    pub fn for_each_block(&self, mut f: impl FnMut(&Block)) -> Result<(), LedgerError> {
        match &self.store {
            BlockStore::Memory(blocks) => blocks.iter().for_each(f),
            BlockStore::File(file) => {
                for block in LedgerFileReader::open(file.path())? {
                    f(&block?);
                }
            }
        }
        Ok(())
    }
}

pub fn verify_chain(ledger: &Ledger) -> ChainReport {
    ledger.verify().unwrap_or(ChainReport { ok: false, first_bad_block: Some(0), blocks: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Doc;
    use crate::txflow::{Envelope, Proposal};

    pub(crate) fn envelope(tag: &str) -> Envelope {
        let proposal = Proposal {
            channel: "main".into(),
            contract_op: "noop".into(),
            args: Doc::map().with("tag", tag),
            creator: "c".into(),
            nonce: [0u8; 16],
            endorser_peers: vec![],
        };
        Envelope { tx_id: proposal.tx_id(), proposal, endorsements: vec![] }
    }

    pub(crate) fn chain(n: usize) -> Ledger {
        let mut ledger = Ledger::in_memory("p1", "main");
        for i in 0..n {
            let prev = ledger.last_header_hash().unwrap_or(Hash::ZERO);
            let envs = vec![envelope(&format!("{i}-a")), envelope(&format!("{i}-b"))];
            let block = build_block(i as u64, prev, envs, vec![Validity::Valid; 2], 1000 + i as u64).unwrap();
            ledger.append_block(block).unwrap();
        }
        ledger
    }

    #[test]
    fn genesis_conventions() {
        let block = build_block(0, Hash::ZERO, vec![], vec![], 0).unwrap();
        assert_eq!(block.header.data_hash, hash_payload(b""));
        let mut ledger = Ledger::in_memory("p1", "main");
        ledger.append_block(block).unwrap();
        assert_eq!(verify_chain(&ledger), ChainReport { ok: true, first_bad_block: None, blocks: 1 });
    }

    #[test]
    fn single_envelope_data_hash_is_leaf_hash() {
        let env = envelope("x");
        let block = build_block(0, Hash::ZERO, vec![env.clone()], vec![Validity::Valid], 0).unwrap();
        assert_eq!(block.header.data_hash, hash_payload(&env.tx_id.0 .0));
    }

    #[test]
    fn envelope_order_changes_data_hash() {
        let (a, b) = (envelope("a"), envelope("b"));
        let ab = build_block(0, Hash::ZERO, vec![a.clone(), b.clone()], vec![Validity::Valid; 2], 0).unwrap();
        let ba = build_block(0, Hash::ZERO, vec![b, a], vec![Validity::Valid; 2], 0).unwrap();
        assert_ne!(ab.header.data_hash, ba.header.data_hash);
    }

    #[test]
    fn length_mismatch() {
        let err = build_block(0, Hash::ZERO, vec![envelope("a")], vec![], 0).unwrap_err();
        assert_eq!(err.code(), "LENGTH_MISMATCH");
    }

    #[test]
    fn three_block_chain_verifies() {
        assert!(verify_chain(&chain(3)).ok);
    }

    #[test]
    fn append_rules() {
        let mut ledger = chain(1);
        let genesis_hash = ledger.last_header_hash().unwrap();
        let gap = build_block(2, genesis_hash, vec![], vec![], 0).unwrap();
        assert_eq!(ledger.append_block(gap).unwrap_err().code(), "SEQUENCE_GAP");
        let wrong = build_block(1, Hash::ZERO, vec![], vec![], 0).unwrap();
        assert_eq!(ledger.append_block(wrong).unwrap_err().code(), "BAD_LINK");
        let good = build_block(1, genesis_hash, vec![], vec![], 0).unwrap();
        ledger.append_block(good).unwrap();
        assert_eq!(ledger.height(), 2);
    }

    #[test]
    fn tampered_envelope_is_reported() {
        let ledger = chain(3);
        let BlockStore::Memory(blocks) = &ledger.store else { unreachable!() };
        let mut blocks = blocks.clone();
        blocks[1].envelopes[0].proposal.args = Doc::map().with("tag", "forged");
        let report = verify_blocks(&blocks);
        assert_eq!(report.first_bad_block, Some(1));

        let mut blocks2 = match &ledger.store {
            BlockStore::Memory(b) => b.clone(),
            _ => unreachable!(),
        };
        blocks2[2].validity[1] = Validity::MvccConflict;
        assert_eq!(verify_blocks(&blocks2).first_bad_block, Some(2));
    }
}
