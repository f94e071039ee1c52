//! Versioned document world state.
//!
//! The store is an ordered map from namespaced keys (`<contract>:<kind>:<id>`)
//! to documents stamped with the [`Version`] of the transaction that last
//! wrote them. Readers take a [`StateSnapshot`]; the single committer takes a
//! [`StateWriter`] and applies a whole block under one lock, so readers see
//! either the state before a block or after it.

mod selector;

use std::collections::BTreeMap;
use std::ops::Bound;

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Canonical, CodecError, Doc, Reader};
use crate::hash::Hash;

pub use selector::{Scalar, Selector, SelectorError};

/// Position of the committing envelope: `(block number, index in block)`.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct Version {
    pub block_no: u64,
    pub tx_index: u64,
}

impl Version {
    pub fn new(block_no: u64, tx_index: u64) -> Self {
        Version { block_no, tx_index }
    }
}

impl Canonical for Version {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.block_no.encode_to(out);
        self.tx_index.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Version {
            block_no: u64::decode_from(reader)?,
            tx_index: u64::decode_from(reader)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateEntry {
    pub key: String,
    pub doc: Doc,
    pub version: Version,
}

/// One intended write: `Some(doc)` to put, `None` to delete.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteItem {
    pub key: String,
    pub value: Option<Doc>,
}

impl WriteItem {
    pub fn put(key: impl Into<String>, doc: Doc) -> Self {
        WriteItem { key: key.into(), value: Some(doc) }
    }

    pub fn delete(key: impl Into<String>) -> Self {
        WriteItem { key: key.into(), value: None }
    }
}

impl Canonical for WriteItem {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.key.encode_to(out);
        self.value.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(WriteItem {
            key: String::decode_from(reader)?,
            value: Option::decode_from(reader)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("write to {key} at {attempted:?} does not advance stored version {stored:?}")]
    VersionRegression {
        key: String,
        stored: Version,
        attempted: Version,
    },
    #[error("empty key")]
    EmptyKey,
}

impl StateError {
    pub fn code(&self) -> &'static str {
        match self {
            StateError::VersionRegression { .. } => "VERSION_REGRESSION",
            StateError::EmptyKey => "EMPTY_KEY",
        }
    }
}

/// Read access to committed state.
pub trait StateView {
    fn get(&self, key: &str) -> Option<&StateEntry>;

    /// Entries whose key starts with `prefix`, in key order.
    fn scan_prefix<'a>(&'a self, prefix: &'a str) -> Box<dyn Iterator<Item = &'a StateEntry> + 'a>;
}

type Entries = BTreeMap<String, StateEntry>;

#[derive(Default)]
pub struct StateDb {
    entries: RwLock<Entries>,
}

impl StateDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self) -> StateSnapshot<'_> {
        StateSnapshot { entries: self.entries.read() }
    }

    /// Takes the committer lock. Readers wait until the writer is dropped.
    pub fn writer(&self) -> StateWriter<'_> {
        StateWriter { entries: self.entries.write() }
    }

    pub fn get(&self, key: &str) -> Option<StateEntry> {
        self.entries.read().get(key).cloned()
    }

    pub fn apply_write_set(&self, writes: &[WriteItem], version: Version) -> Result<(), StateError> {
        self.writer().apply_write_set(writes, version)
    }

    pub fn query(&self, selector: &Selector) -> Vec<StateEntry> {
        self.read().query(selector).into_iter().cloned().collect()
    }

    pub fn state_root(&self) -> Hash {
        self.read().state_root()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct StateSnapshot<'a> {
    entries: RwLockReadGuard<'a, Entries>,
}

fn prefix_iter<'a>(entries: &'a Entries, prefix: &'a str) -> impl Iterator<Item = &'a StateEntry> + 'a {
    entries
        .range::<str, _>((Bound::Included(prefix), Bound::Unbounded))
        .take_while(move |(k, _)| k.starts_with(prefix))
        .map(|(_, e)| e)
}

fn root_of(entries: &Entries) -> Hash {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    (entries.len() as u32).encode_to(&mut buf);
    for entry in entries.values() {
        entry.key.encode_to(&mut buf);
        entry.version.encode_to(&mut buf);
        entry.doc.encode_to(&mut buf);
        hasher.update(&buf);
        buf.clear();
    }
    hasher.update(&buf);
    Hash(hasher.finalize().into())
}

impl StateSnapshot<'_> {
    /// All entries satisfying `selector`, ascending by key.
    pub fn query(&self, selector: &Selector) -> Vec<&StateEntry> {
        self.entries.values().filter(|e| selector.matches(&e.doc)).collect()
    }

    /// Digest of the canonical encoding of every `(key, version, doc)`
    /// triple in key order.
    pub fn state_root(&self) -> Hash {
        root_of(&self.entries)
    }

    pub fn entries(&self) -> impl Iterator<Item = &StateEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl StateView for StateSnapshot<'_> {
    fn get(&self, key: &str) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    fn scan_prefix<'a>(&'a self, prefix: &'a str) -> Box<dyn Iterator<Item = &'a StateEntry> + 'a> {
        Box::new(prefix_iter(&self.entries, prefix))
    }
}

pub struct StateWriter<'a> {
    entries: RwLockWriteGuard<'a, Entries>,
}

impl StateWriter<'_> {
    /// Applies every write at `version`, or nothing if any touched key
    /// already carries a version `>= version`.
    pub fn apply_write_set(&mut self, writes: &[WriteItem], version: Version) -> Result<(), StateError> {
        for w in writes {
            if w.key.is_empty() {
                return Err(StateError::EmptyKey);
            }
            if let Some(existing) = self.entries.get(&w.key) {
                if existing.version >= version {
                    return Err(StateError::VersionRegression {
                        key: w.key.clone(),
                        stored: existing.version,
                        attempted: version,
                    });
                }
            }
        }
        for w in writes {
            match &w.value {
                Some(doc) => {
                    self.entries.insert(
                        w.key.clone(),
                        StateEntry { key: w.key.clone(), doc: doc.clone(), version },
                    );
                }
                None => {
                    self.entries.remove(&w.key);
                }
            }
        }
        Ok(())
    }

    pub fn state_root(&self) -> Hash {
        root_of(&self.entries)
    }
}

impl StateView for StateWriter<'_> {
    fn get(&self, key: &str) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    fn scan_prefix<'a>(&'a self, prefix: &'a str) -> Box<dyn Iterator<Item = &'a StateEntry> + 'a> {
        Box::new(prefix_iter(&self.entries, prefix))
    }
}

impl StateView for BTreeMap<String, StateEntry> {
    fn get(&self, key: &str) -> Option<&StateEntry> {
        BTreeMap::get(self, key)
    }

    fn scan_prefix<'a>(&'a self, prefix: &'a str) -> Box<dyn Iterator<Item = &'a StateEntry> + 'a> {
        Box::new(prefix_iter(self, prefix))
    }
}
