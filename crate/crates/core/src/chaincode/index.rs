use std::collections::{BTreeSet, HashMap};

use crate::codec::Doc;
use crate::state::WriteItem;

use super::types::{BATCH_PREFIX, EDGE_PREFIX};

/// In-memory adjacency over committed batches and provenance edges.
///
/// Batch ids are interned to dense `u32` node ids. The index is fed from the
/// write sets of valid envelopes in commit order and rebuilt the same way on
/// replay, so it never has to scan the state store.
#[derive(Default, Debug, Clone)]
pub struct ProvenanceIndex {
    ids: Vec<String>,
    lookup: HashMap<String, u32>,
    forward: Vec<Vec<u32>>,
    backward: Vec<Vec<u32>>,
    created_block: Vec<u64>,
    raw_by_farm: HashMap<String, Vec<u32>>,
    edges: usize,
}

impl ProvenanceIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn node(&self, batch_id: &str) -> Option<u32> {
        self.lookup.get(batch_id).copied()
    }

    pub fn batch_id(&self, node: u32) -> &str {
        &self.ids[node as usize]
    }

    pub fn contains(&self, batch_id: &str) -> bool {
        self.lookup.contains_key(batch_id)
    }

    /// Block in which the batch was first committed.
    pub fn created_block(&self, batch_id: &str) -> Option<u64> {
        self.node(batch_id).map(|n| self.created_block[n as usize])
    }

    pub fn raw_batches_of(&self, farm: &str) -> &[u32] {
        self.raw_by_farm.get(farm).map_or(&[], Vec::as_slice)
    }

    pub fn inputs(&self, node: u32) -> &[u32] {
        &self.backward[node as usize]
    }

    pub fn outputs(&self, node: u32) -> &[u32] {
        &self.forward[node as usize]
    }

    fn intern(&mut self, batch_id: &str, block: u64) -> u32 {
        if let Some(&n) = self.lookup.get(batch_id) {
            return n;
        }
        let n = self.ids.len() as u32;
        self.ids.push(batch_id.to_string());
        self.lookup.insert(batch_id.to_string(), n);
        self.forward.push(Vec::new());
        self.backward.push(Vec::new());
        self.created_block.push(block);
        n
    }

    /// Records the batch and edge writes of one valid envelope.
    pub fn apply_writes(&mut self, block: u64, writes: &[WriteItem]) {
        for w in writes {
            let Some(doc) = &w.value else { continue };
            if let Some(batch_id) = w.key.strip_prefix(BATCH_PREFIX) {
                if self.contains(batch_id) {
                    continue;
                }
                let node = self.intern(batch_id, block);
                if doc.get("kind").and_then(Doc::as_str) == Some("RAW_MILK") {
                    let farm = doc.get("owner").and_then(Doc::as_str).unwrap_or_default();
                    self.raw_by_farm.entry(farm.to_string()).or_default().push(node);
                }
            } else if w.key.starts_with(EDGE_PREFIX) {
                let end = |name| doc.get(name).and_then(Doc::as_str);
                if let (Some(from), Some(to)) = (end("from_batch"), end("to_batch")) {
                    let from = self.intern(from, block);
                    let to = self.intern(to, block);
                    self.forward[from as usize].push(to);
                    self.backward[to as usize].push(from);
                    self.edges += 1;
                }
            }
        }
    }

    fn reach<'a>(&'a self, starts: impl IntoIterator<Item = u32>, next: impl Fn(u32) -> &'a [u32]) -> Vec<u32> {
        let mut seen = vec![false; self.ids.len()];
        let mut stack: Vec<u32> = Vec::new();
        let mut out = Vec::new();
        for s in starts {
            if !seen[s as usize] {
                seen[s as usize] = true;
                stack.push(s);
            }
        }
        while let Some(n) = stack.pop() {
            out.push(n);
            for &m in next(n) {
                if !seen[m as usize] {
                    seen[m as usize] = true;
                    stack.push(m);
                }
            }
        }
        out
    }

    /// Nodes reachable forward from `starts`, including the starts.
    pub fn forward_reach(&self, starts: impl IntoIterator<Item = u32>) -> Vec<u32> {
        self.reach(starts, |n| self.outputs(n))
    }

    /// Nodes reachable backward from `starts`, including the starts.
    pub fn backward_reach(&self, starts: impl IntoIterator<Item = u32>) -> Vec<u32> {
        self.reach(starts, |n| self.inputs(n))
    }

    pub fn names(&self, nodes: &[u32]) -> BTreeSet<String> {
        nodes.iter().map(|&n| self.batch_id(n).to_string()).collect()
    }
}
