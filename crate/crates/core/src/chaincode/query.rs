//! Read-only queries over committed main-channel state and the provenance
//! index. None of these go through endorsement.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::Doc;
use crate::hash::Hash;
use crate::membership::{Membership, Role};
use crate::state::StateView;

use super::index::ProvenanceIndex;
use super::qr::{MalformedPayload, QrPayload};
use super::types::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("unknown batch {0}")]
    UnknownBatch(String),
    #[error("unknown origin {0}")]
    UnknownOrigin(String),
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error(transparent)]
    Malformed(#[from] MalformedPayload),
    #[error("payload does not verify: {0}")]
    Invalid(&'static str),
}

impl QueryError {
    pub fn code(&self) -> &'static str {
        match self {
            QueryError::UnknownBatch(_) => "UNKNOWN_BATCH",
            QueryError::UnknownOrigin(_) => "UNKNOWN_ORIGIN",
            QueryError::UnknownIdentity(_) => "UNKNOWN_IDENTITY",
            QueryError::Malformed(_) => "MALFORMED_PAYLOAD",
            QueryError::Invalid(_) => "INVALID",
        }
    }
}

pub fn get_batch(state: &dyn StateView, batch_id: &str) -> Option<Batch> {
    let entry = state.get(&batch_key(batch_id))?;
    Some(entry.doc.to_serde().expect("stored batches decode"))
}

fn custodian(state: &dyn StateView, batch_id: &str) -> Option<String> {
    let doc = &state.get(&batch_key(batch_id))?.doc;
    let history = doc.get("custody_history")?.as_list()?;
    history.last()?.get("holder")?.as_str().map(str::to_string)
}

pub fn trace_back(state: &dyn StateView, index: &ProvenanceIndex, batch_id: &str) -> Result<TraceBack, QueryError> {
    let unknown = || QueryError::UnknownBatch(batch_id.to_string());
    let start = index.node(batch_id).ok_or_else(unknown)?;
    get_batch(state, batch_id).ok_or_else(unknown)?;
    let mut reached = index.backward_reach([start]);
    reached.sort_unstable();

    let mut origin_farms = BTreeSet::new();
    let mut animal_events = BTreeMap::new();
    let mut tree = Vec::new();
    for &node in &reached {
        let id = index.batch_id(node);
        for &input in index.inputs(node) {
            let from = index.batch_id(input);
            let step_id = state
                .get(&edge_key(id, from))
                .and_then(|e| e.doc.get("step_id").and_then(Doc::as_str).map(str::to_string))
                .unwrap_or_default();
            tree.push(ProvenanceEdge { from_batch: from.to_string(), to_batch: id.to_string(), step_id });
        }
        if !index.inputs(node).is_empty() {
            continue;
        }
        let Some(batch) = get_batch(state, id) else { continue };
        if batch.kind != BatchKind::RawMilk {
            continue;
        }
        origin_farms.insert(batch.owner.clone());
        for animal_id in &batch.source_animals {
            if let Some(entry) = state.get(&animal_key(animal_id)) {
                let animal: Animal = entry.doc.to_serde().expect("stored animals decode");
                animal_events.insert(animal_id.clone(), animal.events);
            }
        }
    }
    tree.sort();
    Ok(TraceBack { batch_id: batch_id.to_string(), origin_farms, tree, animal_events })
}

/// Forward reachability from a batch, or from every raw-milk batch of a
/// farm. `height` is the main-channel height the state reflects.
pub fn trace_forward(
    state: &dyn StateView,
    index: &ProvenanceIndex,
    membership: &Membership,
    origin: &str,
    height: u64,
) -> Result<RecallReport, QueryError> {
    let reached = if let Some(node) = index.node(origin) {
        index.forward_reach([node])
    } else if membership.identity(origin).is_ok_and(|i| i.role == Role::Farm) {
        index.forward_reach(index.raw_batches_of(origin).iter().copied())
    } else {
        return Err(QueryError::UnknownOrigin(origin.to_string()));
    };
    let affected_batches = index.names(&reached);
    let holders = affected_batches
        .iter()
        .filter_map(|b| custodian(state, b).map(|h| (b.clone(), h)))
        .collect();
    Ok(RecallReport { origin: origin.to_string(), affected_batches, holders, generated_at_height: height })
}

pub fn token_entry(state: &dyn StateView, membership: &Membership, farm: &str) -> Result<TokenLedgerEntry, QueryError> {
    membership.identity(farm).map_err(|_| QueryError::UnknownIdentity(farm.to_string()))?;
    let tokens: Vec<String> = state
        .scan_prefix(&token_prefix(farm))
        .filter_map(|e| e.doc.get("token").and_then(Doc::as_str).map(str::to_string))
        .collect();
    Ok(TokenLedgerEntry { farm_id: farm.to_string(), balance: tokens.len() as u64, tokens })
}

pub fn token_balance(state: &dyn StateView, membership: &Membership, farm: &str) -> Result<u64, QueryError> {
    token_entry(state, membership, farm).map(|e| e.balance)
}

/// Anchors the payload at the last main-channel block that wrote the batch.
pub fn encode_qr(
    state: &dyn StateView,
    batch_id: &str,
    header_hash: impl Fn(u64) -> Option<Hash>,
) -> Result<QrPayload, QueryError> {
    let entry = state.get(&batch_key(batch_id)).ok_or_else(|| QueryError::UnknownBatch(batch_id.to_string()))?;
    let block = entry.version.block_no;
    let hash = header_hash(block).expect("committed version refers to a stored block");
    Ok(QrPayload::new(batch_id, block, &hash))
}

/// Checks a scanned payload and returns the batch's full trace.
///
/// The anchor must be a stored block no older than the batch itself and the
/// digest must match that block's header hash.
pub fn verify_qr(
    state: &dyn StateView,
    index: &ProvenanceIndex,
    payload: &str,
    header_hash: impl Fn(u64) -> Option<Hash>,
) -> Result<TraceBack, QueryError> {
    let qr: QrPayload = payload.parse()?;
    let created = index.created_block(&qr.batch_id).ok_or(QueryError::Invalid("unknown batch"))?;
    if qr.block_no < created {
        return Err(QueryError::Invalid("anchor predates the batch"));
    }
    let hash = header_hash(qr.block_no).ok_or(QueryError::Invalid("anchor block does not exist"))?;
    if !qr.matches(&hash) {
        return Err(QueryError::Invalid("digest mismatch"));
    }
    trace_back(state, index, &qr.batch_id)
}
