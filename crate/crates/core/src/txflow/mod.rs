//! The execute-order-validate transaction lifecycle.
//!
//! 1. A client sends a [`Proposal`] to every designated endorser.
//! 2. Each endorser simulates the contract operation against its own world
//!    state with [`endorse`], producing read/write sets and a signed
//!    [`Endorsement`].
//! 3. The client [`assemble`]s an [`Envelope`] only if at least two
//!    endorsements arrived, every designated endorser signed, and all result
//!    hashes are equal.
//! 4. The [`Orderer`] sequences envelopes into blocks per channel.
//! 5. Each member peer runs [`validate_and_commit`], re-checking
//!    endorsements, creator membership and read versions before applying the
//!    write sets of valid envelopes.

mod commit;
mod contract;
mod orderer;
mod types;

use std::collections::BTreeSet;

use crate::codec::Doc;
use crate::ledger::LedgerError;
use crate::membership::{Membership, MembershipError};
use crate::state::{StateError, StateView};

pub use commit::{replay_block, validate_and_commit, validate_and_commit_with, CommitOutcome};
pub use contract::{Contract, ContractError, TxContext};
pub use orderer::{Orderer, OrdererConfig};
pub use types::{
    endorsement_payload, result_hash, Endorsement, Envelope, Proposal, ReadItem, TxId, CONFIG_OP,
};

/// Minimum number of matching endorsements.
pub const MIN_ENDORSEMENTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TxError {
    #[error("peer {0} is not a designated endorser of this proposal on its channel")]
    NotAnEndorser(String),
    #[error("unknown contract operation {0}")]
    UnknownOp(String),
    #[error("contract refused: {0}")]
    Contract(ContractError),
    #[error("endorsement result hashes differ")]
    EndorsementMismatch,
    #[error("{got} endorsements, {needed} required")]
    InsufficientEndorsements { got: usize, needed: usize },
    #[error("endorsement by {0} does not verify")]
    BadSignature(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("peer {peer} is not a member of channel {channel}")]
    NotAMember { peer: String, channel: String },
    #[error("envelope {0} already submitted")]
    DuplicateTx(TxId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Membership(#[from] MembershipError),
    #[error(transparent)]
    State(#[from] StateError),
}

impl TxError {
    pub fn code(&self) -> &str {
        match self {
            TxError::NotAnEndorser(_) => "NOT_AN_ENDORSER",
            TxError::UnknownOp(_) => "UNKNOWN_OP",
            TxError::Contract(e) => &e.code,
            TxError::EndorsementMismatch => "ENDORSEMENT_MISMATCH",
            TxError::InsufficientEndorsements { .. } => "INSUFFICIENT_ENDORSEMENTS",
            TxError::BadSignature(_) => "BAD_SIGNATURE",
            TxError::UnknownChannel(_) => "UNKNOWN_CHANNEL",
            TxError::NotAMember { .. } => "NOT_A_MEMBER",
            TxError::DuplicateTx(_) => "DUPLICATE_TX",
            TxError::Ledger(e) => e.code(),
            TxError::Membership(e) => e.code(),
            TxError::State(e) => e.code(),
        }
    }
}

/// Simulates `proposal` on `peer` and signs the result.
///
/// Returns the endorsement together with the contract's response document.
pub fn endorse(
    peer: &str,
    state: &dyn StateView,
    membership: &Membership,
    contract: &dyn Contract,
    proposal: &Proposal,
) -> Result<(Endorsement, Doc), TxError> {
    let channel = membership
        .channel(&proposal.channel)
        .map_err(|_| TxError::UnknownChannel(proposal.channel.clone()))?;
    let peer_identity = membership
        .peer_identity(peer)
        .map_err(|_| TxError::NotAnEndorser(peer.to_string()))?;
    if !proposal.endorser_peers.iter().any(|p| p == peer) || !channel.is_member(&peer_identity.id) {
        return Err(TxError::NotAnEndorser(peer.to_string()));
    }
    if proposal.is_config() || !contract.supports(&proposal.contract_op) {
        return Err(TxError::UnknownOp(proposal.contract_op.clone()));
    }
    let creator = membership.identity(&proposal.creator)?;
    let tx_id = proposal.tx_id();
    let mut ctx = TxContext::new(state, membership, channel, creator, tx_id);
    let response = contract
        .invoke(&mut ctx, &proposal.contract_op, &proposal.args)
        .map_err(TxError::Contract)?;
    let (read_set, write_set) = ctx.into_sets();
    let hash = result_hash(&read_set, &write_set);
    let signature = peer_identity.sign(&endorsement_payload(&tx_id, &hash));
    Ok((
        Endorsement { peer: peer.to_string(), read_set, write_set, result_hash: hash, signature },
        response,
    ))
}

/// The endorsement policy: every designated endorser (at least two) signed,
/// each signature and result hash verifies, and all result hashes are equal.
pub fn check_endorsements(
    proposal: &Proposal,
    tx_id: &TxId,
    endorsements: &[Endorsement],
    membership: &Membership,
) -> Result<(), TxError> {
    if proposal.tx_id() != *tx_id {
        return Err(TxError::BadSignature("tx_id".into()));
    }
    let designated: BTreeSet<&str> = proposal.endorser_peers.iter().map(String::as_str).collect();
    let signers: BTreeSet<&str> = endorsements.iter().map(|e| e.peer.as_str()).collect();
    let needed = designated.len().max(MIN_ENDORSEMENTS);
    if endorsements.len() < needed || signers.len() != endorsements.len() || signers != designated {
        return Err(TxError::InsufficientEndorsements { got: signers.len(), needed });
    }
    for e in endorsements {
        let identity = membership
            .peer_identity(&e.peer)
            .map_err(|_| TxError::BadSignature(e.peer.clone()))?;
        let payload = endorsement_payload(tx_id, &e.result_hash);
        let signed = membership.verify(&identity.id, &payload, &e.signature)?;
        if !signed || e.recomputed_hash() != e.result_hash {
            return Err(TxError::BadSignature(e.peer.clone()));
        }
    }
    if endorsements.windows(2).any(|w| w[0].result_hash != w[1].result_hash) {
        return Err(TxError::EndorsementMismatch);
    }
    Ok(())
}

pub fn assemble(
    proposal: Proposal,
    endorsements: Vec<Endorsement>,
    membership: &Membership,
) -> Result<Envelope, TxError> {
    let tx_id = proposal.tx_id();
    check_endorsements(&proposal, &tx_id, &endorsements, membership)?;
    Ok(Envelope { tx_id, proposal, endorsements })
}

#[cfg(test)]
pub(crate) mod testkit;
