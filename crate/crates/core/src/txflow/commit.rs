use std::collections::HashMap;

use crate::hash::Hash;
use crate::ledger::{Block, Ledger, LedgerError, Validity};
use crate::membership::Membership;
use crate::state::{StateDb, StateView, StateWriter, Version};

use super::types::Envelope;
use super::{check_endorsements, TxError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitOutcome {
    pub block_no: u64,
    pub header_hash: Hash,
    pub flags: Vec<Validity>,
}

fn flag_envelope(
    env: &Envelope,
    number: u64,
    index: usize,
    channel: &str,
    membership: &Membership,
    state: &dyn StateView,
    overlay: &HashMap<&str, Option<Version>>,
) -> Validity {
    if env.proposal.is_config() {
        let genesis = number == 0 && index == 0 && env.endorsements.is_empty() && env.tx_id == env.proposal.tx_id();
        return if genesis { Validity::Valid } else { Validity::BadEndorsement };
    }
    if env.proposal.channel != channel
        || check_endorsements(&env.proposal, &env.tx_id, &env.endorsements, membership).is_err()
    {
        return Validity::BadEndorsement;
    }
    if !membership.authorize(&env.proposal.creator, channel) {
        return Validity::Unauthorized;
    }
    let current = |key: &str| match overlay.get(key) {
        Some(v) => *v,
        None => state.get(key).map(|e| e.version),
    };
    if env.read_set().iter().any(|r| current(&r.key) != r.version) {
        return Validity::MvccConflict;
    }
    Validity::Valid
}

fn block_flags(
    block: &Block,
    channel: &str,
    membership: &Membership,
    state: &dyn StateView,
) -> Vec<Validity> {
    let number = block.header.number;
    let mut overlay: HashMap<&str, Option<Version>> = HashMap::new();
    let mut flags = Vec::with_capacity(block.envelopes.len());
    for (index, env) in block.envelopes.iter().enumerate() {
        let flag = flag_envelope(env, number, index, channel, membership, state, &overlay);
        if flag == Validity::Valid {
            let version = Version::new(number, index as u64);
            for w in env.write_set() {
                overlay.insert(&w.key, w.value.as_ref().map(|_| version));
            }
        }
        flags.push(flag);
    }
    flags
}

fn apply_valid(
    writer: &mut StateWriter<'_>,
    block: &Block,
    flags: &[Validity],
) -> Result<(), TxError> {
    let number = block.header.number;
    for (index, env) in block.envelopes.iter().enumerate() {
        if flags[index] == Validity::Valid {
            writer.apply_write_set(env.write_set(), Version::new(number, index as u64))?;
        }
    }
    Ok(())
}

fn for_valid(block: &Block, flags: &[Validity], mut f: impl FnMut(usize, &Envelope)) {
    for (index, env) in block.envelopes.iter().enumerate() {
        if flags[index] == Validity::Valid {
            f(index, env);
        }
    }
}

/// Validates every envelope of an ordered block, appends the block with its
/// flags to `ledger`, and applies the write sets of valid envelopes at
/// `Version(block, index)`. Envelopes see the effects of earlier valid
/// envelopes in the same block.
///
/// The whole block is applied under the state writer lock, so readers never
/// observe a partially committed block.
pub fn validate_and_commit(
    peer: &str,
    ledger: &mut Ledger,
    state: &StateDb,
    membership: &Membership,
    block: Block,
) -> Result<CommitOutcome, TxError> {
    validate_and_commit_with(peer, ledger, state, membership, block, |_, _| {})
}

/// As [`validate_and_commit`], calling `on_valid(index, envelope)` for each
/// valid envelope after the block is committed.
pub fn validate_and_commit_with(
    peer: &str,
    ledger: &mut Ledger,
    state: &StateDb,
    membership: &Membership,
    mut block: Block,
    on_valid: impl FnMut(usize, &Envelope),
) -> Result<CommitOutcome, TxError> {
    let channel = ledger.channel().to_string();
    let identity = membership.peer_identity(peer)?;
    let member = membership.channel(&channel).map(|c| c.is_member(&identity.id)).unwrap_or(false);
    if !member {
        return Err(TxError::NotAMember { peer: peer.to_string(), channel });
    }
    let number = block.header.number;
    if number != ledger.height() {
        return Err(LedgerError::SequenceGap { expected: ledger.height(), got: number }.into());
    }

    let mut writer = state.writer();
    let flags = block_flags(&block, &channel, membership, &writer);
    block.validity = flags.clone();
    let header_hash = block.header.hash();
    ledger.append_with(block, |block| -> Result<(), TxError> {
        apply_valid(&mut writer, block, &flags)?;
        drop(writer);
        for_valid(block, &flags, on_valid);
        Ok(())
    })??;
    Ok(CommitOutcome { block_no: number, header_hash, flags })
}

/// Re-executes validation of an already stored block against `state` and
/// applies its valid writes. Returns the recomputed flags; the caller
/// compares them with the stored ones.
pub fn replay_block(
    channel: &str,
    state: &StateDb,
    membership: &Membership,
    block: &Block,
    on_valid: impl FnMut(usize, &Envelope),
) -> Result<Vec<Validity>, TxError> {
    let mut writer = state.writer();
    let flags = block_flags(block, channel, membership, &writer);
    apply_valid(&mut writer, block, &flags)?;
    drop(writer);
    for_valid(block, &flags, on_valid);
    Ok(flags)
}
