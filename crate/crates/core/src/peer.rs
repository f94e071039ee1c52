//! A peer node: one ledger, world state and provenance index per joined
//! channel.

use std::collections::BTreeMap;

use crate::chaincode::ProvenanceIndex;
use crate::codec::Doc;
use crate::ledger::{Block, Ledger, Validity};
use crate::membership::Membership;
use crate::state::StateDb;
use crate::txflow::{self, CommitOutcome, Contract, Endorsement, Proposal, TxError};

pub struct ChannelState {
    pub ledger: Ledger,
    pub state: StateDb,
    pub index: ProvenanceIndex,
}

impl ChannelState {
    pub fn new(ledger: Ledger) -> Self {
        ChannelState { ledger, state: StateDb::new(), index: ProvenanceIndex::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("block {block} replays to different validity flags")]
    Divergence { block: u64 },
    #[error(transparent)]
    Tx(#[from] TxError),
}

impl ReplayError {
    pub fn code(&self) -> &str {
        match self {
            ReplayError::Divergence { .. } => "REPLAY_DIVERGENCE",
            ReplayError::Tx(e) => e.code(),
        }
    }
}

pub struct Peer {
    id: String,
    channels: BTreeMap<String, ChannelState>,
}

impl Peer {
    pub fn new(id: &str) -> Self {
        Peer { id: id.to_string(), channels: BTreeMap::new() }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Joins a channel with an empty ledger.
    pub fn join(&mut self, ledger: Ledger) {
        self.channels.insert(ledger.channel().to_string(), ChannelState::new(ledger));
    }

    /// Joins a channel by replaying a stored ledger from scratch, checking
    /// that every block reproduces its stored validity flags.
    pub fn join_replayed(&mut self, ledger: Ledger, membership: &Membership) -> Result<(), ReplayError> {
        let channel = ledger.channel().to_string();
        let state = StateDb::new();
        let mut index = ProvenanceIndex::new();
        let mut failure = None;
        ledger
            .for_each_block(|block| {
                if failure.is_some() {
                    return;
                }
                let number = block.header.number;
                let replayed = txflow::replay_block(&channel, &state, membership, block, |_, env| {
                    index.apply_writes(number, env.write_set())
                });
                match replayed {
                    Ok(flags) if flags == block.validity => {}
                    Ok(_) => failure = Some(ReplayError::Divergence { block: number }),
                    Err(e) => failure = Some(e.into()),
                }
            })
            .map_err(TxError::from)?;
        if let Some(e) = failure {
            return Err(e);
        }
        self.channels.insert(channel, ChannelState { ledger, state, index });
        Ok(())
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelState> {
        self.channels.get(name)
    }

    pub fn channels(&self) -> impl Iterator<Item = (&str, &ChannelState)> {
        self.channels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn height(&self, channel: &str) -> u64 {
        self.channels.get(channel).map_or(0, |c| c.ledger.height())
    }

    pub fn endorse(
        &self,
        membership: &Membership,
        contract: &dyn Contract,
        proposal: &Proposal,
    ) -> Result<(Endorsement, Doc), TxError> {
        let cs = self.channels.get(&proposal.channel).ok_or_else(|| TxError::NotAnEndorser(self.id.clone()))?;
        txflow::endorse(&self.id, &cs.state.read(), membership, contract, proposal)
    }

    pub fn commit(&mut self, membership: &Membership, block: Block) -> Result<CommitOutcome, TxError> {
        let channel = block.channel().map(str::to_string).unwrap_or_default();
        let cs = self.channels.get_mut(&channel).ok_or_else(|| TxError::NotAMember {
            peer: self.id.clone(),
            channel: channel.clone(),
        })?;
        let number = block.header.number;
        let index = &mut cs.index;
        txflow::validate_and_commit_with(&self.id, &mut cs.ledger, &cs.state, membership, block, |_, env| {
            index.apply_writes(number, env.write_set())
        })
    }

    /// Validity flag of transaction `index` in block `number`.
    pub fn flag(&self, channel: &str, number: u64, index: usize) -> Option<Validity> {
        let block = self.channels.get(channel)?.ledger.block(number).ok()??;
        block.validity.get(index).copied()
    }
}
