//! A key-value contract and a three-peer membership for exercising the
//! transaction flow without the traceability contract.

use crate::codec::Doc;
use crate::ledger::{Ledger, Validity};
use crate::membership::{Membership, Role, MAIN_CHANNEL};
use crate::state::StateDb;

use super::*;

pub(crate) struct KvContract;

impl Contract for KvContract {
    fn supports(&self, op: &str) -> bool {
        matches!(op, "put" | "get" | "incr" | "move")
    }

    fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &Doc) -> Result<Doc, ContractError> {
        let key = |name: &str| {
            args.get(name)
                .and_then(Doc::as_str)
                .map(|k| format!("kv:{k}"))
                .ok_or_else(|| ContractError::new("BAD_ARGS", format!("missing {name}")))
        };
        let int_at = |ctx: &mut TxContext<'_>, k: &str| ctx.get(k).and_then(|d| d.get("n").and_then(Doc::as_int)).unwrap_or(0);
        match op {
            "put" => {
                let value = args.get("value").cloned().unwrap_or(Doc::Null);
                ctx.put(key("key")?, Doc::map().with("v", value));
                Ok(Doc::Null)
            }
            "get" => Ok(ctx.get(&key("key")?).unwrap_or(Doc::Null)),
            "incr" => {
                let k = key("key")?;
                let n = int_at(ctx, &k) + 1;
                ctx.put(k, Doc::map().with("n", n));
                Ok(Doc::Int(n))
            }
            "move" => {
                let (from, to) = (key("from")?, key("to")?);
                let amount = args.get("amount").and_then(Doc::as_int).unwrap_or(1);
                let balance = int_at(ctx, &from);
                if balance < amount {
                    return Err(ContractError::new("INSUFFICIENT_FUNDS", balance));
                }
                let credit = int_at(ctx, &to);
                ctx.put(from, Doc::map().with("n", balance - amount));
                ctx.put(to, Doc::map().with("n", credit + amount));
                Ok(Doc::Null)
            }
            _ => Err(ContractError::new("UNKNOWN_OP", op)),
        }
    }
}

pub(crate) struct Net {
    pub membership: Membership,
    pub peers: Vec<(String, Ledger, StateDb)>,
    pub orderer: Orderer,
    pub nonce: u64,
}

impl Net {
    /// Peers `p1..p3` on the main channel, client `client`, outsider `outsider`
    /// (a consumer, hence not on main).
    pub fn new() -> Net {
        let mut membership = Membership::with_seed(7);
        let mut peers = Vec::new();
        for i in 1..=3 {
            let id = format!("proc-{i}");
            membership.register_identity_with_id(&id, &format!("Processor {i}"), Role::Processor).unwrap();
            membership.register_peer(&format!("p{i}"), &id).unwrap();
        }
        membership.register_identity_with_id("client", "Client", Role::Farm).unwrap();
        membership.register_identity_with_id("outsider", "Outsider", Role::Consumer).unwrap();
        membership.register_identity_with_id("orderer", "Orderer", Role::Orderer).unwrap();
        let mut orderer = Orderer::new("orderer", OrdererConfig::default());
        let genesis = orderer.create_channel(MAIN_CHANNEL, Doc::map(), 0);
        for i in 1..=3 {
            let name = format!("p{i}");
            let mut ledger = Ledger::in_memory(&name, MAIN_CHANNEL);
            let state = StateDb::new();
            validate_and_commit(&name, &mut ledger, &state, &membership, genesis.clone()).unwrap();
            peers.push((name, ledger, state));
        }
        Net { membership, peers, orderer, nonce: 0 }
    }

    pub fn proposal(&mut self, creator: &str, op: &str, args: Doc) -> Proposal {
        self.nonce += 1;
        let mut nonce = [0u8; 16];
        nonce[..8].copy_from_slice(&self.nonce.to_be_bytes());
        Proposal {
            channel: MAIN_CHANNEL.into(),
            contract_op: op.into(),
            args,
            creator: creator.into(),
            nonce,
            endorser_peers: vec!["p1".into(), "p2".into()],
        }
    }

    pub fn endorse_on(&self, peer: usize, proposal: &Proposal) -> Result<Endorsement, TxError> {
        let (name, _, state) = &self.peers[peer];
        endorse(name, &state.read(), &self.membership, &KvContract, proposal).map(|(e, _)| e)
    }

    pub fn envelope(&self, proposal: Proposal) -> Envelope {
        let endorsements = vec![self.endorse_on(0, &proposal).unwrap(), self.endorse_on(1, &proposal).unwrap()];
        assemble(proposal, endorsements, &self.membership).unwrap()
    }

    /// Submits, flushes one block and commits it on every peer.
    pub fn commit(&mut self, envelopes: Vec<Envelope>, now: u64) -> Vec<Vec<Validity>> {
        for env in envelopes {
            self.orderer.submit(env, now).unwrap();
        }
        let block = self.orderer.flush(MAIN_CHANNEL, now).unwrap();
        self.peers
            .iter_mut()
            .map(|(name, ledger, state)| {
                validate_and_commit(name, ledger, state, &self.membership, block.clone()).unwrap().flags
            })
            .collect()
    }
}
