use std::fmt;

use crate::codec::{canonical_encode, Canonical, CodecError, Doc, Reader};
use crate::hash::{hash_payload, Hash};
use crate::state::{Version, WriteItem};

/// Operation name of the configuration envelope carried by genesis blocks.
pub const CONFIG_OP: &str = "__config";

/// Transaction id: digest of the canonical proposal encoding.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TxId(pub Hash);

impl fmt::Debug for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxId({})", &self.0.to_hex()[..16])
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex())
    }
}

impl serde::Serialize for TxId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_hex())
    }
}

impl Canonical for TxId {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TxId(Hash::decode_from(reader)?))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub channel: String,
    pub contract_op: String,
    pub args: Doc,
    pub creator: String,
    pub nonce: [u8; 16],
    pub endorser_peers: Vec<String>,
}

impl Proposal {
    pub fn tx_id(&self) -> TxId {
        TxId(hash_payload(&canonical_encode(self)))
    }

    pub fn is_config(&self) -> bool {
        self.contract_op == CONFIG_OP
    }
}

impl Canonical for Proposal {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.channel.encode_to(out);
        self.contract_op.encode_to(out);
        self.args.encode_to(out);
        self.creator.encode_to(out);
        self.nonce.encode_to(out);
        self.endorser_peers.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Proposal {
            channel: String::decode_from(reader)?,
            contract_op: String::decode_from(reader)?,
            args: Doc::decode_from(reader)?,
            creator: String::decode_from(reader)?,
            nonce: reader.array()?,
            endorser_peers: Vec::decode_from(reader)?,
        })
    }
}

/// A key read during simulation and the version observed; `None` when the
/// key was absent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadItem {
    pub key: String,
    pub version: Option<Version>,
}

impl Canonical for ReadItem {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.key.encode_to(out);
        self.version.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ReadItem {
            key: String::decode_from(reader)?,
            version: Option::decode_from(reader)?,
        })
    }
}

pub fn result_hash(read_set: &[ReadItem], write_set: &[WriteItem]) -> Hash {
    let mut buf = Vec::new();
    (read_set.len() as u32).encode_to(&mut buf);
    for r in read_set {
        r.encode_to(&mut buf);
    }
    (write_set.len() as u32).encode_to(&mut buf);
    for w in write_set {
        w.encode_to(&mut buf);
    }
    hash_payload(&buf)
}

/// Bytes an endorser signs: `tx_id || result_hash`.
pub fn endorsement_payload(tx_id: &TxId, result_hash: &Hash) -> [u8; 64] {
    let mut out = [0u8; 64];
    out[..32].copy_from_slice(&tx_id.0 .0);
    out[32..].copy_from_slice(&result_hash.0);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Endorsement {
    pub peer: String,
    pub read_set: Vec<ReadItem>,
    pub write_set: Vec<WriteItem>,
    pub result_hash: Hash,
    pub signature: [u8; 32],
}

impl Endorsement {
    pub fn recomputed_hash(&self) -> Hash {
        result_hash(&self.read_set, &self.write_set)
    }
}

impl Canonical for Endorsement {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.peer.encode_to(out);
        self.read_set.encode_to(out);
        self.write_set.encode_to(out);
        self.result_hash.encode_to(out);
        self.signature.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Endorsement {
            peer: String::decode_from(reader)?,
            read_set: Vec::decode_from(reader)?,
            write_set: Vec::decode_from(reader)?,
            result_hash: Hash::decode_from(reader)?,
            signature: reader.array()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub tx_id: TxId,
    pub proposal: Proposal,
    pub endorsements: Vec<Endorsement>,
}

impl Envelope {
    /// The configuration envelope a channel's genesis block carries.
    pub fn config(channel: &str, orderer: &str, config: Doc) -> Envelope {
        let proposal = Proposal {
            channel: channel.to_string(),
            contract_op: CONFIG_OP.to_string(),
            args: config,
            creator: orderer.to_string(),
            nonce: [0u8; 16],
            endorser_peers: Vec::new(),
        };
        Envelope { tx_id: proposal.tx_id(), proposal, endorsements: Vec::new() }
    }

    /// Write set shared by all endorsements (that of the first one).
    pub fn write_set(&self) -> &[WriteItem] {
        self.endorsements.first().map_or(&[], |e| &e.write_set)
    }

    pub fn read_set(&self) -> &[ReadItem] {
        self.endorsements.first().map_or(&[], |e| &e.read_set)
    }
}

impl Canonical for Envelope {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.tx_id.encode_to(out);
        self.proposal.encode_to(out);
        self.endorsements.encode_to(out);
    }
    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Envelope {
            tx_id: TxId::decode_from(reader)?,
            proposal: Proposal::decode_from(reader)?,
            endorsements: Vec::decode_from(reader)?,
        })
    }
}
