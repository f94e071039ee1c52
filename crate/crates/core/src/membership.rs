//! Identities, roles, channels and receiver pseudonyms.
//!
//! Signatures are HMAC-SHA256 tags under each identity's secret key; verifying
//! one means looking the signer up in the registry. A channel is a
//! confidentiality scope: only peers whose identity is a member receive its
//! blocks. Every non-consumer identity is enrolled in [`MAIN_CHANNEL`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use hmac::{Hmac, KeyInit, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::hash::hash_parts;

pub const MAIN_CHANNEL: &str = "main";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Farm,
    Processor,
    Transporter,
    Bank,
    Shop,
    Consumer,
    Auditor,
    Orderer,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::Farm,
        Role::Processor,
        Role::Transporter,
        Role::Bank,
        Role::Shop,
        Role::Consumer,
        Role::Auditor,
        Role::Orderer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Farm => "FARM",
            Role::Processor => "PROCESSOR",
            Role::Transporter => "TRANSPORTER",
            Role::Bank => "BANK",
            Role::Shop => "SHOP",
            Role::Consumer => "CONSUMER",
            Role::Auditor => "AUDITOR",
            Role::Orderer => "ORDERER",
        }
    }

    fn id_prefix(&self) -> &'static str {
        match self {
            Role::Farm => "farm",
            Role::Processor => "proc",
            Role::Transporter => "tran",
            Role::Bank => "bank",
            Role::Shop => "shop",
            Role::Consumer => "cons",
            Role::Auditor => "audit",
            Role::Orderer => "orderer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = MembershipError;

    fn from_str(s: &str) -> Result<Role, MembershipError> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| MembershipError::UnknownRole(s.to_string()))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Identity {
    pub id: String,
    /// The participant's true name.
    pub display_name: String,
    pub role: Role,
    pub secret_key: [u8; 32],
    pub channels: BTreeSet<String>,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("id", &self.id)
            .field("display_name", &self.display_name)
            .field("role", &self.role)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Identity {
    pub fn sign(&self, payload: &[u8]) -> [u8; 32] {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.secret_key).expect("any key length");
        mac.update(payload);
        mac.finalize().into_bytes().into()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    pub name: String,
    pub members: BTreeSet<String>,
    pub salt: [u8; 16],
}

/// A 16-hex-character receiver tag, stable per (identity, channel).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pseudonym(pub String);

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Channel {
    pub fn pseudonym_of(&self, identity_id: &str) -> Pseudonym {
        let digest = hash_parts(&[&self.salt, identity_id.as_bytes()]);
        Pseudonym(digest.to_hex()[..16].to_string())
    }

    pub fn is_member(&self, identity_id: &str) -> bool {
        self.members.contains(identity_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MembershipError {
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error("identity id {0} already registered")]
    DuplicateIdentity(String),
    #[error("channel {0} already exists")]
    DuplicateChannel(String),
    #[error("channel member {0} is not registered")]
    UnknownMember(String),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("unknown peer {0}")]
    UnknownPeer(String),
    #[error("peer id {0} already registered")]
    DuplicatePeer(String),
    #[error("unknown role {0}")]
    UnknownRole(String),
    #[error("invalid registration: {0}")]
    Invalid(String),
    #[error("membership file: {0}")]
    Persist(String),
}

impl MembershipError {
    pub fn code(&self) -> &'static str {
        match self {
            MembershipError::UnknownIdentity(_) => "UNKNOWN_IDENTITY",
            MembershipError::DuplicateIdentity(_) => "DUPLICATE_IDENTITY",
            MembershipError::DuplicateChannel(_) => "DUPLICATE_CHANNEL",
            MembershipError::UnknownMember(_) => "UNKNOWN_MEMBER",
            MembershipError::UnknownChannel(_) => "UNKNOWN_CHANNEL",
            MembershipError::UnknownPeer(_) => "UNKNOWN_PEER",
            MembershipError::DuplicatePeer(_) => "DUPLICATE_PEER",
            MembershipError::UnknownRole(_) => "UNKNOWN_ROLE",
            MembershipError::Invalid(_) => "BAD_CONFIG",
            MembershipError::Persist(_) => "IO_ERROR",
        }
    }
}

/// The membership service: registry of identities, channels and the
/// peer-to-identity map.
pub struct Membership {
    identities: BTreeMap<String, Identity>,
    channels: BTreeMap<String, Channel>,
    peers: BTreeMap<String, String>,
    rng: ChaCha20Rng,
}

impl Membership {
    /// Deterministic key, salt and id generation from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self::with_rng(ChaCha20Rng::seed_from_u64(seed))
    }

    pub fn from_entropy() -> Self {
        Self::with_rng(ChaCha20Rng::from_entropy())
    }

    fn with_rng(mut rng: ChaCha20Rng) -> Self {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let main = Channel { name: MAIN_CHANNEL.to_string(), members: BTreeSet::new(), salt };
        Membership {
            identities: BTreeMap::new(),
            channels: BTreeMap::from([(MAIN_CHANNEL.to_string(), main)]),
            peers: BTreeMap::new(),
            rng,
        }
    }

    /// Registers a participant under a freshly generated id.
    pub fn register_identity(&mut self, display_name: &str, role: Role) -> Result<Identity, MembershipError> {
        let id = loop {
            let mut tag = [0u8; 4];
            self.rng.fill_bytes(&mut tag);
            let candidate = format!("{}-{}", role.id_prefix(), hex::encode(tag));
            if !self.identities.contains_key(&candidate) {
                break candidate;
            }
        };
        self.register_identity_with_id(&id, display_name, role)
    }

    /// Registers a participant under a caller-chosen id.
    pub fn register_identity_with_id(
        &mut self,
        id: &str,
        display_name: &str,
        role: Role,
    ) -> Result<Identity, MembershipError> {
        if display_name.trim().is_empty() {
            return Err(MembershipError::Invalid("display_name must be nonempty".into()));
        }
        if id.is_empty() || id.contains(':') || id.contains(char::is_whitespace) {
            return Err(MembershipError::Invalid(format!("bad identity id {id:?}")));
        }
        if self.identities.contains_key(id) {
            return Err(MembershipError::DuplicateIdentity(id.to_string()));
        }
        let mut secret_key = [0u8; 32];
        self.rng.fill_bytes(&mut secret_key);
        let mut identity = Identity {
            id: id.to_string(),
            display_name: display_name.to_string(),
            role,
            secret_key,
            channels: BTreeSet::new(),
        };
        if role != Role::Consumer {
            identity.channels.insert(MAIN_CHANNEL.to_string());
            self.channels
                .get_mut(MAIN_CHANNEL)
                .expect("main channel always exists")
                .members
                .insert(id.to_string());
        }
        self.identities.insert(id.to_string(), identity.clone());
        Ok(identity)
    }

    pub fn identity(&self, id: &str) -> Result<&Identity, MembershipError> {
        self.identities
            .get(id)
            .ok_or_else(|| MembershipError::UnknownIdentity(id.to_string()))
    }

    pub fn identities(&self) -> impl Iterator<Item = &Identity> {
        self.identities.values()
    }

    pub fn sign(&self, identity_id: &str, payload: &[u8]) -> Result<[u8; 32], MembershipError> {
        Ok(self.identity(identity_id)?.sign(payload))
    }

    pub fn verify(&self, identity_id: &str, payload: &[u8], tag: &[u8; 32]) -> Result<bool, MembershipError> {
        let identity = self.identity(identity_id)?;
        let mut mac = Hmac::<Sha256>::new_from_slice(&identity.secret_key).expect("any key length");
        mac.update(payload);
        Ok(mac.verify_slice(tag).is_ok())
    }

    pub fn create_channel(
        &mut self,
        name: &str,
        members: &BTreeSet<String>,
    ) -> Result<&Channel, MembershipError> {
        if name.is_empty() || name.contains(['/', '\\', ':']) || name.starts_with('.') {
            return Err(MembershipError::Invalid(format!("bad channel name {name:?}")));
        }
        if self.channels.contains_key(name) {
            return Err(MembershipError::DuplicateChannel(name.to_string()));
        }
        if members.is_empty() {
            return Err(MembershipError::Invalid("channel needs at least one member".into()));
        }
        if let Some(unknown) = members.iter().find(|m| !self.identities.contains_key(*m)) {
            return Err(MembershipError::UnknownMember(unknown.clone()));
        }
        let mut salt = [0u8; 16];
        self.rng.fill_bytes(&mut salt);
        for m in members {
            self.identities.get_mut(m).unwrap().channels.insert(name.to_string());
        }
        let channel = Channel { name: name.to_string(), members: members.clone(), salt };
        self.channels.insert(name.to_string(), channel);
        Ok(&self.channels[name])
    }

    pub fn channel(&self, name: &str) -> Result<&Channel, MembershipError> {
        self.channels
            .get(name)
            .ok_or_else(|| MembershipError::UnknownChannel(name.to_string()))
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.values()
    }

    pub fn pseudonym(&self, identity_id: &str, channel: &Channel) -> Result<Pseudonym, MembershipError> {
        self.identity(identity_id)?;
        Ok(channel.pseudonym_of(identity_id))
    }

    pub fn authorize(&self, identity_id: &str, channel_name: &str) -> bool {
        self.channels
            .get(channel_name)
            .is_some_and(|c| c.is_member(identity_id))
    }

    /// Binds a peer node to the identity it signs with.
    pub fn register_peer(&mut self, peer_id: &str, identity_id: &str) -> Result<(), MembershipError> {
        self.identity(identity_id)?;
        if peer_id.is_empty() || peer_id.contains(['/', '\\', ':']) || peer_id.starts_with('.') {
            return Err(MembershipError::Invalid(format!("bad peer id {peer_id:?}")));
        }
        if self.peers.contains_key(peer_id) {
            return Err(MembershipError::DuplicatePeer(peer_id.to_string()));
        }
        self.peers.insert(peer_id.to_string(), identity_id.to_string());
        Ok(())
    }

    pub fn peer_identity(&self, peer_id: &str) -> Result<&Identity, MembershipError> {
        let id = self
            .peers
            .get(peer_id)
            .ok_or_else(|| MembershipError::UnknownPeer(peer_id.to_string()))?;
        self.identity(id)
    }

    pub fn peers(&self) -> impl Iterator<Item = (&str, &str)> {
        self.peers.iter().map(|(p, i)| (p.as_str(), i.as_str()))
    }

    /// Peers whose identity is a member of `channel`, in id order.
    pub fn channel_peers(&self, channel: &str) -> Vec<String> {
        self.peers
            .iter()
            .filter(|(_, identity)| self.authorize(identity, channel))
            .map(|(p, _)| p.clone())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), MembershipError> {
        let file = MembershipFile {
            identities: self
                .identities
                .values()
                .map(|i| IdentityRecord {
                    id: i.id.clone(),
                    display_name: i.display_name.clone(),
                    role: i.role,
                    secret_key: hex::encode(i.secret_key),
                })
                .collect(),
            channels: self
                .channels
                .values()
                .map(|c| ChannelRecord {
                    name: c.name.clone(),
                    members: c.members.iter().cloned().collect(),
                    salt: hex::encode(c.salt),
                })
                .collect(),
            peers: self.peers.clone(),
        };
        let json = serde_json::to_vec_pretty(&file).map_err(|e| MembershipError::Persist(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, json).map_err(|e| MembershipError::Persist(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| MembershipError::Persist(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Membership, MembershipError> {
        let bytes = std::fs::read(path).map_err(|e| MembershipError::Persist(e.to_string()))?;
        let file: MembershipFile =
            serde_json::from_slice(&bytes).map_err(|e| MembershipError::Persist(e.to_string()))?;
        let mut m = Membership::from_entropy();
        m.channels.clear();
        for rec in file.identities {
            let secret_key = decode_fixed::<32>(&rec.secret_key)?;
            m.identities.insert(
                rec.id.clone(),
                Identity {
                    id: rec.id,
                    display_name: rec.display_name,
                    role: rec.role,
                    secret_key,
                    channels: BTreeSet::new(),
                },
            );
        }
        for rec in file.channels {
            let salt = decode_fixed::<16>(&rec.salt)?;
            for member in &rec.members {
                m.identities
                    .get_mut(member)
                    .ok_or_else(|| MembershipError::UnknownMember(member.clone()))?
                    .channels
                    .insert(rec.name.clone());
            }
            m.channels.insert(
                rec.name.clone(),
                Channel { name: rec.name, members: rec.members.into_iter().collect(), salt },
            );
        }
        if !m.channels.contains_key(MAIN_CHANNEL) {
            return Err(MembershipError::Persist("missing main channel".into()));
        }
        for (peer, identity) in file.peers {
            m.register_peer(&peer, &identity)?;
        }
        Ok(m)
    }
}

fn decode_fixed<const N: usize>(s: &str) -> Result<[u8; N], MembershipError> {
    hex::decode(s)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| MembershipError::Persist(format!("bad hex field of {N} bytes")))
}

#[derive(Serialize, Deserialize)]
struct MembershipFile {
    identities: Vec<IdentityRecord>,
    channels: Vec<ChannelRecord>,
    peers: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct IdentityRecord {
    id: String,
    display_name: String,
    role: Role,
    secret_key: String,
}

#[derive(Serialize, Deserialize)]
struct ChannelRecord {
    name: String,
    members: Vec<String>,
    salt: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn farm_joins_main_consumer_does_not() {
        let mut m = Membership::with_seed(7);
        let farm = m.register_identity("Ferma Alba", Role::Farm).unwrap();
        assert_eq!(farm.role, Role::Farm);
        assert!(farm.channels.contains(MAIN_CHANNEL));
        assert!(m.authorize(&farm.id, MAIN_CHANNEL));

        let ana = m.register_identity("Ana", Role::Consumer).unwrap();
        assert!(ana.channels.is_empty());
        assert!(!m.authorize(&ana.id, MAIN_CHANNEL));
    }

    #[test]
    fn same_name_gets_distinct_ids() {
        let mut m = Membership::with_seed(7);
        let a = m.register_identity("Ferma Alba", Role::Farm).unwrap();
        let b = m.register_identity("Ferma Alba", Role::Farm).unwrap();
        assert_ne!(a.id, b.id);
        assert!(m.register_identity("  ", Role::Farm).is_err());
    }

    #[test]
    fn sign_and_verify() {
        let mut m = Membership::with_seed(1);
        let a = m.register_identity("A", Role::Processor).unwrap();
        let b = m.register_identity("B", Role::Processor).unwrap();
        let tag = m.sign(&a.id, b"payload").unwrap();
        assert!(m.verify(&a.id, b"payload", &tag).unwrap());
        assert!(!m.verify(&a.id, b"paylobd", &tag).unwrap());
        assert!(!m.verify(&b.id, b"payload", &tag).unwrap());
        assert_eq!(m.verify("ghost", b"payload", &tag).unwrap_err().code(), "UNKNOWN_IDENTITY");
    }

    #[test]
    fn channel_creation_rules() {
        let mut m = Membership::with_seed(3);
        let seller = m.register_identity("S", Role::Processor).unwrap().id;
        let buyer = m.register_identity("B", Role::Shop).unwrap().id;
        let orderer = m.register_identity("O", Role::Orderer).unwrap().id;
        let members: BTreeSet<_> = [seller.clone(), buyer, orderer].into();
        assert_eq!(m.create_channel("deal-42", &members).unwrap().members.len(), 3);
        assert_eq!(m.create_channel("deal-42", &members).unwrap_err().code(), "DUPLICATE_CHANNEL");
        let bad: BTreeSet<_> = [seller, "nobody".to_string()].into();
        assert_eq!(m.create_channel("deal-43", &bad).unwrap_err().code(), "UNKNOWN_MEMBER");
        assert!(m.authorize(&members.iter().next().unwrap().clone(), "deal-42"));
        assert!(!m.authorize("nobody", "deal-42"));
        assert!(!m.authorize(members.iter().next().unwrap(), "deal-404"));
    }

    #[test]
    fn pseudonyms_match_digest_oracle() {
        // Frozen from Python: sha256(salt || id).hexdigest()[:16]
        let c1 = Channel { name: "c1".into(), members: BTreeSet::new(), salt: std::array::from_fn(|i| i as u8) };
        let c2 = Channel {
            name: "c2".into(),
            members: BTreeSet::new(),
            salt: std::array::from_fn(|i| (i + 16) as u8),
        };
        assert_eq!(c1.pseudonym_of("farm-a").0, "454455d132b4b209");
        assert_eq!(c2.pseudonym_of("farm-a").0, "95d14d9cb6112626");
        assert_eq!(c1.pseudonym_of("farm-b").0, "ddefc60f64872792");
        assert_eq!(c1.pseudonym_of("farm-a"), c1.pseudonym_of("farm-a"));
    }

    #[test]
    fn pseudonyms_survive_reload_and_keys_stay_out_of_view() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("membership.json");
        let mut m = Membership::with_seed(11);
        let shop = m.register_identity("Magazin", Role::Shop).unwrap();
        m.register_peer("peer-shop", &shop.id).unwrap();
        let before = m.pseudonym(&shop.id, m.channel(MAIN_CHANNEL).unwrap()).unwrap();
        m.save(&path).unwrap();
        let loaded = Membership::load(&path).unwrap();
        let after = loaded.pseudonym(&shop.id, loaded.channel(MAIN_CHANNEL).unwrap()).unwrap();
        assert_eq!(before, after);
        assert_eq!(loaded.peer_identity("peer-shop").unwrap().id, shop.id);
        assert!(loaded.identity(&shop.id).unwrap().channels.contains(MAIN_CHANNEL));
        assert!(!format!("{:?}", shop).contains(&hex::encode(shop.secret_key)));
    }

    #[test]
    fn peers_follow_channel_membership() {
        let mut m = Membership::with_seed(5);
        let a = m.register_identity("A", Role::Processor).unwrap().id;
        let b = m.register_identity("B", Role::Bank).unwrap().id;
        m.register_peer("p-a", &a).unwrap();
        m.register_peer("p-b", &b).unwrap();
        m.create_channel("deal", &[a.clone()].into()).unwrap();
        assert_eq!(m.channel_peers(MAIN_CHANNEL), ["p-a", "p-b"]);
        assert_eq!(m.channel_peers("deal"), ["p-a"]);
        assert_eq!(m.register_peer("p-a", &b).unwrap_err().code(), "DUPLICATE_PEER");
    }
}
