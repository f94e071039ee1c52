use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::membership::Role;
use crate::network::{IdentitySpec, NetworkConfig};
use crate::txflow::{OrdererConfig, MIN_ENDORSEMENTS};

use super::SimError;

/// Node name of the client that submits on behalf of every identity.
pub const CLIENT_NODE: &str = "client";
/// Node name of the ordering service.
pub const ORDERER_NODE: &str = "orderer";

/// Exact rational probability `num/den`, written as `"n/d"`, `0` or `1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probability {
    num: u64,
    den: u64,
}

impl Probability {
    pub const ZERO: Probability = Probability { num: 0, den: 1 };
    pub const ONE: Probability = Probability { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Probability, SimError> {
        if den == 0 || num > den {
            return Err(SimError::Config(format!("probability {num}/{den} is outside [0, 1]")));
        }
        Ok(Probability { num, den })
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub(crate) fn sample(&self, rng: &mut impl Rng) -> bool {
        match self.num {
            0 => false,
            n if n == self.den => true,
            n => rng.gen_range(0..self.den) < n,
        }
    }
}

impl Default for Probability {
    fn default() -> Self {
        Probability::ZERO
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Probability {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let bad = || SimError::Config(format!("bad probability {s:?}"));
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Probability::new(num, den)
    }
}

impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Int(n) => Probability::new(n, 1),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerSpec {
    pub peer: String,
    pub identity: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    pub ms: u64,
}

/// One-way message latency: `default` unless a directed link overrides it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    #[serde(default)]
    pub default: u64,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

fn default_batch_size() -> usize {
    OrdererConfig::default().batch_size
}

fn default_batch_timeout() -> u64 {
    OrdererConfig::default().batch_timeout_ms
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub peers: Vec<PeerSpec>,
    /// Parties that run no peer, such as farms submitting through a gateway.
    #[serde(default)]
    pub identities: Vec<IdentitySpec>,
    #[serde(default)]
    pub link_latency_ms: Latency,
    #[serde(default)]
    pub drop_probability: Probability,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_batch_size")]
    pub orderer_batch_size: usize,
    #[serde(default = "default_batch_timeout")]
    pub orderer_batch_timeout_ms: u64,
}

impl SimConfig {
    pub fn new(peers: Vec<PeerSpec>) -> Self {
        SimConfig {
            peers,
            identities: Vec::new(),
            link_latency_ms: Latency::default(),
            drop_probability: Probability::ZERO,
            rng_seed: 0,
            orderer_batch_size: default_batch_size(),
            orderer_batch_timeout_ms: default_batch_timeout(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Network bootstrap config for these peers and identities, seeded from
    /// `rng_seed`.
    pub fn network_config(&self) -> Result<NetworkConfig, SimError> {
        let mut peers = BTreeSet::new();
        let mut identities = BTreeSet::new();
        let mut specs = Vec::new();
        for p in &self.peers {
            if [CLIENT_NODE, ORDERER_NODE].contains(&p.peer.as_str()) {
                return Err(SimError::Config(format!("peer id {} is reserved", p.peer)));
            }
            if !peers.insert(p.peer.clone()) {
                return Err(SimError::Config(format!("duplicate peer id {}", p.peer)));
            }
            if !identities.insert(p.identity.clone()) {
                return Err(SimError::Config(format!("identity {} runs two peers", p.identity)));
            }
            let name = p.display_name.clone().unwrap_or_else(|| p.identity.clone());
            specs.push(IdentitySpec::new(&p.identity, &name, p.role).with_peer(&p.peer));
        }
        for spec in &self.identities {
            if spec.peer.is_some() {
                return Err(SimError::Config("extra identities cannot run peers; list them under peers".into()));
            }
            if let Some(id) = &spec.id {
                if !identities.insert(id.clone()) {
                    return Err(SimError::Config(format!("duplicate identity {id}")));
                }
            }
            specs.push(spec.clone());
        }
        let mut config = NetworkConfig::new(specs);
        config.batch_size = self.orderer_batch_size;
        config.batch_timeout_ms = self.orderer_batch_timeout_ms;
        config.endorsers_per_tx = MIN_ENDORSEMENTS;
        config.seed = Some(self.rng_seed);
        Ok(config)
    }

    pub(crate) fn link_table(&self) -> HashMap<(String, String), u64> {
        self.link_latency_ms.links.iter().map(|l| ((l.from.clone(), l.to.clone()), l.ms)).collect()
    }
}
