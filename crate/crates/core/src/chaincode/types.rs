use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::membership::Pseudonym;

pub const ANIMAL_PREFIX: &str = "trace:animal:";
pub const BATCH_PREFIX: &str = "trace:batch:";
pub const EDGE_PREFIX: &str = "trace:edge:";
pub const TOKEN_PREFIX: &str = "trace:token:";
pub const TRANSFER_PREFIX: &str = "trace:transfer:";
pub const OFFER_PREFIX: &str = "trace:offer:";
pub const DEAL_PREFIX: &str = "trace:deal:";

pub fn animal_key(id: &str) -> String {
    format!("{ANIMAL_PREFIX}{id}")
}

pub fn batch_key(id: &str) -> String {
    format!("{BATCH_PREFIX}{id}")
}

/// Edges are keyed by the derived batch first, so a batch's inputs share a
/// prefix.
pub fn edge_key(to: &str, from: &str) -> String {
    format!("{EDGE_PREFIX}{to}:{from}")
}

pub fn token_key(farm: &str, output_id: &str) -> String {
    format!("{TOKEN_PREFIX}{farm}:{output_id}")
}

pub fn token_prefix(farm: &str) -> String {
    format!("{TOKEN_PREFIX}{farm}:")
}

pub fn transfer_key(output_id: &str) -> String {
    format!("{TRANSFER_PREFIX}{output_id}")
}

pub fn offer_key(id: &str) -> String {
    format!("{OFFER_PREFIX}{id}")
}

pub fn deal_key(id: &str) -> String {
    format!("{DEAL_PREFIX}{id}")
}

/// Name of the private channel backing a targeted offer.
pub fn deal_channel(offer_id: &str) -> String {
    format!("deal-{offer_id}")
}

/// Batch, animal and offer ids: `[A-Za-z0-9_-]{1,64}`.
pub fn valid_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Birth,
    Vaccination,
    Medicine,
    Location,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimalEvent {
    pub kind: EventKind,
    pub detail: String,
    /// ISO-8601 calendar date.
    pub at: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Animal {
    pub animal_id: String,
    pub farm_id: String,
    pub born_at: String,
    pub events: Vec<AnimalEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BatchKind {
    RawMilk,
    ProcessedProduct,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Custody {
    pub holder: String,
    /// Milliseconds since the epoch, as supplied by the submitting client.
    pub at: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub kind: BatchKind,
    pub owner: String,
    pub origin_farms: BTreeSet<String>,
    pub source_animals: BTreeSet<String>,
    pub rfid: String,
    pub recalled: bool,
    pub custody_history: Vec<Custody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_kind: Option<String>,
}

impl Batch {
    pub fn custodian(&self) -> &str {
        &self.custody_history.last().expect("custody history is never empty").holder
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProvenanceEdge {
    pub from_batch: String,
    pub to_batch: String,
    pub step_id: String,
}

/// Source by true name, receiver by pseudonym, the minted token and the
/// output product.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source: String,
    pub receiver: Pseudonym,
    pub token: String,
    pub product_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCredit {
    pub token: String,
    pub step_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedgerEntry {
    pub farm_id: String,
    pub balance: u64,
    pub tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Settlement {
    #[default]
    VirtualCurrency,
    BankTransfer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OfferStatus {
    Open,
    Sold,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetedPrice {
    pub buyer: String,
    pub price: i64,
}

/// The public half of an offer, stored on the main channel. Targeted buyers
/// and their prices live only on the deal channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicOffer {
    pub offer_id: String,
    pub seller: String,
    pub product_id: String,
    pub standard_price: i64,
    pub settlement: Settlement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    pub status: OfferStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buyer: Option<String>,
}

/// The confidential half of an offer, stored on its deal channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deal {
    pub offer_id: String,
    pub seller: String,
    pub product_id: String,
    pub standard_price: i64,
    pub targeted: Vec<TargetedPrice>,
    pub settlement: Settlement,
    pub status: OfferStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<TargetedPrice>,
}

/// An offer as seen by its seller.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offer {
    pub offer_id: String,
    pub seller: String,
    pub product_id: String,
    pub standard_price: i64,
    pub targeted: Vec<TargetedPrice>,
    pub channel: Option<String>,
    pub settlement: Settlement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallReport {
    pub origin: String,
    pub affected_batches: BTreeSet<String>,
    pub holders: BTreeMap<String, String>,
    pub generated_at_height: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceBack {
    pub batch_id: String,
    pub origin_farms: BTreeSet<String>,
    pub tree: Vec<ProvenanceEdge>,
    pub animal_events: BTreeMap<String, Vec<AnimalEvent>>,
}
