use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::codec::Doc;
use crate::membership::{Identity, Role, MAIN_CHANNEL};
use crate::txflow::{Contract, ContractError, TxContext};

use super::types::*;

/// Operations executed on the main channel.
pub const MAIN_OPS: [&str; 9] = [
    "register_animal",
    "record_animal_event",
    "register_batch",
    "process_batch",
    "transfer_custody",
    "publish_offer",
    "accept_offer",
    "settle_offer",
    "mark_recalled",
];

/// Operations executed on a private deal channel.
pub const DEAL_OPS: [&str; 2] = ["publish_deal", "accept_deal"];

const RECIPIENT_ROLES: [Role; 3] = [Role::Processor, Role::Transporter, Role::Shop];

type OpResult = Result<Doc, ContractError>;

fn err(code: &str, detail: impl std::fmt::Display) -> ContractError {
    ContractError::new(code, detail)
}

fn bad_args(detail: impl std::fmt::Display) -> ContractError {
    err("BAD_ARGS", detail)
}

struct Args<'a>(&'a Doc);

impl Args<'_> {
    fn str(&self, name: &str) -> Result<&str, ContractError> {
        self.0.get(name).and_then(Doc::as_str).ok_or_else(|| bad_args(format!("{name} must be a string")))
    }

    fn id(&self, name: &str) -> Result<&str, ContractError> {
        let id = self.str(name)?;
        if valid_id(id) {
            Ok(id)
        } else {
            Err(bad_args(format!("{name} {id:?} must match [A-Za-z0-9_-]{{1,64}}")))
        }
    }

    fn int(&self, name: &str) -> Result<i64, ContractError> {
        self.0.get(name).and_then(Doc::as_int).ok_or_else(|| bad_args(format!("{name} must be an integer")))
    }

    fn date(&self, name: &str) -> Result<NaiveDate, ContractError> {
        let s = self.str(name)?;
        NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| bad_args(format!("{name} {s:?} is not an ISO date")))
    }

    fn now(&self) -> Result<i64, ContractError> {
        self.int("now")
    }

    fn id_set(&self, name: &str) -> Result<BTreeSet<String>, ContractError> {
        let items = self.0.get(name).and_then(Doc::as_list).ok_or_else(|| bad_args(format!("{name} must be a list")))?;
        let mut out = BTreeSet::new();
        for item in items {
            match item.as_str() {
                Some(id) if valid_id(id) => {
                    out.insert(id.to_string());
                }
                _ => return Err(bad_args(format!("{name} holds a bad id {item:?}"))),
            }
        }
        if out.is_empty() {
            return Err(bad_args(format!("{name} must be nonempty")));
        }
        Ok(out)
    }

    fn typed<T: DeserializeOwned>(&self, name: &str) -> Result<T, ContractError> {
        let doc = self.0.get(name).ok_or_else(|| bad_args(format!("missing {name}")))?;
        doc.to_serde().map_err(|e| bad_args(format!("{name}: {e}")))
    }

    fn optional<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, ContractError> {
        match self.0.get(name) {
            None | Some(Doc::Null) => Ok(None),
            Some(_) => self.typed(name).map(Some),
        }
    }
}

fn to_doc<T: Serialize>(value: &T) -> Doc {
    Doc::from_serde(value).expect("contract records hold no floats")
}

fn load<T: DeserializeOwned>(ctx: &mut TxContext<'_>, key: &str) -> Option<T> {
    ctx.get(key).map(|doc| doc.to_serde().expect("stored records decode"))
}

fn require_role(identity: &Identity, role: Role) -> Result<(), ContractError> {
    if identity.role == role {
        Ok(())
    } else {
        Err(err("WRONG_ROLE", format!("{} has role {}, needs {}", identity.id, identity.role, role)))
    }
}

fn recipient(ctx: &TxContext<'_>, id: &str) -> Result<Identity, ContractError> {
    let identity = ctx
        .membership()
        .identity(id)
        .map_err(|_| err("UNKNOWN_IDENTITY", id))?;
    if !RECIPIENT_ROLES.contains(&identity.role) {
        return Err(err("BAD_RECIPIENT", format!("{id} has role {}", identity.role)));
    }
    Ok(identity.clone())
}

fn load_batch(ctx: &mut TxContext<'_>, id: &str) -> Result<Batch, ContractError> {
    load(ctx, &batch_key(id)).ok_or_else(|| err("UNKNOWN_BATCH", id))
}

/// Loads a batch the caller must currently hold and that is not recalled.
fn movable_batch(ctx: &mut TxContext<'_>, id: &str, holder: &str) -> Result<Batch, ContractError> {
    let batch = load_batch(ctx, id)?;
    if batch.custodian() != holder {
        return Err(err("NOT_CUSTODIAN", format!("{id} is held by {}", batch.custodian())));
    }
    if batch.recalled {
        return Err(err("BATCH_RECALLED", id));
    }
    Ok(batch)
}

/// The dairy traceability contract.
#[derive(Clone, Copy, Debug, Default)]
pub struct TraceContract;

impl Contract for TraceContract {
    fn supports(&self, op: &str) -> bool {
        MAIN_OPS.contains(&op) || DEAL_OPS.contains(&op)
    }

    fn invoke(&self, ctx: &mut TxContext<'_>, op: &str, args: &Doc) -> OpResult {
        let on_main = ctx.channel().name == MAIN_CHANNEL;
        if MAIN_OPS.contains(&op) != on_main {
            return Err(err("WRONG_CHANNEL", format!("{op} cannot run on {}", ctx.channel().name)));
        }
        let args = Args(args);
        match op {
            "register_animal" => register_animal(ctx, &args),
            "record_animal_event" => record_animal_event(ctx, &args),
            "register_batch" => register_batch(ctx, &args),
            "process_batch" => process_batch(ctx, &args),
            "transfer_custody" => transfer_custody(ctx, &args),
            "publish_offer" => publish_offer(ctx, &args),
            "accept_offer" => accept_offer(ctx, &args),
            "settle_offer" => settle_offer(ctx, &args),
            "mark_recalled" => mark_recalled(ctx, &args),
            "publish_deal" => publish_deal(ctx, &args),
            "accept_deal" => accept_deal(ctx, &args),
            _ => Err(err("UNKNOWN_OP", op)),
        }
    }
}

fn register_animal(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    require_role(ctx.creator(), Role::Farm)?;
    let animal_id = args.id("animal_id")?;
    let born_at = args.date("born_at")?.to_string();
    let key = animal_key(animal_id);
    if ctx.exists(&key) {
        return Err(err("DUPLICATE_ANIMAL", animal_id));
    }
    let animal = Animal {
        animal_id: animal_id.to_string(),
        farm_id: ctx.creator().id.clone(),
        born_at: born_at.clone(),
        events: vec![AnimalEvent { kind: EventKind::Birth, detail: String::new(), at: born_at }],
    };
    let doc = to_doc(&animal);
    ctx.put(key, doc.clone());
    Ok(doc)
}

fn record_animal_event(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    let animal_id = args.id("animal_id")?;
    let kind: EventKind = args.typed("kind")?;
    let detail = args.str("detail")?.to_string();
    let at = args.date("at")?;
    let key = animal_key(animal_id);
    let mut animal: Animal = load(ctx, &key).ok_or_else(|| err("UNKNOWN_ANIMAL", animal_id))?;
    if animal.farm_id != ctx.creator().id {
        return Err(err("NOT_OWNER", format!("{animal_id} belongs to {}", animal.farm_id)));
    }
    if kind == EventKind::Birth {
        return Err(err("BIRTH_IMMUTABLE", animal_id));
    }
    let last = animal.events.last().map(|e| e.at.clone()).unwrap_or_else(|| animal.born_at.clone());
    let at = at.to_string();
    if at < last {
        return Err(err("OUT_OF_ORDER", format!("{at} precedes {last}")));
    }
    animal.events.push(AnimalEvent { kind, detail, at });
    let doc = to_doc(&animal);
    ctx.put(key, doc.clone());
    Ok(doc)
}

fn register_batch(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    require_role(ctx.creator(), Role::Farm)?;
    let batch_id = args.id("batch_id")?;
    let source_animals = args.id_set("source_animals")?;
    let rfid = args.str("rfid")?.to_string();
    let now = args.now()?;
    let farm = ctx.creator().id.clone();
    let key = batch_key(batch_id);
    if ctx.exists(&key) {
        return Err(err("DUPLICATE_BATCH", batch_id));
    }
    for animal_id in &source_animals {
        let animal: Animal = load(ctx, &animal_key(animal_id)).ok_or_else(|| err("UNKNOWN_ANIMAL", animal_id))?;
        if animal.farm_id != farm {
            return Err(err("NOT_OWNER", format!("{animal_id} belongs to {}", animal.farm_id)));
        }
    }
    let batch = Batch {
        batch_id: batch_id.to_string(),
        kind: BatchKind::RawMilk,
        owner: farm.clone(),
        origin_farms: BTreeSet::from([farm.clone()]),
        source_animals,
        rfid,
        recalled: false,
        custody_history: vec![Custody { holder: farm, at: now }],
        process_kind: None,
    };
    let doc = to_doc(&batch);
    ctx.put(key, doc.clone());
    Ok(doc)
}

fn process_batch(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    require_role(ctx.creator(), Role::Processor)?;
    let inputs = args.id_set("inputs")?;
    let output_id = args.id("output_id")?.to_string();
    let process_kind = args.str("process_kind")?.to_string();
    let now = args.now()?;
    let processor = ctx.creator().clone();
    let receiver = match args.optional::<String>("receiver")? {
        Some(id) if id != processor.id => recipient(ctx, &id)?,
        _ => processor.clone(),
    };
    let out_key = batch_key(&output_id);
    if inputs.contains(&output_id) || ctx.exists(&out_key) {
        return Err(err("DUPLICATE_BATCH", &output_id));
    }
    let mut origin_farms = BTreeSet::new();
    for input in &inputs {
        let batch = load_batch(ctx, input)?;
        if batch.custodian() != processor.id {
            return Err(err("NOT_CUSTODIAN", format!("{input} is held by {}", batch.custodian())));
        }
        if batch.recalled {
            return Err(err("INPUT_RECALLED", input));
        }
        origin_farms.extend(batch.origin_farms);
    }

    let step_id = ctx.tx_id().to_string();
    let token = format!("tok-{output_id}");
    let mut custody_history = vec![Custody { holder: processor.id.clone(), at: now }];
    if receiver.id != processor.id {
        custody_history.push(Custody { holder: receiver.id.clone(), at: now });
    }
    let output = Batch {
        batch_id: output_id.clone(),
        kind: BatchKind::ProcessedProduct,
        owner: processor.id.clone(),
        origin_farms: origin_farms.clone(),
        source_animals: BTreeSet::new(),
        rfid: String::new(),
        recalled: false,
        custody_history,
        process_kind: Some(process_kind),
    };
    ctx.put(out_key, to_doc(&output));
    for input in &inputs {
        let edge = ProvenanceEdge { from_batch: input.clone(), to_batch: output_id.clone(), step_id: step_id.clone() };
        ctx.put(edge_key(&output_id, input), to_doc(&edge));
    }
    for farm in &origin_farms {
        let credit = TokenCredit { token: token.clone(), step_id: step_id.clone() };
        ctx.put(token_key(farm, &output_id), to_doc(&credit));
    }
    let receiver_pseudonym = ctx.channel().pseudonym_of(&receiver.id);
    let record = TransferRecord {
        source: processor.display_name.clone(),
        receiver: receiver_pseudonym,
        token,
        product_id: output_id.clone(),
    };
    let doc = to_doc(&record);
    ctx.put(transfer_key(&output_id), doc.clone());
    Ok(doc)
}

fn transfer_custody(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    let batch_id = args.id("batch_id")?;
    let to = args.str("to")?;
    let now = args.now()?;
    let holder = ctx.creator().id.clone();
    let mut batch = movable_batch(ctx, batch_id, &holder)?;
    let to = recipient(ctx, to)?;
    batch.custody_history.push(Custody { holder: to.id, at: now });
    let doc = to_doc(&batch);
    ctx.put(batch_key(batch_id), doc.clone());
    Ok(doc)
}

fn check_price(price: i64) -> Result<(), ContractError> {
    if price < 0 {
        Err(err("BAD_PRICE", price))
    } else {
        Ok(())
    }
}

fn publish_offer(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    let offer_id = args.id("offer_id")?;
    let product_id = args.id("product_id")?;
    let standard_price = args.int("standard_price")?;
    let settlement: Settlement = args.optional("settlement")?.unwrap_or_default();
    let channel: Option<String> = args.optional("channel")?;
    check_price(standard_price)?;
    if channel.as_ref().is_some_and(|c| *c != deal_channel(offer_id)) {
        return Err(bad_args(format!("deal channel for {offer_id} must be {}", deal_channel(offer_id))));
    }
    let seller = ctx.creator().id.clone();
    movable_batch(ctx, product_id, &seller)?;
    let key = offer_key(offer_id);
    if ctx.exists(&key) {
        return Err(err("DUPLICATE_OFFER", offer_id));
    }
    let offer = PublicOffer {
        offer_id: offer_id.to_string(),
        seller,
        product_id: product_id.to_string(),
        standard_price,
        settlement,
        channel,
        status: OfferStatus::Open,
        buyer: None,
    };
    let doc = to_doc(&offer);
    ctx.put(key, doc.clone());
    Ok(doc)
}

/// Marks an open offer sold to `buyer` and moves the product into the
/// buyer's custody.
fn close_offer(ctx: &mut TxContext<'_>, offer_id: &str, buyer: &str, now: i64) -> Result<PublicOffer, ContractError> {
    let key = offer_key(offer_id);
    let mut offer: PublicOffer = load(ctx, &key).ok_or_else(|| err("UNKNOWN_OFFER", offer_id))?;
    if offer.status == OfferStatus::Sold {
        return Err(err("ALREADY_SOLD", offer_id));
    }
    if buyer == offer.seller {
        return Err(err("BAD_RECIPIENT", "seller cannot buy its own offer"));
    }
    let buyer = recipient(ctx, buyer)?;
    let mut batch = movable_batch(ctx, &offer.product_id, &offer.seller)?;
    batch.custody_history.push(Custody { holder: buyer.id.clone(), at: now });
    ctx.put(batch_key(&offer.product_id), to_doc(&batch));
    offer.status = OfferStatus::Sold;
    offer.buyer = Some(buyer.id);
    ctx.put(key, to_doc(&offer));
    Ok(offer)
}

/// Purchase at the standard price by a buyer outside the deal.
fn accept_offer(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    let offer_id = args.id("offer_id")?;
    let now = args.now()?;
    let buyer = ctx.creator().id.clone();
    let offer = close_offer(ctx, offer_id, &buyer, now)?;
    Ok(Doc::map().with("price", offer.standard_price).with("channel", MAIN_CHANNEL))
}

/// The seller's side of a targeted purchase agreed on the deal channel.
fn settle_offer(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    let offer_id = args.id("offer_id")?;
    let buyer = args.str("buyer")?.to_string();
    let now = args.now()?;
    let offer: PublicOffer = load(ctx, &offer_key(offer_id)).ok_or_else(|| err("UNKNOWN_OFFER", offer_id))?;
    if offer.seller != ctx.creator().id {
        return Err(err("NOT_OWNER", format!("{offer_id} is sold by {}", offer.seller)));
    }
    if offer.channel.is_none() {
        return Err(bad_args(format!("{offer_id} has no deal channel")));
    }
    close_offer(ctx, offer_id, &buyer, now)?;
    Ok(Doc::Null)
}

fn mark_recalled(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    require_role(ctx.creator(), Role::Auditor)?;
    let report: RecallReport = args.typed("report")?;
    let batch_ids = args.id_set("batch_ids")?;
    let origin_is_farm = ctx.membership().identity(&report.origin).is_ok_and(|i| i.role == Role::Farm);
    for id in &batch_ids {
        if !report.affected_batches.contains(id) {
            return Err(err("NOT_IN_REPORT", id));
        }
        let mut batch = load_batch(ctx, id)?;
        let reachable = if origin_is_farm {
            batch.origin_farms.contains(&report.origin)
        } else {
            descends_from(ctx, id, &report.origin)
        };
        if !reachable {
            return Err(err("NOT_IN_REPORT", format!("{id} is not downstream of {}", report.origin)));
        }
        batch.recalled = true;
        ctx.put(batch_key(id), to_doc(&batch));
    }
    Ok(Doc::from(batch_ids.into_iter().collect::<Vec<_>>()))
}

/// Whether `ancestor` is `batch` or lies on one of its backward paths,
/// walking committed edge records.
fn descends_from(ctx: &mut TxContext<'_>, batch: &str, ancestor: &str) -> bool {
    let mut stack = vec![batch.to_string()];
    let mut seen = BTreeSet::new();
    while let Some(node) = stack.pop() {
        if node == ancestor {
            return true;
        }
        if !seen.insert(node.clone()) {
            continue;
        }
        for (_, doc) in ctx.scan_prefix(&format!("{EDGE_PREFIX}{node}:")) {
            if let Some(from) = doc.get("from_batch").and_then(Doc::as_str) {
                stack.push(from.to_string());
            }
        }
    }
    false
}

fn publish_deal(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    let offer_id = args.id("offer_id")?;
    let product_id = args.id("product_id")?;
    let standard_price = args.int("standard_price")?;
    let targeted: Vec<TargetedPrice> = args.typed("targeted")?;
    let settlement: Settlement = args.optional("settlement")?.unwrap_or_default();
    check_price(standard_price)?;
    if ctx.channel().name != deal_channel(offer_id) {
        return Err(err("WRONG_CHANNEL", format!("deal {offer_id} belongs on {}", deal_channel(offer_id))));
    }
    if targeted.is_empty() {
        return Err(bad_args("targeted must be nonempty"));
    }
    let mut buyers = BTreeSet::new();
    for t in &targeted {
        check_price(t.price)?;
        recipient(ctx, &t.buyer)?;
        if !ctx.channel().is_member(&t.buyer) {
            return Err(err("BAD_RECIPIENT", format!("{} is not on {}", t.buyer, ctx.channel().name)));
        }
        if !buyers.insert(t.buyer.clone()) {
            return Err(bad_args(format!("{} targeted twice", t.buyer)));
        }
    }
    let key = deal_key(offer_id);
    if ctx.exists(&key) {
        return Err(err("DUPLICATE_OFFER", offer_id));
    }
    let deal = Deal {
        offer_id: offer_id.to_string(),
        seller: ctx.creator().id.clone(),
        product_id: product_id.to_string(),
        standard_price,
        targeted,
        settlement,
        status: OfferStatus::Open,
        accepted: None,
    };
    let doc = to_doc(&deal);
    ctx.put(key, doc.clone());
    Ok(doc)
}

fn accept_deal(ctx: &mut TxContext<'_>, args: &Args<'_>) -> OpResult {
    let offer_id = args.id("offer_id")?;
    let key = deal_key(offer_id);
    let mut deal: Deal = load(ctx, &key).ok_or_else(|| err("UNKNOWN_OFFER", offer_id))?;
    if deal.status == OfferStatus::Sold {
        return Err(err("ALREADY_SOLD", offer_id));
    }
    let buyer = ctx.creator().id.clone();
    let Some(target) = deal.targeted.iter().find(|t| t.buyer == buyer).cloned() else {
        return Err(err("NOT_TARGETED", format!("{buyer} is not targeted by {offer_id}")));
    };
    deal.status = OfferStatus::Sold;
    deal.accepted = Some(target.clone());
    ctx.put(key, to_doc(&deal));
    Ok(Doc::map().with("price", target.price).with("channel", ctx.channel().name.clone()))
}
