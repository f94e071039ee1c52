mod common;

use std::collections::BTreeSet;

use common::*;
use provledger::chaincode::{animal_key, transfer_key, Animal, EventKind, TargetedPrice, TransferRecord};
use provledger::codec::Doc;
use provledger::membership::MAIN_CHANNEL;
use provledger::network::{Network, OfferRequest};

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn stored_animal(net: &Network, id: &str) -> Animal {
    let cs = net.query_channel(MAIN_CHANNEL).unwrap();
    cs.state.get(&animal_key(id)).unwrap().doc.to_serde().unwrap()
}

fn event(animal_id: &str, kind: &str, at: &str) -> Doc {
    Doc::map().with("animal_id", animal_id).with("kind", kind).with("detail", "IBR dose 1").with("at", at)
}

#[test]
fn register_animal_rules() {
    let mut net = demo();
    animal(&mut net, "farm-a", "cow-001");
    let cow = stored_animal(&net, "cow-001");
    assert_eq!(cow.events.len(), 1);
    assert_eq!(cow.events[0].kind, EventKind::Birth);
    assert_eq!(cow.farm_id, "farm-a");

    let args = Doc::map().with("animal_id", "cow-001").with("born_at", "2023-03-01");
    assert_eq!(code(net.submit_op("farm-b", "register_animal", args.clone())), "DUPLICATE_ANIMAL");
    let args = args.with("animal_id", "cow-002");
    assert_eq!(code(net.submit_op("proc-1", "register_animal", args)), "WRONG_ROLE");
}

#[test]
fn animal_events_append_in_order() {
    let mut net = demo();
    animal(&mut net, "farm-a", "cow-001");
    ok(&mut net, "farm-a", "record_animal_event", event("cow-001", "VACCINATION", "2023-04-01"));
    let cow = stored_animal(&net, "cow-001");
    assert_eq!(cow.events.len(), 2);
    assert_eq!(cow.events[1].kind, EventKind::Vaccination);
    assert_eq!(cow.events[1].detail, "IBR dose 1");

    let birth = event("cow-001", "BIRTH", "2023-05-01");
    assert_eq!(code(net.submit_op("farm-a", "record_animal_event", birth)), "BIRTH_IMMUTABLE");
    let foreign = event("cow-001", "MEDICINE", "2023-05-01");
    assert_eq!(code(net.submit_op("farm-b", "record_animal_event", foreign)), "NOT_OWNER");
    let early = event("cow-001", "LOCATION", "2023-03-15");
    assert_eq!(code(net.submit_op("farm-a", "record_animal_event", early)), "OUT_OF_ORDER");
    let missing = event("cow-404", "LOCATION", "2023-06-01");
    assert_eq!(code(net.submit_op("farm-a", "record_animal_event", missing)), "UNKNOWN_ANIMAL");
    let bad_date = event("cow-001", "LOCATION", "2023-13-01");
    assert_eq!(code(net.submit_op("farm-a", "record_animal_event", bad_date)), "BAD_ARGS");
}

#[test]
fn register_batch_rules() {
    let mut net = demo();
    animal(&mut net, "farm-a", "cow-001");
    animal(&mut net, "farm-b", "cow-b");
    milk(&mut net, "farm-a", "m1", &["cow-001"]);
    let batch = net.batch("m1").unwrap();
    assert_eq!(batch.origin_farms, set(&["farm-a"]));
    assert_eq!(batch.custody_history.len(), 1);
    assert_eq!(batch.custody_history[0].holder, "farm-a");
    assert_eq!(batch.custody_history[0].at, T0 as i64);
    assert_eq!(batch.rfid, "RFID-m1");

    let reuse = Doc::map().with("batch_id", "m1").with("source_animals", ids(&["cow-001"])).with("rfid", "x");
    assert_eq!(code(net.submit_op("farm-a", "register_batch", reuse.clone())), "DUPLICATE_BATCH");
    let foreign = reuse.with("batch_id", "m2").with("source_animals", ids(&["cow-b"]));
    assert_eq!(code(net.submit_op("farm-a", "register_batch", foreign)), "NOT_OWNER");
}

#[test]
fn single_origin_step_credits_one_token() {
    let mut net = demo();
    two_farm_milk(&mut net);
    assert_eq!(net.token_balance("farm-a").unwrap(), 0);
    let outcome = process(&mut net, "proc-1", &["m-a"], "cheese-1").unwrap();
    assert_eq!(net.token_balance("farm-a").unwrap(), 1);
    assert_eq!(net.token_balance("farm-b").unwrap(), 0);

    let record: TransferRecord = outcome.response.to_serde().unwrap();
    assert_eq!(record.source, "Lactate Carpati");
    assert_eq!(record.product_id, "cheese-1");
    assert_eq!(record.token, "tok-cheese-1");
    let main = net.membership().channel(MAIN_CHANNEL).unwrap();
    assert_eq!(record.receiver, main.pseudonym_of("proc-1"));
    assert_eq!(record.receiver.0.len(), 16);
    for identity in net.membership().identities() {
        assert_ne!(record.receiver.0, identity.display_name);
    }
    let stored = net.query_channel(MAIN_CHANNEL).unwrap().state.get(&transfer_key("cheese-1")).unwrap();
    assert_eq!(stored.doc, outcome.response);
}

#[test]
fn multi_origin_step_credits_each_farm_once() {
    let mut net = demo();
    two_farm_milk(&mut net);
    milk(&mut net, "farm-a", "m-a2", &["cow-a"]);
    ok(&mut net, "farm-a", "transfer_custody", Doc::map().with("batch_id", "m-a2").with("to", "proc-1"));

    process(&mut net, "proc-1", &["m-a", "m-a2", "m-b"], "blend").unwrap();
    assert_eq!(net.token_balance("farm-a").unwrap(), 1);
    assert_eq!(net.token_balance("farm-b").unwrap(), 1);
    assert_eq!(net.batch("blend").unwrap().origin_farms, set(&["farm-a", "farm-b"]));

    process(&mut net, "proc-1", &["blend"], "aged").unwrap();
    assert_eq!(net.batch("aged").unwrap().origin_farms, set(&["farm-a", "farm-b"]));
    assert_eq!(net.token_balance("farm-a").unwrap(), 2);
    assert_eq!(net.token_balance("farm-b").unwrap(), 2);
    let entry = net.token_entry("farm-b").unwrap();
    assert_eq!(entry.tokens, vec!["tok-aged".to_string(), "tok-blend".to_string()]);
}

#[test]
fn processing_preconditions() {
    let mut net = demo();
    two_farm_milk(&mut net);
    assert_eq!(code(process(&mut net, "proc-2", &["m-a"], "x")), "NOT_CUSTODIAN");
    assert_eq!(code(process(&mut net, "farm-a", &["m-a"], "x")), "WRONG_ROLE");
    assert_eq!(code(process(&mut net, "proc-1", &["m-a"], "m-b")), "DUPLICATE_BATCH");
    assert_eq!(code(process(&mut net, "proc-1", &["nope"], "x")), "UNKNOWN_BATCH");
    let to_consumer = process_args(&["m-a"], "x").with("receiver", "consumer");
    assert_eq!(code(net.submit_op("proc-1", "process_batch", to_consumer)), "BAD_RECIPIENT");
}

#[test]
fn receiver_names_the_next_custodian() {
    let mut net = demo();
    two_farm_milk(&mut net);
    let args = process_args(&["m-a"], "cheese-1").with("receiver", "trans-1");
    let outcome = ok(&mut net, "proc-1", "process_batch", args);
    let record: TransferRecord = outcome.response.to_serde().unwrap();
    let main = net.membership().channel(MAIN_CHANNEL).unwrap();
    assert_eq!(record.receiver, main.pseudonym_of("trans-1"));
    assert_eq!(net.batch("cheese-1").unwrap().custodian(), "trans-1");
}

#[test]
fn custody_chain_and_refusals() {
    let mut net = demo();
    two_farm_milk(&mut net);
    process(&mut net, "proc-1", &["m-a"], "cheese-1").unwrap();
    transfer(&mut net, "proc-1", "cheese-1", "trans-1").unwrap();
    transfer(&mut net, "trans-1", "cheese-1", "shop-1").unwrap();
    let batch = net.batch("cheese-1").unwrap();
    let holders: Vec<&str> = batch.custody_history.iter().map(|c| c.holder.as_str()).collect();
    assert_eq!(holders, ["proc-1", "trans-1", "shop-1"]);

    assert_eq!(code(transfer(&mut net, "proc-1", "cheese-1", "shop-2")), "NOT_CUSTODIAN");
    assert_eq!(code(transfer(&mut net, "shop-1", "cheese-1", "bank")), "BAD_RECIPIENT");
    assert_eq!(code(transfer(&mut net, "shop-1", "cheese-1", "ghost")), "UNKNOWN_IDENTITY");

    let report = net.trace_forward("cheese-1").unwrap();
    ok(&mut net, "auditor", "mark_recalled", Doc::map()
        .with("report", Doc::from_serde(&report).unwrap())
        .with("batch_ids", ids(&["cheese-1"])));
    assert_eq!(code(transfer(&mut net, "shop-1", "cheese-1", "shop-2")), "BATCH_RECALLED");
}

fn offer(net: &mut Network, offer_id: &str, batch: &str, targeted: Vec<TargetedPrice>) {
    let request = OfferRequest {
        offer_id: offer_id.into(),
        product_id: batch.into(),
        standard_price: 1000,
        targeted,
        settlement: Default::default(),
    };
    net.publish_offer("proc-1", request).unwrap();
}

#[test]
fn targeted_buyer_pays_targeted_price_on_deal_channel() {
    let mut net = demo();
    two_farm_milk(&mut net);
    process(&mut net, "proc-1", &["m-a"], "cheese-1").unwrap();
    let targeted = vec![TargetedPrice { buyer: "shop-1".into(), price: 900 }];
    offer(&mut net, "o1", "cheese-1", targeted);

    let accepted = net.accept_offer("shop-1", "o1").unwrap();
    assert_eq!(accepted.price, 900);
    assert_eq!(accepted.channel, "deal-o1");
    assert_eq!(accepted.outcomes[0].channel, "deal-o1");
    assert_eq!(net.batch("cheese-1").unwrap().custodian(), "shop-1");
    assert_eq!(code(net.accept_offer("shop-2", "o1")), "ALREADY_SOLD");

    let deal_tx = accepted.outcomes[0].tx_id;
    let bank = net.peer("peer-bank").unwrap();
    assert!(bank.channel("deal-o1").is_none());
    let main = bank.channel(MAIN_CHANNEL).unwrap();
    main.ledger
        .for_each_block(|b| {
            for env in &b.envelopes {
                assert_ne!(env.tx_id, deal_tx);
                assert_ne!(env.proposal.contract_op, "accept_deal");
                assert_ne!(env.proposal.contract_op, "publish_deal");
            }
        })
        .unwrap();
    for peer in ["peer-proc-1", "peer-shop-1"] {
        assert!(net.peer(peer).unwrap().channel("deal-o1").is_some(), "{peer}");
    }
}

#[test]
fn untargeted_buyer_pays_standard_price_on_main() {
    let mut net = demo();
    two_farm_milk(&mut net);
    process(&mut net, "proc-1", &["m-a"], "cheese-1").unwrap();
    let targeted = vec![TargetedPrice { buyer: "shop-1".into(), price: 900 }];
    offer(&mut net, "o1", "cheese-1", targeted);

    let accepted = net.accept_offer("shop-2", "o1").unwrap();
    assert_eq!(accepted.price, 1000);
    assert_eq!(accepted.channel, MAIN_CHANNEL);
    assert_eq!(net.batch("cheese-1").unwrap().custodian(), "shop-2");
    assert_eq!(code(net.accept_offer("shop-1", "o1")), "ALREADY_SOLD");
}

#[test]
fn offer_refusals() {
    let mut net = demo();
    two_farm_milk(&mut net);
    process(&mut net, "proc-1", &["m-a"], "cheese-1").unwrap();
    let request = OfferRequest {
        offer_id: "o1".into(),
        product_id: "m-b".into(),
        standard_price: 1000,
        targeted: vec![],
        settlement: Default::default(),
    };
    assert_eq!(code(net.publish_offer("proc-2", request.clone())), "NOT_CUSTODIAN");
    let negative = OfferRequest { standard_price: -1, product_id: "cheese-1".into(), ..request.clone() };
    assert_eq!(code(net.publish_offer("proc-1", negative)), "BAD_PRICE");
    assert_eq!(code(net.accept_offer("shop-1", "missing")), "UNKNOWN_OFFER");
}

#[test]
fn trace_back_examples() {
    let mut net = demo();
    two_farm_milk(&mut net);
    let raw = net.trace_back("m-a").unwrap();
    assert_eq!(raw.origin_farms, set(&["farm-a"]));
    assert!(raw.tree.is_empty());
    assert_eq!(raw.animal_events["cow-a"].len(), 1);

    process(&mut net, "proc-1", &["m-a", "m-b"], "c1").unwrap();
    process(&mut net, "proc-1", &["c1"], "p1").unwrap();
    let diamond = net.trace_back("p1").unwrap();
    assert_eq!(diamond.origin_farms, set(&["farm-a", "farm-b"]));
    assert_eq!(diamond.tree.len(), 3);
    assert_eq!(diamond.animal_events.keys().cloned().collect::<BTreeSet<_>>(), set(&["cow-a", "cow-b"]));

    milk(&mut net, "farm-a", "m-3", &["cow-a"]);
    ok(&mut net, "farm-a", "transfer_custody", Doc::map().with("batch_id", "m-3").with("to", "proc-1"));
    process(&mut net, "proc-1", &["m-3"], "s1").unwrap();
    process(&mut net, "proc-1", &["s1"], "s2").unwrap();
    process(&mut net, "proc-1", &["s2"], "s3").unwrap();
    let chain = net.trace_back("s3").unwrap();
    assert_eq!(chain.tree.len(), 3);
    assert!(chain.tree.iter().all(|e| e.step_id.len() == 64));
    assert_eq!(code(net.trace_back("nope")), "UNKNOWN_BATCH");
}

#[test]
fn trace_forward_examples() {
    let mut net = demo();
    two_farm_milk(&mut net);
    let report = net.trace_forward("farm-a").unwrap();
    assert_eq!(report.affected_batches, set(&["m-a"]));
    assert_eq!(report.holders["m-a"], "proc-1");

    process(&mut net, "proc-1", &["m-a"], "cheese").unwrap();
    process(&mut net, "proc-1", &["cheese"], "pack").unwrap();
    process(&mut net, "proc-1", &["m-b"], "yogurt").unwrap();
    let report = net.trace_forward("farm-a").unwrap();
    assert_eq!(report.affected_batches, set(&["m-a", "cheese", "pack"]));
    assert_eq!(report.generated_at_height, net.height(MAIN_CHANNEL).unwrap());
    let report = net.trace_forward("farm-b").unwrap();
    assert_eq!(report.affected_batches, set(&["m-b", "yogurt"]));
    assert_eq!(net.trace_forward("cheese").unwrap().affected_batches, set(&["cheese", "pack"]));
    assert_eq!(code(net.trace_forward("proc-1")), "UNKNOWN_ORIGIN");
    assert_eq!(code(net.trace_forward("nobody")), "UNKNOWN_ORIGIN");
}

#[test]
fn recall_blocks_only_selected_batches() {
    let mut net = demo();
    two_farm_milk(&mut net);
    process(&mut net, "proc-1", &["m-a"], "cheese").unwrap();
    process(&mut net, "proc-1", &["cheese"], "pack").unwrap();
    let report = net.trace_forward("farm-a").unwrap();
    assert_eq!(report.affected_batches.len(), 3);

    let outcome = net.recall("auditor", &report, &["cheese".to_string()]).unwrap();
    assert_eq!(outcome.validity, provledger::ledger::Validity::Valid);
    assert!(net.batch("cheese").unwrap().recalled);
    assert_eq!(code(process(&mut net, "proc-1", &["cheese"], "again")), "INPUT_RECALLED");
    assert_eq!(code(transfer(&mut net, "proc-1", "cheese", "shop-1")), "BATCH_RECALLED");
    transfer(&mut net, "proc-1", "pack", "shop-1").unwrap();
    process(&mut net, "proc-1", &["m-a"], "butter").unwrap();

    assert_eq!(code(net.recall("auditor", &report, &["m-b".to_string()])), "NOT_IN_REPORT");
    assert_eq!(code(net.recall("proc-1", &report, &["pack".to_string()])), "WRONG_ROLE");
}

#[test]
fn recall_rejects_forged_report() {
    let mut net = demo();
    two_farm_milk(&mut net);
    let mut report = net.trace_forward("farm-a").unwrap();
    report.affected_batches.insert("m-b".into());
    assert_eq!(code(net.recall("auditor", &report, &["m-b".to_string()])), "NOT_IN_REPORT");
}

#[test]
fn qr_round_trip_and_rejections() {
    let mut net = demo();
    two_farm_milk(&mut net);
    process(&mut net, "proc-1", &["m-a", "m-b"], "cheese").unwrap();
    let qr = net.encode_qr("cheese").unwrap();
    let text = qr.text();
    let trace = net.verify_qr(&text).unwrap();
    assert_eq!(trace.batch_id, "cheese");
    assert_eq!(trace.origin_farms, set(&["farm-a", "farm-b"]));

    let last = text.chars().last().unwrap();
    let flipped = format!("{}{}", &text[..text.len() - 1], if last == '0' { '1' } else { '0' });
    assert_eq!(code(net.verify_qr(&flipped)), "INVALID");
    assert_eq!(code(net.verify_qr(&text.replacen(':', "", 1))), "MALFORMED_PAYLOAD");
    assert_eq!(code(net.encode_qr("nope")), "UNKNOWN_BATCH");

    transfer(&mut net, "proc-1", "cheese", "shop-1").unwrap();
    let moved = net.encode_qr("cheese").unwrap();
    assert!(moved.block_no > qr.block_no);
    net.verify_qr(&moved.text()).unwrap();
    net.verify_qr(&text).unwrap();
}

#[test]
fn balances_count_steps() {
    let mut net = demo();
    two_farm_milk(&mut net);
    for k in 1..=5 {
        process(&mut net, "proc-1", &["m-a"], &format!("out-{k}")).unwrap();
        assert_eq!(net.token_balance("farm-a").unwrap(), k);
    }
    assert_eq!(code(net.token_balance("ghost")), "UNKNOWN_IDENTITY");
}
