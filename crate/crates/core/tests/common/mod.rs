#![allow(dead_code)]

use provledger::codec::Doc;
use provledger::ledger::Validity;
use provledger::network::{Network, NetworkConfig, NetworkError, Storage, TxOutcome};

pub const T0: u64 = 1_700_000_000_000;

pub fn demo() -> Network {
    let mut net = Network::bootstrap(NetworkConfig::demo(), Storage::Memory).unwrap();
    net.set_time(T0);
    net
}

pub fn ok(net: &mut Network, actor: &str, op: &str, args: Doc) -> TxOutcome {
    let outcome = net.submit_op(actor, op, args).unwrap_or_else(|e| panic!("{op} by {actor}: {e}"));
    assert_eq!(outcome.validity, Validity::Valid, "{op} by {actor}");
    outcome
}

pub fn code<T: std::fmt::Debug>(result: Result<T, NetworkError>) -> String {
    result.expect_err("expected a refusal").code().to_string()
}

pub fn ids(items: &[&str]) -> Doc {
    Doc::from(items.iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

pub fn animal(net: &mut Network, farm: &str, animal_id: &str) {
    let args = Doc::map().with("animal_id", animal_id).with("born_at", "2023-03-01");
    ok(net, farm, "register_animal", args);
}

pub fn milk(net: &mut Network, farm: &str, batch_id: &str, animals: &[&str]) {
    let args = Doc::map()
        .with("batch_id", batch_id)
        .with("source_animals", ids(animals))
        .with("rfid", format!("RFID-{batch_id}"));
    ok(net, farm, "register_batch", args);
}

pub fn transfer(net: &mut Network, holder: &str, batch_id: &str, to: &str) -> Result<TxOutcome, NetworkError> {
    net.submit_op(holder, "transfer_custody", Doc::map().with("batch_id", batch_id).with("to", to))
}

pub fn process_args(inputs: &[&str], output: &str) -> Doc {
    Doc::map().with("inputs", ids(inputs)).with("output_id", output).with("process_kind", "cheese")
}

pub fn process(net: &mut Network, processor: &str, inputs: &[&str], output: &str) -> Result<TxOutcome, NetworkError> {
    net.submit_op(processor, "process_batch", process_args(inputs, output))
}

/// Farm A and farm B each register one cow and one raw milk batch (`m-a`,
/// `m-b`), both handed to proc-1.
pub fn two_farm_milk(net: &mut Network) {
    animal(net, "farm-a", "cow-a");
    animal(net, "farm-b", "cow-b");
    milk(net, "farm-a", "m-a", &["cow-a"]);
    milk(net, "farm-b", "m-b", &["cow-b"]);
    ok(net, "farm-a", "transfer_custody", Doc::map().with("batch_id", "m-a").with("to", "proc-1"));
    ok(net, "farm-b", "transfer_custody", Doc::map().with("batch_id", "m-b").with("to", "proc-1"));
}
