use std::collections::{BTreeMap, VecDeque};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::codec::Doc;
use crate::ledger::Validity;
use crate::membership::Role;
use crate::network::{IdentitySpec, Network, NetworkError, TxRequest};

use super::config::{PeerSpec, SimConfig};
use super::scenario::{Action, ActionKind, Scenario};

/// Processing stages as (processor, process kind, receiver of the output).
pub const STAGES: [(&str, &str, &str); 3] = [
    ("proc-1", "separation", "proc-2"),
    ("proc-2", "cheesemaking", "proc-3"),
    ("proc-3", "packing", "shop-1"),
];

/// Share of batches per layer, in percent: raw milk, then each stage.
const LAYER_SHARE: [usize; 4] = [40, 25, 20, 15];
const ROUND_MS: u64 = 1000;
/// Inputs beyond the unused ones are drawn from this many recent rounds.
const WINDOW_ROUNDS: usize = 3;

fn farm_id(i: usize) -> String {
    format!("farm-{i}")
}

/// Network for chain workloads: `n_farms` farms plus the stage processors, a
/// shop and an auditor. Only proc-1 and proc-2 run peers.
pub fn workload_config(n_farms: usize, seed: u64) -> SimConfig {
    let peers = vec![
        PeerSpec { peer: "peer-1".into(), identity: "proc-1".into(), role: Role::Processor, display_name: None },
        PeerSpec { peer: "peer-2".into(), identity: "proc-2".into(), role: Role::Processor, display_name: None },
    ];
    let mut config = SimConfig::new(peers);
    config.identities = (0..n_farms)
        .map(|i| IdentitySpec::new(&farm_id(i), &format!("Farm {i}"), Role::Farm))
        .chain([
            IdentitySpec::new("proc-3", "proc-3", Role::Processor),
            IdentitySpec::new("shop-1", "shop-1", Role::Shop),
            IdentitySpec::new("auditor", "auditor", Role::Auditor),
        ])
        .collect();
    config.rng_seed = seed;
    config
}

struct Layer {
    quota: usize,
    made: usize,
    /// Batches usable as inputs, with the round they became usable.
    available: Vec<(String, usize)>,
    unused: VecDeque<usize>,
}

impl Layer {
    fn new(quota: usize) -> Self {
        Layer { quota, made: 0, available: Vec::new(), unused: VecDeque::new() }
    }

    fn add(&mut self, id: String, round: usize) {
        self.unused.push_back(self.available.len());
        self.available.push((id, round));
    }

    /// Up to `n` distinct inputs: unused batches first, then random picks
    /// from the recent window.
    fn pick(&mut self, n: usize, round: usize, rng: &mut ChaCha20Rng) -> Vec<String> {
        let mut chosen: Vec<usize> = Vec::with_capacity(n);
        while chosen.len() < n {
            match self.unused.pop_front() {
                Some(i) => chosen.push(i),
                None => break,
            }
        }
        let oldest = round.saturating_sub(WINDOW_ROUNDS);
        let start = self.available.partition_point(|(_, r)| *r < oldest);
        let window = start..self.available.len();
        let room = window.len().min(n);
        while chosen.len() < room {
            let i = rng.gen_range(window.clone());
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        if chosen.is_empty() {
            chosen.push(rng.gen_range(0..self.available.len()));
        }
        chosen.into_iter().map(|i| self.available[i].0.clone()).collect()
    }
}

/// A scenario that mints exactly `n_batches` batches in a provenance DAG.
///
/// Each farm registers one cow, then raw-milk batches from farms weighted
/// 1/k (k = 1..n_farms) are handed to proc-1 and flow through [`STAGES`].
/// Every processing step takes `fanout` distinct inputs when enough are
/// available, preferring batches no step has used yet, so `fanout == 1`
/// yields pure chains. Actions are grouped into rounds 1 s apart; inputs
/// always come from earlier rounds.
pub fn generate_chain_workload(seed: u64, n_farms: usize, n_batches: usize, fanout: usize) -> Scenario {
    assert!(n_farms > 0 && n_batches > 0 && fanout > 0, "workload parameters must be positive");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (1..=n_farms).map(|k| 1.0 / k as f64).collect();
    let farms = WeightedIndex::new(&weights).expect("positive weights");

    let stage_quota: Vec<usize> = LAYER_SHARE[1..].iter().map(|s| n_batches * s / 100).collect();
    let raw_quota = n_batches - stage_quota.iter().sum::<usize>();
    let mut layers: Vec<Layer> = std::iter::once(raw_quota).chain(stage_quota).map(Layer::new).collect();
    let per_round = (n_batches / 40).max(10);

    let mut actions = Vec::new();
    for i in 0..n_farms {
        let args = Doc::map().with("animal_id", format!("cow-{i}")).with("born_at", "2023-01-01");
        actions.push(Action::submit(0, &farm_id(i), "register_animal", args));
    }

    let mut made = 0;
    let mut round = 1;
    let mut to_transfer: Vec<(String, String)> = Vec::new();
    while made < n_batches || !to_transfer.is_empty() {
        let at = round as u64 * ROUND_MS;
        let mut fresh: Vec<(usize, String)> = Vec::new();
        for (farm, id) in std::mem::take(&mut to_transfer) {
            let args = Doc::map().with("batch_id", id.as_str()).with("to", STAGES[0].0);
            actions.push(Action::submit(at, &farm, "transfer_custody", args));
            fresh.push((0, id));
        }
        let mut emitted = 0;
        while emitted < per_round && made < n_batches {
            let eligible = (0..layers.len())
                .filter(|&s| layers[s].made < layers[s].quota && (s == 0 || !layers[s - 1].available.is_empty()));
            let Some(s) = eligible.min_by(|&a, &b| {
                let fill = |l: &Layer| l.made as f64 / l.quota as f64;
                fill(&layers[a]).total_cmp(&fill(&layers[b]))
            }) else {
                break;
            };
            let index = layers[s].made;
            if s == 0 {
                let f = farms.sample(&mut rng);
                let id = format!("raw-{index}");
                let args = Doc::map()
                    .with("batch_id", id.as_str())
                    .with("source_animals", Doc::from(vec![format!("cow-{f}")]))
                    .with("rfid", format!("E200{index:08X}"));
                actions.push(Action::submit(at, &farm_id(f), "register_batch", args));
                to_transfer.push((farm_id(f), id));
            } else {
                let (processor, kind, receiver) = STAGES[s - 1];
                let inputs = layers[s - 1].pick(fanout, round, &mut rng);
                let id = format!("s{s}-{index}");
                let args = Doc::map()
                    .with("inputs", Doc::from(inputs))
                    .with("output_id", id.as_str())
                    .with("process_kind", kind)
                    .with("receiver", receiver);
                actions.push(Action::submit(at, processor, "process_batch", args));
                fresh.push((s, id));
            }
            layers[s].made += 1;
            made += 1;
            emitted += 1;
        }
        for (s, id) in fresh {
            layers[s].add(id, round);
        }
        round += 1;
    }
    Scenario::new(&format!("chain-{seed}-{n_farms}-{n_batches}-{fanout}"), actions)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ApplyReport {
    pub valid: usize,
    pub invalid: BTreeMap<String, usize>,
    pub refused: usize,
}

/// Runs the submissions of `scenario` through the synchronous network, one
/// batch per distinct `at`. Other actions are skipped.
pub fn apply_scenario(net: &mut Network, scenario: &Scenario) -> Result<ApplyReport, NetworkError> {
    let mut report = ApplyReport::default();
    let mut rounds: BTreeMap<u64, Vec<TxRequest>> = BTreeMap::new();
    for action in &scenario.actions {
        if let ActionKind::Submit { actor, op, channel, args } = &action.kind {
            let request = TxRequest::new(actor, channel, op, args.clone());
            rounds.entry(action.at).or_default().push(request);
        }
    }
    for (at, requests) in rounds {
        net.set_time(at);
        for result in net.submit_batch(requests) {
            match result {
                Ok(o) if o.validity == Validity::Valid => report.valid += 1,
                Ok(o) => *report.invalid.entry(o.validity.as_str().to_string()).or_default() += 1,
                Err(NetworkError::Tx(_)) => report.refused += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}
